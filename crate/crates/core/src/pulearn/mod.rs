//! Bilinear relation scorer, positive-unlabeled losses with the witness
//! regularizer, gradient validation and the three-stage trainer.

mod check;
mod train;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::sigmoid;
use crate::phrasebank::{Polarity, WitnessFamily};
use crate::probes::{probe_gradient, probe_vector, PairMeasurements, ProbeParams};

pub use check::{gradient_report, TermCheck};
pub use train::{
    best_recall_within, logs_to_jsonl, recovery_at, CandidateEntry, EpochLog, PairEntry, Recovery, Stage, TrainOutput,
    Trainer, TrainerConfig, TrainingError, TrainingSet, TriageCounts, TriagedCandidate,
};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
pub const HINGE_MARGIN: f64 = 0.2;
/// Number of trainable probe parameters appended to the scorer's.
pub const PROBE_PARAMS: usize = 6;

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// A batch-mean loss; `empty` marks a batch with no items (value 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub empty: bool,
}

impl LossValue {
    fn mean(values: impl ExactSizeIterator<Item = f64>) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                value: 0.0,
                empty: true,
            };
        }
        Self {
            value: values.sum::<f64>() / n as f64,
            empty: false,
        }
    }
}

/// Mean `-log p` over annotated positives.
pub fn loss_obs(probs: &[f64]) -> LossValue {
    LossValue::mean(probs.iter().map(|p| -clamp_p(*p).ln()))
}

/// Mean `-Q log p` over `(p, Q)` missing-positive entries.
pub fn loss_miss(items: &[(f64, f64)]) -> LossValue {
    LossValue::mean(items.iter().map(|(p, q)| -q * clamp_p(*p).ln()))
}

/// Mean `-(1 - Q) log(1 - p)` over `(p, Q)` negative entries.
pub fn loss_neg(items: &[(f64, f64)]) -> LossValue {
    LossValue::mean(items.iter().map(|(p, q)| -(1.0 - q) * (1.0 - clamp_p(*p)).ln()))
}

/// Mean negative binary entropy in nats; minimal at `p = 0.5`.
pub fn loss_unc(probs: &[f64]) -> LossValue {
    LossValue::mean(probs.iter().map(|p| {
        let p = clamp_p(*p);
        p * p.ln() + (1.0 - p) * (1.0 - p).ln()
    }))
}

/// One item's loss as a function of its logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    Observed,
    Missing(f64),
    Negative(f64),
    Uncertain,
}

impl Term {
    /// Value and derivative with respect to the logit. The derivative is
    /// zero where the probability clamp is active.
    pub fn eval(self, s: f64) -> (f64, f64) {
        let p = sigmoid(s);
        let pc = clamp_p(p);
        let live = if pc == p { p * (1.0 - p) } else { 0.0 };
        match self {
            Term::Observed => (-pc.ln(), -live / pc),
            Term::Missing(q) => (-q * pc.ln(), -q * live / pc),
            Term::Negative(q) => (-(1.0 - q) * (1.0 - pc).ln(), (1.0 - q) * live / (1.0 - pc)),
            Term::Uncertain => {
                let v = pc * pc.ln() + (1.0 - pc) * (1.0 - pc).ln();
                (v, (pc.ln() - (1.0 - pc).ln()) * live)
            }
        }
    }
}

/// Per-dimension affine normalization of raw pair inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation per dimension; constant dimensions keep
    /// unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            var.iter_mut()
                .zip(r)
                .zip(&mean)
                .for_each(|((v, x), m)| *v += (x - m).powi(2) / n);
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// `s = (A p) . (B t) + b` over a standardized pair input `p` and a phrase
/// embedding `t`. Parameters are stored flat as `A | B | b`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScorer {
    pub rank: usize,
    pub pair_dim: usize,
    pub text_dim: usize,
    pub params: Vec<f64>,
    pub standardizer: Standardizer,
}

impl RelationScorer {
    pub fn param_count(rank: usize, pair_dim: usize, text_dim: usize) -> usize {
        rank * (pair_dim + text_dim) + 1
    }

    /// Gaussian init with standard deviation `1 / sqrt(fan_in)` and zero bias.
    pub fn new(rank: usize, pair_dim: usize, text_dim: usize, standardizer: Standardizer, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(rank, pair_dim, text_dim));
        for fan_in in [pair_dim, text_dim] {
            let n = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).expect("valid normal");
            params.extend((0..rank * fan_in).map(|_| n.sample(&mut rng)));
        }
        params.push(0.0);
        Self {
            rank,
            pair_dim,
            text_dim,
            params,
            standardizer,
        }
    }

    fn split(&self) -> (&[f64], &[f64], f64) {
        let na = self.rank * self.pair_dim;
        let nb = self.rank * self.text_dim;
        (&self.params[..na], &self.params[na..na + nb], self.params[na + nb])
    }

    fn project(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
        m.chunks_exact(cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `A p` for a standardized pair input.
    pub fn project_pair(&self, p: &[f64]) -> Vec<f64> {
        Self::project(self.split().0, self.pair_dim, p)
    }

    /// `B t` for a phrase embedding.
    pub fn project_text(&self, t: &[f64]) -> Vec<f64> {
        Self::project(self.split().1, self.text_dim, t)
    }

    pub fn bias(&self) -> f64 {
        self.split().2
    }

    /// Logit for a standardized pair input.
    pub fn score(&self, p: &[f64], t: &[f64]) -> f64 {
        let (zp, zt) = (self.project_pair(p), self.project_text(t));
        zp.iter().zip(&zt).map(|(a, b)| a * b).sum::<f64>() + self.bias()
    }

    /// Logit for a raw pair input.
    pub fn score_raw(&self, raw: &[f64], t: &[f64]) -> f64 {
        self.score(&self.standardizer.apply(raw), t)
    }

    pub fn probability(&self, p: &[f64], t: &[f64]) -> f64 {
        sigmoid(self.score(p, t))
    }
}

/// Student or teacher: scorer parameters followed by the trainable probe
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub scorer: RelationScorer,
    pub probe: ProbeParams,
}

impl Model {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.scorer.params.clone();
        v.extend(self.probe.trainable());
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let n = self.scorer.params.len();
        assert_eq!(v.len(), n + PROBE_PARAMS, "parameter vector length");
        self.scorer.params.copy_from_slice(&v[..n]);
        let mut t = [0.0; PROBE_PARAMS];
        t.copy_from_slice(&v[n..]);
        self.probe.set_trainable(&t);
    }

    pub fn with_flat(&self, v: &[f64]) -> Self {
        let mut m = self.clone();
        m.set_flat(v);
        m
    }
}

/// A scored `(pair, phrase)` lookup into a [`FeatureTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Item {
    pub pair: usize,
    pub text: usize,
}

/// Standardized pair inputs and phrase embeddings.
#[derive(Debug, Clone, Copy)]
pub struct FeatureTable<'a> {
    pub pairs: &'a [Vec<f64>],
    pub texts: &'a [Vec<f64>],
}

/// Probe scores of an annotated positive and a background pair of the same
/// family and direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingePair {
    pub family: WitnessFamily,
    pub polarity: Polarity,
    pub positive: PairMeasurements,
    pub negative: PairMeasurements,
}

/// A directed annotated positive and the reversed pair's index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolePair {
    pub forward: Item,
    pub reverse_pair: usize,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaphrasePair {
    pub item: Item,
    pub paraphrase: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub observed: Vec<Item>,
    /// Stage-1 background pairs, scored as negatives with `Q = 0`.
    pub background: Vec<Item>,
    pub missing: Vec<(Item, f64)>,
    pub negative: Vec<(Item, f64)>,
    pub uncertain: Vec<Item>,
    pub hinge: Vec<HingePair>,
    pub role: Vec<RolePair>,
    /// `S_mv` of annotated positives seen from at least two views.
    pub stability: Vec<f64>,
    pub paraphrase: Vec<ParaphrasePair>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WitnessParts {
    pub hinge: f64,
    pub role: f64,
    pub stability: f64,
    pub paraphrase: f64,
}

impl WitnessParts {
    pub fn total(&self) -> f64 {
        self.hinge + self.role + self.stability + self.paraphrase
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub obs: LossValue,
    pub background: LossValue,
    pub miss: LossValue,
    pub neg: LossValue,
    pub unc: LossValue,
    pub wit: WitnessParts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lambdas {
    pub miss: f64,
    pub neg: f64,
    pub unc: f64,
    pub wit: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            miss: 1.0,
            neg: 0.5,
            unc: 0.1,
            wit: 0.1,
        }
    }
}

impl Lambdas {
    pub const ZERO: Lambdas = Lambdas {
        miss: 0.0,
        neg: 0.0,
        unc: 0.0,
        wit: 0.0,
    };

    pub fn is_valid(&self) -> bool {
        [self.miss, self.neg, self.unc, self.wit]
            .iter()
            .all(|l| l.is_finite() && *l >= 0.0)
    }
}

/// `L_obs + L_bg + lm L_miss + ln L_neg + lu L_unc + lw L_wit`.
pub fn total_loss(c: &LossComponents, l: &Lambdas) -> f64 {
    c.obs.value
        + c.background.value
        + l.miss * c.miss.value
        + l.neg * c.neg.value
        + l.unc * c.unc.value
        + l.wit * c.wit.total()
}

/// Hinge over probe scores; returns the value and its gradient in the
/// trainable probe parameters.
pub fn loss_hinge(pairs: &[HingePair], params: &ProbeParams, margin: f64) -> (f64, [f64; PROBE_PARAMS]) {
    let mut grad = [0.0; PROBE_PARAMS];
    if pairs.is_empty() {
        return (0.0, grad);
    }
    let n = pairs.len() as f64;
    let mut value = 0.0;
    for h in pairs {
        let k = h.family.index();
        let qp = probe_vector(&h.positive, params, h.polarity).q[k];
        let qn = probe_vector(&h.negative, params, h.polarity).q[k];
        let slack = margin - (qp - qn);
        if slack > 0.0 {
            value += slack / n;
            let (gp, gn) = (
                probe_gradient(&h.positive, params, h.family),
                probe_gradient(&h.negative, params, h.family),
            );
            for c in 0..PROBE_PARAMS {
                grad[c] -= (gp[c] - gn[c]) / n;
            }
        }
    }
    (value, grad)
}

/// Logits for the items touched by a batch, with per-item gradient
/// accumulation back into `A`, `B` and `b`.
struct Scoring<'a> {
    scorer: &'a RelationScorer,
    table: FeatureTable<'a>,
    zp: BTreeMap<usize, Vec<f64>>,
    zt: BTreeMap<usize, Vec<f64>>,
    dzp: BTreeMap<usize, Vec<f64>>,
    dzt: BTreeMap<usize, Vec<f64>>,
    dbias: f64,
}

impl<'a> Scoring<'a> {
    fn new(scorer: &'a RelationScorer, table: FeatureTable<'a>) -> Self {
        Self {
            scorer,
            table,
            zp: BTreeMap::new(),
            zt: BTreeMap::new(),
            dzp: BTreeMap::new(),
            dzt: BTreeMap::new(),
            dbias: 0.0,
        }
    }

    fn score(&mut self, it: Item) -> f64 {
        let (s, t) = (self.scorer, self.table);
        let zp = self
            .zp
            .entry(it.pair)
            .or_insert_with(|| s.project_pair(&t.pairs[it.pair]));
        let zt = self
            .zt
            .entry(it.text)
            .or_insert_with(|| s.project_text(&t.texts[it.text]));
        zp.iter().zip(zt.iter()).map(|(a, b)| a * b).sum::<f64>() + s.bias()
    }

    /// Adds `g * ds/dtheta` for an item already scored.
    fn push(&mut self, it: Item, g: f64) {
        if g == 0.0 {
            return;
        }
        let r = self.scorer.rank;
        let zt = &self.zt[&it.text];
        let zp = &self.zp[&it.pair];
        let dp = self.dzp.entry(it.pair).or_insert_with(|| vec![0.0; r]);
        dp.iter_mut().zip(zt).for_each(|(d, z)| *d += g * z);
        let dt = self.dzt.entry(it.text).or_insert_with(|| vec![0.0; r]);
        dt.iter_mut().zip(zp).for_each(|(d, z)| *d += g * z);
        self.dbias += g;
    }

    fn gradient(&self) -> Vec<f64> {
        let s = self.scorer;
        let (pd, td, r) = (s.pair_dim, s.text_dim, s.rank);
        let mut g = vec![0.0; s.params.len()];
        for (pair, dz) in &self.dzp {
            let x = &self.table.pairs[*pair];
            for (row, d) in dz.iter().enumerate() {
                let dst = &mut g[row * pd..(row + 1) * pd];
                dst.iter_mut().zip(x).for_each(|(o, xi)| *o += d * xi);
            }
        }
        let off = r * pd;
        for (text, dz) in &self.dzt {
            let x = &self.table.texts[*text];
            for (row, d) in dz.iter().enumerate() {
                let dst = &mut g[off + row * td..off + (row + 1) * td];
                dst.iter_mut().zip(x).for_each(|(o, xi)| *o += d * xi);
            }
        }
        g[off + r * td] = self.dbias;
        g
    }
}

fn mean_term(sc: &mut Scoring<'_>, items: &[(Item, Term)], weight: f64) -> LossValue {
    if items.is_empty() {
        return LossValue {
            value: 0.0,
            empty: true,
        };
    }
    let n = items.len() as f64;
    let mut total = 0.0;
    for (it, term) in items {
        let (v, d) = term.eval(sc.score(*it));
        total += v;
        sc.push(*it, weight * d / n);
    }
    LossValue {
        value: total / n,
        empty: false,
    }
}

/// Loss components and the gradient of [`total_loss`] with respect to
/// [`Model::flat`].
pub fn evaluate(
    model: &Model,
    table: FeatureTable<'_>,
    batch: &Batch,
    lambdas: &Lambdas,
    margin: f64,
) -> (LossComponents, Vec<f64>) {
    let mut sc = Scoring::new(&model.scorer, table);
    let tag = |v: &[Item], t: Term| v.iter().map(|i| (*i, t)).collect::<Vec<_>>();
    let obs = mean_term(&mut sc, &tag(&batch.observed, Term::Observed), 1.0);
    let background = mean_term(&mut sc, &tag(&batch.background, Term::Negative(0.0)), 1.0);
    let miss: Vec<_> = batch.missing.iter().map(|(i, q)| (*i, Term::Missing(*q))).collect();
    let miss = mean_term(&mut sc, &miss, lambdas.miss);
    let neg: Vec<_> = batch.negative.iter().map(|(i, q)| (*i, Term::Negative(*q))).collect();
    let neg = mean_term(&mut sc, &neg, lambdas.neg);
    let unc = mean_term(&mut sc, &tag(&batch.uncertain, Term::Uncertain), lambdas.unc);

    let lw = lambdas.wit;
    let mut wit = WitnessParts::default();
    if !batch.role.is_empty() {
        let n = batch.role.len() as f64;
        for rp in &batch.role {
            let rev = Item {
                pair: rp.reverse_pair,
                text: rp.forward.text,
            };
            let delta = sc.score(rp.forward) - sc.score(rev);
            let sg = sigmoid(delta);
            let r = sg.powf(rp.sensitivity);
            wit.role += (1.0 - r).powi(2) / n;
            let d = -2.0 * (1.0 - r) * rp.sensitivity * r * (1.0 - sg) * lw / n;
            sc.push(rp.forward, d);
            sc.push(rev, -d);
        }
    }
    if !batch.stability.is_empty() {
        let n = batch.stability.len() as f64;
        wit.stability = batch.stability.iter().map(|s| (1.0 - s).powi(2)).sum::<f64>() / n;
    }
    if !batch.paraphrase.is_empty() {
        let n = batch.paraphrase.len() as f64;
        for pp in &batch.paraphrase {
            let alt = Item {
                pair: pp.item.pair,
                text: pp.paraphrase,
            };
            let diff = sc.score(pp.item) - sc.score(alt);
            wit.paraphrase += diff * diff / n;
            let d = 2.0 * diff * lw / n;
            sc.push(pp.item, d);
            sc.push(alt, -d);
        }
    }
    let (hinge, hinge_grad) = loss_hinge(&batch.hinge, &model.probe, margin);
    wit.hinge = hinge;

    let mut grad = sc.gradient();
    grad.extend(hinge_grad.iter().map(|g| lw * g));
    (
        LossComponents {
            obs,
            background,
            miss,
            neg,
            unc,
            wit,
        },
        grad,
    )
}

/// Largest relative error between `f`'s analytic gradient and central finite
/// differences over every coordinate. Coordinates whose gradients are both
/// below `1e-6` in magnitude are compared on that absolute scale.
pub fn grad_check(params: &[f64], f: impl Fn(&[f64]) -> (f64, Vec<f64>), eps: f64) -> f64 {
    assert!(eps > 1e-8 && eps < 1e-3, "eps must lie in (1e-8, 1e-3)");
    let (_, analytic) = f(params);
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        x[k] = params[k] + eps;
        let up = f(&x).0;
        x[k] = params[k] - eps;
        let down = f(&x).0;
        x[k] = params[k];
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    worst
}

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint holds {got} bytes, header promises {expected}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub rank: usize,
    pub pair_dim: usize,
    pub text_dim: usize,
    pub n_params: usize,
    pub probe: ProbeParams,
    pub standardizer: Standardizer,
}

/// JSON header and little-endian `f64` parameter bytes.
pub fn save_checkpoint(model: &Model, config_hash: &str) -> (String, Vec<u8>) {
    let s = &model.scorer;
    let header = CheckpointHeader {
        kind: "scorer".into(),
        schema_version: crate::scenekit::SCHEMA_VERSION,
        config_hash: config_hash.into(),
        rank: s.rank,
        pair_dim: s.pair_dim,
        text_dim: s.text_dim,
        n_params: s.params.len(),
        probe: model.probe.clone(),
        standardizer: s.standardizer.clone(),
    };
    let bytes = s.params.iter().flat_map(|p| p.to_le_bytes()).collect();
    (serde_json::to_string_pretty(&header).expect("header serializes"), bytes)
}

pub fn load_checkpoint(header: &str, bytes: &[u8]) -> Result<(Model, CheckpointHeader), CheckpointError> {
    let h: CheckpointHeader = serde_json::from_str(header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if h.kind != "scorer" || h.n_params != RelationScorer::param_count(h.rank, h.pair_dim, h.text_dim) {
        return Err(CheckpointError::Header("inconsistent scorer shape".into()));
    }
    if bytes.len() != h.n_params * 8 {
        return Err(CheckpointError::Length {
            expected: h.n_params * 8,
            got: bytes.len(),
        });
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let model = Model {
        scorer: RelationScorer {
            rank: h.rank,
            pair_dim: h.pair_dim,
            text_dim: h.text_dim,
            params,
            standardizer: h.standardizer.clone(),
        },
        probe: h.probe.clone(),
    };
    Ok((model, h))
}
