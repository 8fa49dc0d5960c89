//! Stage functions behind the command line. Every stage is a function of
//! the resolved [`PipelineConfig`] and its inputs, so fixed seeds give
//! identical outputs at any thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auditkit::AuditError;
use crate::decode::{decode_scene, DecodeConfig, DecodeError, SceneGraph, ScoredCandidate};
use crate::geom::sigmoid;
use crate::hashing::derive_seed;
use crate::oracle::TruthOracle;
use crate::pairprop::{
    pair_features, propose_scene, PairError, PairFeatures, ProposerModel, RelationCandidate, DEFAULT_K, PAIR_INPUT_DIM,
};
use crate::phrasebank::{shipped_pool, Lexicon, PhrasePool, RelationPhrase, EMBED_DIM};
use crate::probes::ProbeParams;
use crate::pulearn::{
    best_recall_within, recovery_at, Model, Recovery, TrainOutput, Trainer, TrainerConfig, TrainingError,
};
use crate::scenekit::{generate_scene, GenerateError, LabelStatus, Scene, SceneSpec};
use crate::verifier::{
    estimate_uncertainty_with, perturbed_measurements, triage as triage_one, witness_quality, Decision, TriageDecision,
};
use crate::viewwit::{
    NullPrior, OracleNoiseConfig, OracleNoisyScorer, WitnessEngine, WitnessError, WitnessParams, WitnessRecord,
    WitnessTrace,
};

mod artifact;
mod audit;
mod workspace;

pub use artifact::{read_json, read_jsonl, write_json, write_jsonl, ArtifactHeader, ARTIFACT_SCHEMA};
pub use audit::{
    audit_methods, audit_summary, cluster_frequency, method_from_graphs, method_from_triage, simulate_annotations,
    wilson_interval, AuditConfig, AuditSummary, OracleCheck, SimulatedAnnotators,
};
pub use workspace::{Workspace, METHODS_AUDITED, SCENE_MANIFEST};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{kind}: {message}")]
    Artifact { kind: String, message: String },
    #[error("{kind} was written under config {found}, current config is {expected}; pass --force to use it anyway")]
    HashMismatch {
        kind: String,
        expected: String,
        found: String,
    },
    #[error("missing input {0}")]
    MissingInput(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Witness(#[from] WitnessError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

impl PipelineError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Artifact { .. } => "artifact",
            Self::HashMismatch { .. } => "hash_mismatch",
            Self::MissingInput(_) => "missing_input",
            Self::Io { .. } => "io",
            Self::Generate(_) => "generate",
            Self::Pair(_) => "pair",
            Self::Witness(_) => "witness",
            Self::Training(_) => "training",
            Self::Decode(_) => "decode",
            Self::Audit(_) => "audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposerConfig {
    pub dim: usize,
    pub k: usize,
    /// Cosine similarity times this scale gives the role logits used
    /// before training.
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            k: DEFAULT_K,
            logit_scale: 4.0,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeStageConfig {
    #[serde(flatten)]
    pub decode: DecodeConfig,
    /// Candidates below this classifier logit are not decoded.
    pub min_logit: f64,
}

impl Default for DecodeStageConfig {
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            min_logit: 0.0,
        }
    }
}

/// Everything a run depends on. Its hash is stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scenes: usize,
    pub scene: SceneSpec,
    pub proposer: ProposerConfig,
    pub witness: WitnessParams,
    pub probe: ProbeParams,
    pub rgb: OracleNoiseConfig,
    pub trainer: TrainerConfig,
    pub decode: DecodeStageConfig,
    pub audit: AuditConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scenes: 20,
            scene: SceneSpec::default(),
            proposer: ProposerConfig::default(),
            witness: WitnessParams::default(),
            probe: ProbeParams::default(),
            rgb: OracleNoiseConfig::default(),
            trainer: TrainerConfig::default(),
            decode: DecodeStageConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn hash(&self) -> String {
        crate::config_hash(self)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.scenes == 0 {
            return Err(PipelineError::Config("scenes must be at least 1".into()));
        }
        if self.proposer.dim == 0 || self.proposer.k == 0 {
            return Err(PipelineError::Config("proposer dim and k must be positive".into()));
        }
        if !(self.proposer.logit_scale.is_finite() && self.proposer.logit_scale > 0.0) {
            return Err(PipelineError::Config("proposer logit_scale must be positive".into()));
        }
        if self.decode.min_logit.is_nan() {
            return Err(PipelineError::Config("decode min_logit is NaN".into()));
        }
        self.trainer.validate()?;
        self.decode.decode.validate()?;
        self.audit.validate()
    }

    pub fn scene_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, &[k as u64])
    }
}

/// Resources shared by the stages.
pub struct Context {
    pub lexicon: Lexicon,
    pub pool: PhrasePool,
    pub rgb: OracleNoisyScorer,
    pub proposer: ProposerModel,
}

impl Context {
    pub fn new(config: &PipelineConfig) -> Self {
        let lexicon = Lexicon::shipped();
        let pool = shipped_pool(&lexicon);
        let p = &config.proposer;
        Self {
            rgb: OracleNoisyScorer::new(lexicon.clone(), config.rgb),
            proposer: ProposerModel::random(p.dim, PAIR_INPUT_DIM, EMBED_DIM, p.k, p.seed),
            lexicon,
            pool,
        }
    }

    fn engines<'a>(
        &'a self,
        scenes: &'a [Scene],
        null: &'a NullPrior,
        config: &PipelineConfig,
        probe: &ProbeParams,
    ) -> Result<Vec<WitnessEngine<'a>>, PipelineError> {
        Ok(scenes
            .par_iter()
            .map(|s| WitnessEngine::new(s, &self.pool, &self.rgb, null, config.witness, probe.clone()))
            .collect::<Result<_, _>>()?)
    }
}

pub fn synth(config: &PipelineConfig) -> Result<Vec<Scene>, PipelineError> {
    config.validate()?;
    Ok((0..config.scenes)
        .into_par_iter()
        .map(|k| generate_scene(&config.scene, config.scene_seed(k)))
        .collect::<Result<_, _>>()?)
}

pub fn propose(ctx: &Context, scenes: &[Scene]) -> Result<Vec<RelationCandidate>, PipelineError> {
    let per: Vec<Vec<RelationCandidate>> = scenes
        .par_iter()
        .map(|s| propose_scene(s, &ctx.pool, &ctx.proposer))
        .collect::<Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Pair features of both directions, memoized per scene.
struct PairCache<'s> {
    scene: &'s Scene,
    map: BTreeMap<(u32, u32), PairFeatures>,
}

impl<'s> PairCache<'s> {
    fn new(scene: &'s Scene) -> Self {
        Self {
            scene,
            map: BTreeMap::new(),
        }
    }

    fn get(&mut self, i: u32, j: u32) -> Result<&PairFeatures, PairError> {
        if !self.map.contains_key(&(i, j)) {
            let f = pair_features(self.scene, i, j)?;
            self.map.insert((i, j), f);
        }
        Ok(&self.map[&(i, j)])
    }

    fn both(&mut self, i: u32, j: u32) -> Result<(PairFeatures, PairFeatures), PairError> {
        Ok((self.get(i, j)?.clone(), self.get(j, i)?.clone()))
    }
}

fn group_by_scene<'a, T>(
    scenes: &[Scene],
    items: &'a [T],
    scene_of: impl Fn(&T) -> &str,
) -> Result<Vec<Vec<&'a T>>, PipelineError> {
    let index: BTreeMap<&str, usize> = scenes.iter().enumerate().map(|(k, s)| (s.name.as_str(), k)).collect();
    let mut out: Vec<Vec<&T>> = vec![Vec::new(); scenes.len()];
    for it in items {
        let name = scene_of(it);
        let k = index
            .get(name)
            .ok_or_else(|| PipelineError::MissingInput(format!("scene {name}")))?;
        out[*k].push(it);
    }
    Ok(out)
}

fn phrase<'p>(pool: &'p PhrasePool, name: &str) -> Result<&'p RelationPhrase, PipelineError> {
    pool.get(name)
        .ok_or_else(|| PipelineError::Witness(WitnessError::UnknownPhrase(name.into())))
}

/// Witness records of the unannotated candidates. Role logits come from
/// the proposer's similarity in both directions.
pub fn witness(
    config: &PipelineConfig,
    ctx: &Context,
    scenes: &[Scene],
    candidates: &[RelationCandidate],
) -> Result<Vec<WitnessRecord>, PipelineError> {
    let null = NullPrior::from_scenes(scenes, &ctx.pool);
    let engines = ctx.engines(scenes, &null, config, &config.probe)?;
    let unannotated: Vec<RelationCandidate> = candidates
        .iter()
        .filter(|c| c.status != LabelStatus::AnnotatedPositive)
        .cloned()
        .collect();
    let groups = group_by_scene(scenes, &unannotated, |c| &c.scene_id)?;
    let scale = config.proposer.logit_scale;
    let per: Vec<Vec<WitnessRecord>> = engines
        .par_iter()
        .zip(groups)
        .map(|(eng, group)| -> Result<Vec<WitnessRecord>, PipelineError> {
            let mut cache = PairCache::new(eng.scene);
            let mut out = Vec::with_capacity(group.len());
            for c in group {
                let ph = phrase(&ctx.pool, &c.phrase)?;
                let (fwd, rev) = cache.both(c.subject_id, c.object_id)?;
                let logits = (
                    scale * ctx.proposer.similarity(&fwd, ph),
                    scale * ctx.proposer.similarity(&rev, ph),
                );
                out.push(eng.record(c.subject_id, c.object_id, ph, logits)?);
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageRow {
    pub scene_id: String,
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub decision: TriageDecision,
    pub trace: WitnessTrace,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounts {
    pub miss_positive: usize,
    pub reliable_negative: usize,
    pub uncertain: usize,
}

impl DecisionCounts {
    pub fn of<'a>(decisions: impl IntoIterator<Item = &'a TriageDecision>) -> Self {
        let mut c = Self::default();
        for d in decisions {
            match d.decision {
                Decision::MissPositive => c.miss_positive += 1,
                Decision::ReliableNegative => c.reliable_negative += 1,
                Decision::Uncertain => c.uncertain += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.miss_positive + self.reliable_negative + self.uncertain
    }
}

/// Verifier triage of witness records under the proposer's logits.
pub fn triage(
    config: &PipelineConfig,
    ctx: &Context,
    scenes: &[Scene],
    records: &[WitnessRecord],
) -> Result<Vec<TriageRow>, PipelineError> {
    let null = NullPrior::from_scenes(scenes, &ctx.pool);
    let engines = ctx.engines(scenes, &null, config, &config.probe)?;
    let groups = group_by_scene(scenes, records, |r| &r.scene_id)?;
    let verifier = &config.trainer.verifier;
    let scale = config.proposer.logit_scale;
    let seed = derive_seed(config.seed, &[u64::from(b't')]);
    let per: Vec<Vec<TriageRow>> = engines
        .par_iter()
        .zip(groups)
        .map(|(eng, group)| -> Result<Vec<TriageRow>, PipelineError> {
            let mut cache = PairCache::new(eng.scene);
            let mut measured = BTreeMap::new();
            let mut out = Vec::with_capacity(group.len());
            for rec in group {
                let (i, j) = (rec.subject_id, rec.object_id);
                if !measured.contains_key(&(i, j)) {
                    measured.insert((i, j), perturbed_measurements(eng, i, j, verifier, seed)?);
                }
                let (fwd, rev) = cache.both(i, j)?;
                let logits = |ph: &RelationPhrase| {
                    (
                        scale * ctx.proposer.similarity(&fwd, ph),
                        scale * ctx.proposer.similarity(&rev, ph),
                    )
                };
                let q = witness_quality(rec, verifier);
                let (u, _) = estimate_uncertainty_with(eng, rec, &logits, verifier, seed, &measured[&(i, j)])?;
                out.push(TriageRow {
                    scene_id: rec.scene_id.clone(),
                    subject_id: i,
                    object_id: j,
                    phrase: rec.phrase.clone(),
                    decision: triage_one(rec, q, u, verifier),
                    trace: rec.trace.clone(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Decided candidates and how many of them were wrong or right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub count: usize,
    pub hits: usize,
    pub rate: Option<f64>,
}

impl Ratio {
    fn new(hits: usize, count: usize) -> Self {
        Self {
            count,
            hits,
            rate: (count > 0).then(|| hits as f64 / count as f64),
        }
    }
}

/// Oracle-grounded comparison of the full run against the supervised
/// baseline on the unannotated candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub unannotated: usize,
    /// Dropped true relations among the unannotated candidates.
    pub targets: usize,
    /// Hallucination of the baseline at logit 0.
    pub budget: f64,
    pub baseline_at_zero: Recovery,
    pub baseline: Recovery,
    pub full: Recovery,
    pub recall_margin: f64,
    /// Strict MissPositive decisions that hold.
    pub miss_positive_precision: Ratio,
    /// Strict ReliableNegative decisions that hold.
    pub reliable_negative_error: Ratio,
    pub triage_margin: Option<f64>,
}

pub struct TrainResult {
    pub full: TrainOutput,
    pub baseline: TrainOutput,
    pub evaluation: Evaluation,
    /// Strict teacher triage in candidate form.
    pub strict: Vec<TriageRow>,
}

/// The full three-stage run, the supervised baseline and their oracle
/// evaluation.
pub fn train(config: &PipelineConfig, ctx: &Context, scenes: &[Scene]) -> Result<TrainResult, PipelineError> {
    config.validate()?;
    let null = NullPrior::from_scenes(scenes, &ctx.pool);
    let mut trainer = Trainer::new(scenes, &ctx.pool, &ctx.rgb, &null, config.witness, config.probe.clone())?;
    let baseline = trainer.train_supervised(&config.trainer)?;
    let full = trainer.train(&config.trainer)?;
    let set = &trainer.set;

    let oracles: Vec<TruthOracle> = scenes
        .iter()
        .map(|s| TruthOracle::from_scene(s, &ctx.lexicon))
        .collect();
    let holds = |k: usize| {
        let p = &set.pairs[set.candidates[k].pair];
        oracles[p.scene].holds(p.subject_id, p.object_id, set.phrase(k))
    };
    let unl: Vec<usize> = (0..set.candidates.len())
        .filter(|k| !set.candidates[*k].annotated)
        .collect();
    let truth: Vec<bool> = unl.iter().map(|k| holds(*k)).collect();
    let target: Vec<bool> = unl
        .iter()
        .map(|k| {
            let p = &set.pairs[set.candidates[*k].pair];
            oracles[p.scene].is_dropped(p.subject_id, p.object_id, set.phrase(*k))
        })
        .collect();
    let pick = |scores: Vec<f64>| -> Vec<f64> { unl.iter().map(|k| scores[*k]).collect() };
    let sb = pick(set.scores(&baseline.model));
    let sf = pick(set.scores(&full.model));
    let baseline_at_zero = recovery_at(&sb, &truth, &target, 0.0);
    let budget = baseline_at_zero.hallucination;
    let b = best_recall_within(&sb, &truth, &target, budget);
    let f = best_recall_within(&sf, &truth, &target, budget);

    let (mut mp, mut mp_true, mut rn, mut rn_true) = (0, 0, 0, 0);
    for t in &full.strict {
        match t.decision.decision {
            Decision::MissPositive => {
                mp += 1;
                mp_true += usize::from(holds(t.candidate));
            }
            Decision::ReliableNegative => {
                rn += 1;
                rn_true += usize::from(holds(t.candidate));
            }
            Decision::Uncertain => {}
        }
    }
    let precision = Ratio::new(mp_true, mp);
    let rn_error = Ratio::new(rn_true, rn);
    let evaluation = Evaluation {
        unannotated: unl.len(),
        targets: target.iter().filter(|t| **t).count(),
        budget,
        baseline_at_zero,
        baseline: b,
        full: f,
        recall_margin: f.recall - b.recall,
        miss_positive_precision: precision,
        reliable_negative_error: rn_error,
        triage_margin: precision.rate.map(|p| p - rn_error.rate.unwrap_or(0.0)),
    };
    let strict = full
        .strict
        .iter()
        .map(|t| TriageRow {
            scene_id: t.record.scene_id.clone(),
            subject_id: t.record.subject_id,
            object_id: t.record.object_id,
            phrase: t.record.phrase.clone(),
            decision: t.decision.clone(),
            trace: t.record.trace.clone(),
        })
        .collect();
    Ok(TrainResult {
        full,
        baseline,
        evaluation,
        strict,
    })
}

/// Scores every cluster representative on every ordered pair, builds
/// witness records for those above the logit floor and decodes one graph
/// per scene.
pub fn decode(
    config: &PipelineConfig,
    ctx: &Context,
    scenes: &[Scene],
    model: &Model,
) -> Result<Vec<SceneGraph>, PipelineError> {
    config.validate()?;
    let null = NullPrior::from_scenes(scenes, &ctx.pool);
    let engines = ctx.engines(scenes, &null, config, &model.probe)?;
    let reps = ctx.pool.representatives();
    let hash = config.hash();
    engines
        .par_iter()
        .map(|eng| -> Result<SceneGraph, PipelineError> {
            let scene = eng.scene;
            let mut cache = PairCache::new(scene);
            let mut cands = Vec::new();
            for (i, j) in scene.ordered_pairs() {
                let (fwd, rev) = cache.both(i, j)?;
                for ph in &reps {
                    let s = model.scorer.score_raw(&fwd.pair_embedding, &ph.embedding);
                    if s < config.decode.min_logit {
                        continue;
                    }
                    let r = model.scorer.score_raw(&rev.pair_embedding, &ph.embedding);
                    let rec = eng.record(i, j, ph, (s, r))?;
                    let q = witness_quality(&rec, &config.trainer.verifier);
                    cands.push(ScoredCandidate::new(i, j, ph, s, q, rec.trace));
                }
            }
            Ok(decode_scene(scene, cands, &config.decode.decode, &hash)?)
        })
        .collect()
}

/// Logistic confidence of a classifier logit.
pub fn confidence(logit: f64) -> f64 {
    sigmoid(logit)
}

#[cfg(test)]
mod tests;
