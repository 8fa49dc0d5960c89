use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    evaluate, total_loss, Batch, FeatureTable, HingePair, Item, Lambdas, LossComponents, LossValue, Model,
    ParaphrasePair, RelationScorer, RolePair, Standardizer, HINGE_MARGIN,
};
use crate::hashing::derive_seed;
use crate::pairprop::{annotation_status, pair_features, PairError};
use crate::phrasebank::{PhrasePool, RelationPhrase, WitnessFamily};
use crate::probes::{PairMeasurements, ProbeParams};
use crate::scenekit::{LabelStatus, Scene};
use crate::verifier::{
    estimate_uncertainty_with, pair_type, perturbed_measurements, triage, update_teacher, witness_quality, BucketKey,
    Decision, MemoryEntry, TeacherState, TriageDecision, VerifierConfig, VerifierError, WitnessMemory, DEFAULT_CAP,
};
use crate::viewwit::{NullPrior, RgbScorer, WitnessEngine, WitnessError, WitnessParams, WitnessRecord};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("no training scenes")]
    Empty,
    #[error("loss became non-finite in {stage:?} epoch {epoch}")]
    Diverged { stage: Stage, epoch: usize },
    #[error(transparent)]
    Witness(#[from] WitnessError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    Bootstrap,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub lambdas: Lambdas,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub warmup_epochs: usize,
    pub bootstrap_epochs: usize,
    pub joint_epochs: usize,
    pub batch_size: usize,
    /// Background pairs drawn per annotated positive.
    pub background_ratio: usize,
    pub teacher_every: usize,
    pub rank: usize,
    pub hinge_margin: f64,
    /// Hinge pairs drawn per family.
    pub hinge_pairs: usize,
    pub memory_cap: usize,
    pub seed: u64,
    pub verifier: VerifierConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lambdas: Lambdas::default(),
            learning_rate: 0.2,
            min_learning_rate: 0.0,
            warmup_epochs: 5,
            bootstrap_epochs: 2,
            joint_epochs: 13,
            batch_size: 128,
            background_ratio: 3,
            teacher_every: 2,
            rank: 16,
            hinge_margin: HINGE_MARGIN,
            hinge_pairs: 128,
            memory_cap: DEFAULT_CAP,
            seed: 0,
            verifier: VerifierConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::Config(m.into()));
        if !self.lambdas.is_valid() {
            return bad("loss weights must be finite and nonnegative");
        }
        if self.warmup_epochs == 0 || self.bootstrap_epochs == 0 || self.joint_epochs == 0 {
            return bad("every stage needs at least one epoch");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.min_learning_rate < 0.0 {
            return bad("learning rates must be positive and finite");
        }
        if self.batch_size == 0 || self.rank == 0 || self.teacher_every == 0 || self.memory_cap == 0 {
            return bad("batch size, rank, teacher period and memory cap must be positive");
        }
        self.verifier.validate()?;
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.bootstrap_epochs + self.joint_epochs
    }

    /// Cosine decay from `learning_rate` to `min_learning_rate`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.total_epochs().max(1) as f64;
        self.min_learning_rate
            + 0.5 * (self.learning_rate - self.min_learning_rate) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub scene: usize,
    pub subject_id: u32,
    pub object_id: u32,
    /// Index of the `(object, subject)` pair.
    pub reverse: usize,
    pub measurements: PairMeasurements,
    pub pair_type: String,
    pub candidates: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEntry {
    pub pair: usize,
    /// Index into [`TrainingSet::phrases`].
    pub phrase: usize,
    pub annotated: bool,
    /// Multi-view score and view count; filled for annotated candidates.
    pub s_mv: f64,
    pub n_views: usize,
}

/// Every ordered pair of every scene crossed with the pool's cluster
/// representatives.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub scene_names: Vec<String>,
    pub scene_pairs: Vec<Range<usize>>,
    pub pairs: Vec<PairEntry>,
    pub inputs: Vec<Vec<f64>>,
    pub texts: Vec<Vec<f64>>,
    pub phrases: Vec<RelationPhrase>,
    pub candidates: Vec<CandidateEntry>,
    pub standardizer: Standardizer,
    pub seen_clusters: BTreeSet<usize>,
}

struct SceneBlock {
    pairs: Vec<(u32, u32, Vec<f64>, PairMeasurements, String)>,
    candidates: Vec<(usize, usize, bool, f64, usize)>,
}

impl TrainingSet {
    fn build(engines: &[WitnessEngine<'_>], pool: &PhrasePool) -> Result<Self, TrainingError> {
        let phrases: Vec<RelationPhrase> = pool.phrases().to_vec();
        let index: BTreeMap<&str, usize> = phrases
            .iter()
            .enumerate()
            .map(|(k, p)| (p.normalized.as_str(), k))
            .collect();
        let reps: Vec<usize> = pool
            .representatives()
            .iter()
            .map(|r| index[r.normalized.as_str()])
            .collect();
        let blocks: Vec<SceneBlock> = engines
            .par_iter()
            .map(|eng| -> Result<SceneBlock, TrainingError> {
                let scene = eng.scene;
                let mut block = SceneBlock {
                    pairs: Vec::new(),
                    candidates: Vec::new(),
                };
                for (local, (i, j)) in scene.ordered_pairs().into_iter().enumerate() {
                    let raw = pair_features(scene, i, j)?.pair_embedding;
                    let (a, b) = (scene.object(i).expect("pair id"), scene.object(j).expect("pair id"));
                    block.pairs.push((i, j, raw, eng.measurements(i, j)?, pair_type(a, b)));
                    for &k in &reps {
                        let ph = &phrases[k];
                        let annotated = annotation_status(scene, pool, i, j, ph) == LabelStatus::AnnotatedPositive;
                        let (s_mv, n_views) = if annotated {
                            let rec = eng.record(i, j, ph, (0.0, 0.0))?;
                            (rec.s_mv, rec.views.len())
                        } else {
                            (0.0, 0)
                        };
                        block.candidates.push((local, k, annotated, s_mv, n_views));
                    }
                }
                Ok(block)
            })
            .collect::<Result<_, _>>()?;

        let mut set = TrainingSet {
            scene_names: engines.iter().map(|e| e.scene.name.clone()).collect(),
            scene_pairs: Vec::new(),
            pairs: Vec::new(),
            inputs: Vec::new(),
            texts: phrases.iter().map(|p| p.embedding.clone()).collect(),
            phrases,
            candidates: Vec::new(),
            standardizer: Standardizer::identity(0),
            seen_clusters: BTreeSet::new(),
        };
        let mut raws = Vec::new();
        for (s, block) in blocks.into_iter().enumerate() {
            let base = set.pairs.len();
            let ids: BTreeMap<(u32, u32), usize> = block
                .pairs
                .iter()
                .enumerate()
                .map(|(k, p)| ((p.0, p.1), base + k))
                .collect();
            let first = set.candidates.len();
            let per_pair = reps.len();
            for c in &block.candidates {
                set.candidates.push(CandidateEntry {
                    pair: base + c.0,
                    phrase: c.1,
                    annotated: c.2,
                    s_mv: c.3,
                    n_views: c.4,
                });
                if c.2 {
                    set.seen_clusters.insert(set.phrases[c.1].cluster_id);
                }
            }
            for (k, (i, j, raw, m, pt)) in block.pairs.into_iter().enumerate() {
                set.pairs.push(PairEntry {
                    scene: s,
                    subject_id: i,
                    object_id: j,
                    reverse: ids[&(j, i)],
                    measurements: m,
                    pair_type: pt,
                    candidates: first + k * per_pair..first + (k + 1) * per_pair,
                });
                raws.push(raw);
            }
            set.scene_pairs.push(base..set.pairs.len());
        }
        set.standardizer = Standardizer::fit(&raws);
        set.inputs = raws.iter().map(|r| set.standardizer.apply(r)).collect();
        Ok(set)
    }

    pub fn table(&self) -> FeatureTable<'_> {
        FeatureTable {
            pairs: &self.inputs,
            texts: &self.texts,
        }
    }

    pub fn item(&self, candidate: usize) -> Item {
        let c = &self.candidates[candidate];
        Item {
            pair: c.pair,
            text: c.phrase,
        }
    }

    pub fn phrase(&self, candidate: usize) -> &RelationPhrase {
        &self.phrases[self.candidates[candidate].phrase]
    }

    /// Logit of every candidate under a model.
    pub fn scores(&self, model: &Model) -> Vec<f64> {
        self.candidates
            .par_iter()
            .map(|c| model.scorer.score(&self.inputs[c.pair], &self.texts[c.phrase]))
            .collect()
    }

    fn lookup(&self, record: &WitnessRecord) -> Option<usize> {
        let s = self.scene_names.iter().position(|n| *n == record.scene_id)?;
        self.scene_pairs[s]
            .clone()
            .find(|p| self.pairs[*p].subject_id == record.subject_id && self.pairs[*p].object_id == record.object_id)
            .and_then(|p| {
                self.pairs[p]
                    .candidates
                    .clone()
                    .find(|c| self.phrases[self.candidates[*c].phrase].normalized == record.phrase)
            })
    }

    /// Deterministic annotated-positive vs background probe pairs per
    /// family and direction.
    fn hinge_pairs(&self, per_family: usize, seed: u64) -> Vec<HingePair> {
        let mut groups: BTreeMap<(WitnessFamily, u8), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (k, c) in self.candidates.iter().enumerate() {
            let ph = &self.phrases[c.phrase];
            let g = groups.entry((ph.family(), ph.polarity as u8)).or_default();
            if c.annotated {
                g.0.push(k);
            } else {
                g.1.push(k);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for ((family, _), (pos, neg)) in groups {
            if pos.is_empty() || neg.is_empty() || family == WitnessFamily::FunctionalUncertain {
                continue;
            }
            for _ in 0..per_family {
                let (p, n) = (pos[rng.random_range(0..pos.len())], neg[rng.random_range(0..neg.len())]);
                out.push(HingePair {
                    family,
                    polarity: self.phrase(p).polarity,
                    positive: self.pairs[self.candidates[p].pair].measurements,
                    negative: self.pairs[self.candidates[n].pair].measurements,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageCounts {
    pub miss_positive: usize,
    pub reliable_negative: usize,
    pub uncertain: usize,
}

impl TriageCounts {
    fn add(&mut self, d: Decision) {
        match d {
            Decision::MissPositive => self.miss_positive += 1,
            Decision::ReliableNegative => self.reliable_negative += 1,
            Decision::Uncertain => self.uncertain += 1,
        }
    }

    fn of_memory(m: &WitnessMemory) -> Self {
        Self {
            miss_positive: m.count(Decision::MissPositive),
            reliable_negative: m.count(Decision::ReliableNegative),
            uncertain: m.count(Decision::Uncertain),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub learning_rate: f64,
    pub losses: LossComponents,
    pub total: f64,
    pub memory: TriageCounts,
    pub triage: Option<TriageCounts>,
}

pub fn logs_to_jsonl(logs: &[EpochLog]) -> String {
    logs.iter()
        .map(|l| serde_json::to_string(l).expect("log serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriagedCandidate {
    pub candidate: usize,
    pub decision: TriageDecision,
    pub record: WitnessRecord,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub teacher: Option<TeacherState>,
    pub memory: WitnessMemory,
    pub logs: Vec<EpochLog>,
    /// Teacher triage at the start of bootstrapping, strict thresholds.
    pub strict: Vec<TriagedCandidate>,
    /// Teacher triage at the start of joint training, relaxed thresholds.
    pub relaxed: Vec<TriagedCandidate>,
}

enum Tagged {
    Observed(usize),
    Background(usize),
    Missing(usize, f64),
    Negative(usize, f64),
    Uncertain(usize),
}

const SEED_INIT: u64 = 1;
const SEED_HINGE: u64 = 2;
const SEED_EPOCH: u64 = 3;
const SEED_TRIAGE: u64 = 4;

/// Shared scene state for one or more training runs.
pub struct Trainer<'a> {
    engines: Vec<WitnessEngine<'a>>,
    pub set: TrainingSet,
    initial_probe: ProbeParams,
}

impl<'a> Trainer<'a> {
    pub fn new(
        scenes: &'a [Scene],
        pool: &'a PhrasePool,
        rgb: &'a dyn RgbScorer,
        null: &'a NullPrior,
        witness: WitnessParams,
        probe: ProbeParams,
    ) -> Result<Self, TrainingError> {
        if scenes.is_empty() {
            return Err(TrainingError::Empty);
        }
        let engines = scenes
            .par_iter()
            .map(|s| WitnessEngine::new(s, pool, rgb, null, witness, probe.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let set = TrainingSet::build(&engines, pool)?;
        Ok(Self {
            engines,
            set,
            initial_probe: probe,
        })
    }

    fn initial_model(&self, config: &TrainerConfig) -> Model {
        let pair_dim = self.set.inputs.first().map_or(0, Vec::len);
        let text_dim = self.set.texts.first().map_or(0, Vec::len);
        Model {
            scorer: RelationScorer::new(
                config.rank,
                pair_dim,
                text_dim,
                self.set.standardizer.clone(),
                derive_seed(config.seed, &[SEED_INIT]),
            ),
            probe: self.initial_probe.clone(),
        }
    }

    /// All three stages.
    pub fn train(&mut self, config: &TrainerConfig) -> Result<TrainOutput, TrainingError> {
        self.run(config, true)
    }

    /// The warm-up objective alone for the same total number of epochs.
    pub fn train_supervised(&mut self, config: &TrainerConfig) -> Result<TrainOutput, TrainingError> {
        self.run(config, false)
    }

    /// Teacher triage of every unannotated candidate.
    pub fn triage_all(
        &mut self,
        teacher: &Model,
        verifier: &VerifierConfig,
        seed: u64,
    ) -> Result<Vec<TriagedCandidate>, TrainingError> {
        for e in &mut self.engines {
            e.probe_params = teacher.probe.clone();
        }
        let set = &self.set;
        let per_scene: Vec<Vec<TriagedCandidate>> = self
            .engines
            .par_iter()
            .zip(&set.scene_pairs)
            .map(|(eng, pairs)| -> Result<_, TrainingError> {
                let mut out = Vec::new();
                for p in pairs.clone() {
                    let pe = &set.pairs[p];
                    let cands: Vec<usize> = pe
                        .candidates
                        .clone()
                        .filter(|c| !set.candidates[*c].annotated)
                        .collect();
                    if cands.is_empty() {
                        continue;
                    }
                    let measured = perturbed_measurements(eng, pe.subject_id, pe.object_id, verifier, seed)?;
                    let (fwd, rev) = (&set.inputs[p], &set.inputs[pe.reverse]);
                    let logits = |ph: &RelationPhrase| {
                        (
                            teacher.scorer.score(fwd, &ph.embedding),
                            teacher.scorer.score(rev, &ph.embedding),
                        )
                    };
                    for c in cands {
                        let ph = set.phrase(c);
                        let rec = eng.record(pe.subject_id, pe.object_id, ph, logits(ph))?;
                        let q = witness_quality(&rec, verifier);
                        let (u, _) = estimate_uncertainty_with(eng, &rec, &logits, verifier, seed, &measured)?;
                        out.push(TriagedCandidate {
                            candidate: c,
                            decision: triage(&rec, q, u, verifier),
                            record: rec,
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;
        Ok(per_scene.into_iter().flatten().collect())
    }

    fn fill_memory(&self, triaged: &[TriagedCandidate], cap: usize) -> WitnessMemory {
        let mut memory = WitnessMemory::new(cap);
        for t in triaged {
            let pe = &self.set.pairs[self.set.candidates[t.candidate].pair];
            let ph = self.set.phrase(t.candidate);
            memory.insert(MemoryEntry {
                key: BucketKey {
                    decision: t.decision.decision,
                    family: t.record.family(),
                    pair_type: pe.pair_type.clone(),
                    seen: self.set.seen_clusters.contains(&ph.cluster_id),
                    cluster_id: ph.cluster_id,
                },
                quality: t.decision.quality,
                uncertainty: t.decision.uncertainty,
                record: t.record.clone(),
            });
        }
        memory
    }

    fn run(&mut self, config: &TrainerConfig, full: bool) -> Result<TrainOutput, TrainingError> {
        config.validate()?;
        let mut student = self.initial_model(config);
        let hinge = self
            .set
            .hinge_pairs(config.hinge_pairs, derive_seed(config.seed, &[SEED_HINGE]));
        let observed: Vec<usize> = (0..self.set.candidates.len())
            .filter(|c| self.set.candidates[*c].annotated)
            .collect();
        let unlabeled: Vec<usize> = (0..self.set.candidates.len())
            .filter(|c| !self.set.candidates[*c].annotated)
            .collect();
        let n_background = (observed.len() * config.background_ratio).min(unlabeled.len());

        let mut memory = WitnessMemory::new(config.memory_cap);
        let mut teacher: Option<TeacherState> = None;
        let (mut strict, mut relaxed) = (Vec::new(), Vec::new());
        let mut logs = Vec::new();
        let joint_start = config.warmup_epochs + config.bootstrap_epochs;

        for epoch in 0..config.total_epochs() {
            let stage = if !full || epoch < config.warmup_epochs {
                Stage::Warmup
            } else if epoch < joint_start {
                Stage::Bootstrap
            } else {
                Stage::Joint
            };
            let mut triage_counts = None;
            if full && (epoch == config.warmup_epochs || epoch == joint_start) {
                let verifier = if epoch == joint_start {
                    config.verifier.relaxed()
                } else {
                    config.verifier.clone()
                };
                let t = teacher.get_or_insert_with(|| TeacherState::new(student.flat()));
                let teacher_model = student.with_flat(&t.params);
                let triaged = self.triage_all(
                    &teacher_model,
                    &verifier,
                    derive_seed(config.seed, &[SEED_TRIAGE, epoch as u64]),
                )?;
                let mut counts = TriageCounts::default();
                triaged.iter().for_each(|t| counts.add(t.decision.decision));
                triage_counts = Some(counts);
                memory = self.fill_memory(&triaged, config.memory_cap);
                if epoch == joint_start {
                    relaxed = triaged;
                } else {
                    strict = triaged;
                }
            }

            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SEED_EPOCH, epoch as u64]));
            let mut items: Vec<Tagged> = observed.iter().map(|c| Tagged::Observed(*c)).collect();
            let mut held = BTreeSet::new();
            if stage == Stage::Joint {
                // Memory classes with a zero weight are neither sampled nor
                // withheld from the background.
                let lm = &config.lambdas;
                let active: Vec<(Decision, usize)> = [
                    (Decision::MissPositive, lm.miss, memory.count(Decision::MissPositive)),
                    (
                        Decision::ReliableNegative,
                        lm.neg,
                        memory.count(Decision::ReliableNegative).min(observed.len()),
                    ),
                    (
                        Decision::Uncertain,
                        lm.unc,
                        memory.count(Decision::Uncertain).min(observed.len()),
                    ),
                ]
                .into_iter()
                .filter(|(_, l, _)| *l > 0.0)
                .map(|(d, _, n)| (d, n))
                .collect();
                for &(d, n) in &active {
                    for e in memory.sample(d, n, rng.random()) {
                        let Some(c) = self.set.lookup(&e.record) else { continue };
                        items.push(match d {
                            Decision::MissPositive => Tagged::Missing(c, e.quality),
                            Decision::ReliableNegative => Tagged::Negative(c, e.quality),
                            Decision::Uncertain => Tagged::Uncertain(c),
                        });
                    }
                    held.extend(memory.entries(d).filter_map(|e| self.set.lookup(&e.record)));
                }
            }
            let pool: Vec<usize> = unlabeled.iter().copied().filter(|c| !held.contains(c)).collect();
            let n_bg = n_background.min(pool.len());
            for k in rand::seq::index::sample(&mut rng, pool.len(), n_bg).into_iter() {
                items.push(Tagged::Background(pool[k]));
            }
            items.shuffle(&mut rng);

            let lr = config.learning_rate_at(epoch);
            let lambdas = if stage == Stage::Joint {
                config.lambdas
            } else {
                Lambdas {
                    wit: config.lambdas.wit,
                    ..Lambdas::ZERO
                }
            };
            let mut epoch_losses = Vec::new();
            for chunk in items.chunks(config.batch_size) {
                let batch = self.batch(chunk, &hinge, &mut rng);
                let (comp, grad) = evaluate(&student, self.set.table(), &batch, &lambdas, config.hinge_margin);
                let total = total_loss(&comp, &lambdas);
                if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(TrainingError::Diverged { stage, epoch });
                }
                let mut theta = student.flat();
                theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= lr * g);
                student.set_flat(&theta);
                epoch_losses.push(comp);
            }
            if let Some(t) = teacher.as_mut() {
                if (epoch + 1) % config.teacher_every == 0 {
                    update_teacher(t, &student.flat(), config.verifier.momentum)?;
                    t.updates += 1;
                }
            }
            let losses = mean_components(&epoch_losses);
            logs.push(EpochLog {
                stage,
                epoch,
                learning_rate: lr,
                total: total_loss(&losses, &lambdas),
                losses,
                memory: TriageCounts::of_memory(&memory),
                triage: triage_counts,
            });
        }
        Ok(TrainOutput {
            model: student,
            teacher,
            memory,
            logs,
            strict,
            relaxed,
        })
    }

    fn batch(&self, chunk: &[Tagged], hinge: &[HingePair], rng: &mut ChaCha8Rng) -> Batch {
        let set = &self.set;
        let mut b = Batch {
            hinge: hinge.to_vec(),
            ..Default::default()
        };
        for t in chunk {
            match *t {
                Tagged::Observed(c) => {
                    let it = set.item(c);
                    b.observed.push(it);
                    let entry = &set.candidates[c];
                    let ph = set.phrase(c);
                    if ph.directional {
                        b.role.push(RolePair {
                            forward: it,
                            reverse_pair: set.pairs[entry.pair].reverse,
                            sensitivity: ph.role_sensitivity,
                        });
                    }
                    if entry.n_views >= 2 {
                        b.stability.push(entry.s_mv);
                    }
                    let members: Vec<usize> = (0..set.phrases.len())
                        .filter(|k| *k != entry.phrase && set.phrases[*k].cluster_id == ph.cluster_id)
                        .collect();
                    if !members.is_empty() {
                        b.paraphrase.push(ParaphrasePair {
                            item: it,
                            paraphrase: members[rng.random_range(0..members.len())],
                        });
                    }
                }
                Tagged::Background(c) => b.background.push(set.item(c)),
                Tagged::Missing(c, q) => b.missing.push((set.item(c), q)),
                Tagged::Negative(c, q) => b.negative.push((set.item(c), q)),
                Tagged::Uncertain(c) => b.uncertain.push(set.item(c)),
            }
        }
        b
    }
}

fn mean_components(all: &[LossComponents]) -> LossComponents {
    let n = all.len().max(1) as f64;
    let avg = |f: &dyn Fn(&LossComponents) -> LossValue| LossValue {
        value: all.iter().map(|c| f(c).value).sum::<f64>() / n,
        empty: all.iter().all(|c| f(c).empty),
    };
    let mut out = LossComponents {
        obs: avg(&|c| c.obs),
        background: avg(&|c| c.background),
        miss: avg(&|c| c.miss),
        neg: avg(&|c| c.neg),
        unc: avg(&|c| c.unc),
        ..Default::default()
    };
    for c in all {
        out.wit.hinge += c.wit.hinge / n;
        out.wit.role += c.wit.role / n;
        out.wit.stability += c.wit.stability / n;
        out.wit.paraphrase += c.wit.paraphrase / n;
    }
    out
}

/// Operating point of a score threshold over a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub threshold: f64,
    pub predicted: usize,
    /// Predicted positives among the recall targets over all targets.
    pub recall: f64,
    /// Predicted positives that do not hold over all predicted positives.
    pub hallucination: f64,
}

/// `truth[k]`: the candidate holds; `target[k]`: it counts toward recall.
pub fn recovery_at(scores: &[f64], truth: &[bool], target: &[bool], threshold: f64) -> Recovery {
    let mut predicted = 0;
    let (mut false_pos, mut hits) = (0usize, 0usize);
    for k in 0..scores.len() {
        if scores[k] >= threshold {
            predicted += 1;
            false_pos += usize::from(!truth[k]);
            hits += usize::from(target[k]);
        }
    }
    let targets = target.iter().filter(|t| **t).count();
    Recovery {
        threshold,
        predicted,
        recall: if targets == 0 {
            0.0
        } else {
            hits as f64 / targets as f64
        },
        hallucination: if predicted == 0 {
            0.0
        } else {
            false_pos as f64 / predicted as f64
        },
    }
}

/// The threshold with the highest recall whose hallucination stays within
/// `budget`; the higher threshold wins ties.
pub fn best_recall_within(scores: &[f64], truth: &[bool], target: &[bool], budget: f64) -> Recovery {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let targets = target.iter().filter(|t| **t).count().max(1) as f64;
    let mut best = Recovery {
        threshold: f64::INFINITY,
        predicted: 0,
        recall: 0.0,
        hallucination: 0.0,
    };
    let (mut false_pos, mut hits) = (0usize, 0usize);
    for (n, &k) in order.iter().enumerate() {
        false_pos += usize::from(!truth[k]);
        hits += usize::from(target[k]);
        // Evaluate only once every candidate tied at this score is included.
        if n + 1 < order.len() && scores[order[n + 1]] == scores[k] {
            continue;
        }
        let predicted = n + 1;
        let hall = false_pos as f64 / predicted as f64;
        let recall = hits as f64 / targets;
        if hall <= budget && recall > best.recall {
            best = Recovery {
                threshold: scores[k],
                predicted,
                recall,
                hallucination: hall,
            };
        }
    }
    best
}
