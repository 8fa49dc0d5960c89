use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{confidence, Context, PipelineError, TriageRow};
use crate::auditkit::{
    build_audit_pool, compute_metrics, AuditAnnotation, AuditCandidate, AuditLabel, AuditReport, MethodOutput,
    MetricsConfig, PoolOutcome, Prediction, StrataSpec,
};
use crate::decode::SceneGraph;
use crate::hashing::derive_seed;
use crate::oracle::TruthOracle;
use crate::pairprop::annotation_status;
use crate::phrasebank::{normalize_phrase, PhrasePool};
use crate::scenekit::{LabelStatus, Scene};
use crate::verifier::{pair_type, Decision};
use crate::viewwit::WitnessTrace;

/// Annotators that label from hidden truth, each flipping Supported and
/// Unsupported independently with `error_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedAnnotators {
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for SimulatedAnnotators {
    fn default() -> Self {
        Self {
            error_rate: 0.05,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub pool_size: usize,
    pub strata: StrataSpec,
    pub metrics: MetricsConfig,
    pub annotators: Vec<String>,
    pub simulated: SimulatedAnnotators,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            pool_size: 600,
            strata: StrataSpec {
                unannotated: Some(400),
                ..StrataSpec::default()
            },
            metrics: MetricsConfig::default(),
            annotators: ["a1", "a2", "a3"].map(String::from).to_vec(),
            simulated: SimulatedAnnotators::default(),
            seed: 11,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.annotators.is_empty() {
            return Err(PipelineError::Config("at least one annotator is required".into()));
        }
        if !(0.0..=0.5).contains(&self.simulated.error_rate) {
            return Err(PipelineError::Config(
                "simulated error_rate must lie in [0, 0.5]".into(),
            ));
        }
        if self.strata.unannotated.is_some_and(|u| u > self.pool_size) {
            return Err(PipelineError::Config("unannotated quota exceeds pool size".into()));
        }
        Ok(())
    }
}

/// Annotated positives per phrase cluster over all scenes.
pub fn cluster_frequency(scenes: &[Scene], pool: &PhrasePool) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for s in scenes {
        for l in s.labels.iter().filter(|l| l.status == LabelStatus::AnnotatedPositive) {
            if let Some(p) = pool.get(&normalize_phrase(&l.phrase)) {
                *out.entry(p.cluster_id).or_default() += 1;
            }
        }
    }
    out
}

struct PredictionBuilder<'a> {
    pool: &'a PhrasePool,
    scenes: BTreeMap<&'a str, &'a Scene>,
    frequency: BTreeMap<usize, usize>,
}

impl<'a> PredictionBuilder<'a> {
    fn new(ctx: &'a Context, scenes: &'a [Scene]) -> Self {
        Self {
            pool: &ctx.pool,
            scenes: scenes.iter().map(|s| (s.name.as_str(), s)).collect(),
            frequency: cluster_frequency(scenes, &ctx.pool),
        }
    }

    fn build(
        &self,
        scene_id: &str,
        i: u32,
        j: u32,
        phrase: &str,
        conf: f64,
        trace: WitnessTrace,
    ) -> Result<Prediction, PipelineError> {
        let scene = self
            .scenes
            .get(scene_id)
            .ok_or_else(|| PipelineError::MissingInput(format!("scene {scene_id}")))?;
        let ph = super::phrase(self.pool, phrase)?;
        let (a, b) = match (scene.object(i), scene.object(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(PipelineError::MissingInput(format!("objects {i}, {j} of {scene_id}"))),
        };
        let frequency = self.frequency.get(&ph.cluster_id).copied().unwrap_or(0);
        Ok(Prediction {
            scene_id: scene_id.into(),
            subject_id: i,
            object_id: j,
            phrase: ph.normalized.clone(),
            family: ph.family(),
            confidence: conf,
            annotated: annotation_status(scene, self.pool, i, j, ph) == LabelStatus::AnnotatedPositive,
            seen: frequency > 0,
            frequency,
            pair_type: pair_type(a, b),
            trace,
        })
    }
}

/// A method whose predictions are the edges of its decoded graphs.
pub fn method_from_graphs(
    name: &str,
    ctx: &Context,
    scenes: &[Scene],
    graphs: &[SceneGraph],
) -> Result<MethodOutput, PipelineError> {
    let b = PredictionBuilder::new(ctx, scenes);
    let mut predictions = Vec::new();
    let mut edges = BTreeMap::new();
    for g in graphs {
        let scene_id = &g.header.scene_id;
        for e in &g.edges {
            predictions.push(b.build(
                scene_id,
                e.subject_id,
                e.object_id,
                &e.phrase,
                confidence(e.score),
                e.trace.clone(),
            )?);
        }
        edges.insert(scene_id.clone(), g.edges.clone());
    }
    Ok(MethodOutput {
        name: name.into(),
        predictions,
        edges,
    })
}

/// A method whose predictions are the MissPositive decisions of a triage,
/// with witness quality as confidence.
pub fn method_from_triage(
    name: &str,
    ctx: &Context,
    scenes: &[Scene],
    rows: &[TriageRow],
) -> Result<MethodOutput, PipelineError> {
    let b = PredictionBuilder::new(ctx, scenes);
    let predictions = rows
        .iter()
        .filter(|r| r.decision.decision == Decision::MissPositive)
        .map(|r| {
            b.build(
                &r.scene_id,
                r.subject_id,
                r.object_id,
                &r.phrase,
                r.decision.quality,
                r.trace.clone(),
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(MethodOutput {
        name: name.into(),
        predictions,
        edges: BTreeMap::new(),
    })
}

pub fn audit_methods(config: &super::PipelineConfig, methods: &[MethodOutput]) -> Result<PoolOutcome, PipelineError> {
    config.audit.validate()?;
    Ok(build_audit_pool(
        methods,
        &config.audit.strata,
        config.audit.pool_size,
        config.audit.seed,
    )?)
}

/// One label per configured annotator per candidate, from hidden truth.
/// Supported labels select the trace's supporting frames.
pub fn simulate_annotations(
    config: &AuditConfig,
    ctx: &Context,
    scenes: &[Scene],
    pool: &[AuditCandidate],
) -> Result<Vec<AuditAnnotation>, PipelineError> {
    let oracles: BTreeMap<&str, TruthOracle> = scenes
        .iter()
        .map(|s| (s.name.as_str(), TruthOracle::from_scene(s, &ctx.lexicon)))
        .collect();
    let mut out = Vec::with_capacity(pool.len() * config.annotators.len());
    for (k, c) in pool.iter().enumerate() {
        let oracle = oracles
            .get(c.scene_id.as_str())
            .ok_or_else(|| PipelineError::MissingInput(format!("scene {}", c.scene_id)))?;
        let holds = oracle.holds(c.subject_id, c.object_id, super::phrase(&ctx.pool, &c.phrase)?);
        for (a, name) in config.annotators.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.simulated.seed, &[k as u64, a as u64]));
            let flip = rng.random::<f64>() < config.simulated.error_rate;
            let label = if holds != flip {
                AuditLabel::Supported
            } else {
                AuditLabel::Unsupported
            };
            let frames = if label == AuditLabel::Supported {
                c.trace.supporting_frames.iter().map(|f| f.frame_index).collect()
            } else {
                Vec::new()
            };
            out.push(AuditAnnotation {
                candidate_id: c.id.clone(),
                annotator_id: name.clone(),
                label,
                frames,
                region_3d: None,
                timestamp: 0,
            });
        }
    }
    Ok(out)
}

/// Wilson score interval for `hits` out of `n` at normal quantile `z`.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let (n, p) = (n as f64, hits as f64 / n as f64);
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Some(((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// Audited witness precision of a method against the true precision of
/// all its unannotated predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub method: String,
    pub unannotated: usize,
    pub holding: usize,
    pub oracle_precision: Option<f64>,
    pub wp: Option<f64>,
    pub judged: usize,
    /// Wilson 95% interval of the audited WP.
    pub interval: Option<(f64, f64)>,
    pub within: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub reports: Vec<AuditReport>,
    pub oracle: Vec<OracleCheck>,
}

pub fn audit_summary(
    config: &AuditConfig,
    ctx: &Context,
    scenes: &[Scene],
    pool: &[AuditCandidate],
    annotations: &[AuditAnnotation],
    methods: &[MethodOutput],
) -> Result<AuditSummary, PipelineError> {
    let oracles: BTreeMap<&str, TruthOracle> = scenes
        .iter()
        .map(|s| (s.name.as_str(), TruthOracle::from_scene(s, &ctx.lexicon)))
        .collect();
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    for m in methods {
        let report = compute_metrics(pool, annotations, m, &config.metrics)?;
        let (mut unannotated, mut holding) = (0, 0);
        for p in m.predictions.iter().filter(|p| !p.annotated) {
            let o = oracles
                .get(p.scene_id.as_str())
                .ok_or_else(|| PipelineError::MissingInput(format!("scene {}", p.scene_id)))?;
            unannotated += 1;
            holding += usize::from(o.holds(p.subject_id, p.object_id, super::phrase(&ctx.pool, &p.phrase)?));
        }
        let oracle_precision = (unannotated > 0).then(|| holding as f64 / unannotated as f64);
        let interval = wilson_interval(report.wp.numerator, report.wp.denominator, 1.959_963_984_540_054);
        checks.push(OracleCheck {
            method: m.name.clone(),
            unannotated,
            holding,
            oracle_precision,
            wp: report.wp.rate,
            judged: report.wp.denominator,
            interval,
            within: interval
                .zip(oracle_precision)
                .map(|((lo, hi), p)| (lo..=hi).contains(&p)),
        });
        reports.push(report);
    }
    Ok(AuditSummary {
        reports,
        oracle: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_matches_closed_form() {
        let (lo, hi) = wilson_interval(8, 10, 1.96).unwrap();
        // Published Wilson bounds for 8 of 10.
        assert!((lo - 0.490_157).abs() < 1e-6, "{lo}");
        assert!((hi - 0.943_319).abs() < 1e-6, "{hi}");
        let (lo, hi) = wilson_interval(10, 10, 1.96).unwrap();
        assert!((hi - 1.0).abs() < 1e-12 && (lo - 10.0 / 13.8416).abs() < 1e-6);
        assert_eq!(wilson_interval(0, 0, 1.96), None);
    }
}
