//! Witness quality, perturbation uncertainty, triage, momentum teacher and
//! the balanced witness memory.

mod memory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{sigmoid, Vec3};
use crate::hashing::{derive_seed, fnv64};
use crate::phrasebank::{RelationPhrase, WitnessFamily};
use crate::probes::{measure_pair, PairMeasurements};
use crate::viewwit::{WitnessEngine, WitnessError, WitnessRecord};

pub use memory::{pair_type, BucketKey, MemoryEntry, MemoryError, WitnessMemory, DEFAULT_CAP};

#[derive(Debug, Error, PartialEq)]
pub enum VerifierError {
    #[error("invalid verifier config: {0}")]
    Config(String),
    #[error("teacher has {teacher} parameters, student {student}")]
    Dimension { teacher: usize, student: usize },
}

/// Per-family decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyThresholds {
    pub tau_p: f64,
    pub tau_3d: f64,
    pub tau_mv: f64,
    pub tau_n: f64,
    /// Reliable negatives need S_3d below this.
    pub probe_ceiling: f64,
}

impl Default for FamilyThresholds {
    fn default() -> Self {
        Self {
            tau_p: 0.65,
            tau_3d: 0.5,
            tau_mv: 0.15,
            tau_n: 0.2,
            probe_ceiling: 0.2,
        }
    }
}

/// Perturbations used to estimate uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub view_drop: f64,
    pub jitter_sigma: f64,
    pub point_drop: f64,
    pub paraphrase: bool,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            view_drop: 0.3,
            jitter_sigma: 0.01,
            point_drop: 0.1,
            paraphrase: true,
        }
    }
}

/// Rows are `(w_rgb, w_dep, w_3d, w_mv, w_role, w_null)`; `w_null` enters Q
/// with a minus sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub weight_table: [[f64; 6]; 8],
    pub bias: [f64; 8],
    pub thresholds: [FamilyThresholds; 8],
    pub tau_u: f64,
    pub perturbations: usize,
    pub perturb: PerturbConfig,
    pub momentum: f64,
    /// Stage-3 reduction of every tau_p.
    pub relaxation: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        // Support and containment lean on depth and geometry, orientation
        // and interaction on appearance, proximity on the metric probe.
        let weight_table = [
            [2.0, 3.0, 5.0, 2.0, 1.0, 1.0],
            [2.0, 2.0, 5.0, 2.0, 1.0, 1.0],
            [2.0, 0.0, 6.0, 2.0, 0.0, 1.0],
            [2.0, 2.0, 5.0, 2.0, 1.0, 1.0],
            [2.0, 1.0, 5.0, 2.0, 1.0, 1.0],
            [3.0, 0.0, 4.0, 2.0, 1.0, 1.0],
            [3.0, 2.0, 4.0, 2.0, 0.0, 1.0],
            [2.0, 0.0, 0.0, 2.0, 0.0, 1.0],
        ];
        let bias = [-5.5, -5.0, -4.0, -5.0, -5.0, -5.0, -5.0, -3.0];
        let mut thresholds = [FamilyThresholds::default(); 8];
        thresholds[WitnessFamily::Proximity.index()].tau_3d = 0.35;
        // With nothing inside, the containment logistic still sits at 0.5.
        thresholds[WitnessFamily::Containment.index()].tau_3d = 0.6;
        Self {
            weight_table,
            bias,
            thresholds,
            tau_u: 0.01,
            perturbations: 6,
            perturb: PerturbConfig::default(),
            momentum: 0.996,
            relaxation: 0.05,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), VerifierError> {
        let bad = |m: &str| Err(VerifierError::Config(m.into()));
        if self
            .weight_table
            .iter()
            .flatten()
            .chain(&self.bias)
            .any(|w| !w.is_finite())
        {
            return bad("weights must be finite");
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        for t in &self.thresholds {
            if ![t.tau_p, t.tau_3d, t.tau_mv, t.tau_n, t.probe_ceiling]
                .into_iter()
                .all(unit)
            {
                return bad("thresholds must lie in (0, 1)");
            }
        }
        if !unit(self.tau_u) {
            return bad("tau_u must lie in (0, 1)");
        }
        if self.perturbations < 2 {
            return bad("at least two perturbations are required");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1]");
        }
        let p = &self.perturb;
        if !(0.0..1.0).contains(&p.view_drop) || !(0.0..1.0).contains(&p.point_drop) || p.jitter_sigma < 0.0 {
            return bad("perturbation magnitudes out of range");
        }
        if !(0.0..1.0).contains(&self.relaxation) {
            return bad("relaxation must lie in [0, 1)");
        }
        Ok(())
    }

    /// Copy with every tau_p lowered by the stage-3 relaxation.
    pub fn relaxed(&self) -> Self {
        let mut c = self.clone();
        for t in &mut c.thresholds {
            t.tau_p = (t.tau_p - self.relaxation).max(1e-6);
        }
        c
    }

    /// Family-mixed weights and bias.
    pub fn mixed(&self, pi: &[f64; 8]) -> ([f64; 6], f64) {
        let mut w = [0.0; 6];
        let mut b = 0.0;
        for (k, p) in pi.iter().enumerate() {
            for (wi, row) in w.iter_mut().zip(&self.weight_table[k]) {
                *wi += p * row;
            }
            b += p * self.bias[k];
        }
        (w, b)
    }
}

pub fn witness_quality(record: &WitnessRecord, config: &VerifierConfig) -> f64 {
    let (w, b) = config.mixed(&record.family_dist);
    let s = record.scores();
    let z = w[0] * s[0] + w[1] * s[1] + w[2] * s[2] + w[3] * s[3] + w[4] * s[4] - w[5] * s[5] + b;
    sigmoid(z)
}

/// Role logits of the current scorer for `(i, j)` and `(j, i)` under a phrase.
pub type RoleLogits<'a> = dyn Fn(&RelationPhrase) -> (f64, f64) + Sync + 'a;

fn perturb_points(points: &[Vec3], cfg: &PerturbConfig, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let noise = Normal::new(0.0, cfg.jitter_sigma.max(0.0)).expect("valid sigma");
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if cfg.point_drop > 0.0 && rng.random::<f64>() < cfg.point_drop {
            continue;
        }
        out.push(if cfg.jitter_sigma > 0.0 {
            p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        } else {
            *p
        });
    }
    if out.is_empty() && !points.is_empty() {
        out.push(points[0]);
    }
    out
}

/// Jittered and thinned re-measurements of a pair, one per perturbation.
/// They depend on the pair only, so every phrase of the pair shares them.
pub fn perturbed_measurements(
    engine: &WitnessEngine<'_>,
    i: u32,
    j: u32,
    config: &VerifierConfig,
    seed: u64,
) -> Result<Vec<PairMeasurements>, WitnessError> {
    let cfg = &config.perturb;
    if cfg.jitter_sigma == 0.0 && cfg.point_drop == 0.0 {
        return Ok(vec![engine.measurements(i, j)?; config.perturbations]);
    }
    let a = engine.scene.object(i).ok_or(WitnessError::UnknownObject(i))?;
    let b = engine.scene.object(j).ok_or(WitnessError::UnknownObject(j))?;
    (0..config.perturbations)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[fnv64(0, &engine.scene.name), i as u64, j as u64, m as u64],
            ));
            let pi = perturb_points(&a.mask_points, cfg, &mut rng);
            let pj = perturb_points(&b.mask_points, cfg, &mut rng);
            Ok(measure_pair(
                a,
                b,
                &pi,
                &pj,
                &engine.probe_params,
                engine.scene.room_scale,
            )?)
        })
        .collect()
}

/// Population variance of Q over `config.perturbations` perturbed
/// re-evaluations of a record. Returns `(U, per-perturbation Q)`.
pub fn estimate_uncertainty(
    engine: &WitnessEngine<'_>,
    record: &WitnessRecord,
    logits: &RoleLogits<'_>,
    config: &VerifierConfig,
    seed: u64,
) -> Result<(f64, Vec<f64>), WitnessError> {
    let measured = perturbed_measurements(engine, record.subject_id, record.object_id, config, seed)?;
    estimate_uncertainty_with(engine, record, logits, config, seed, &measured)
}

/// As [`estimate_uncertainty`] with the pair's perturbed measurements
/// supplied by the caller.
pub fn estimate_uncertainty_with(
    engine: &WitnessEngine<'_>,
    record: &WitnessRecord,
    logits: &RoleLogits<'_>,
    config: &VerifierConfig,
    seed: u64,
    measured: &[PairMeasurements],
) -> Result<(f64, Vec<f64>), WitnessError> {
    let (i, j) = (record.subject_id, record.object_id);
    let phrase = engine
        .pool
        .get(&record.phrase)
        .ok_or_else(|| WitnessError::UnknownPhrase(record.phrase.clone()))?;
    let members = engine.pool.cluster_members(phrase.cluster_id);
    let cfg = &config.perturb;
    let mut qs = Vec::with_capacity(config.perturbations);
    for (m, raw) in measured.iter().enumerate().take(config.perturbations) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[
                fnv64(0, &record.scene_id),
                i as u64,
                j as u64,
                fnv64(1, &record.phrase),
                m as u64,
            ],
        ));
        let mut kept: Vec<_> = record
            .views
            .iter()
            .filter(|_| cfg.view_drop == 0.0 || rng.random::<f64>() >= cfg.view_drop)
            .copied()
            .collect();
        if kept.is_empty() && !record.views.is_empty() {
            kept.push(record.views[rng.random_range(0..record.views.len())]);
        }
        let para = if cfg.paraphrase && members.len() > 1 {
            members[rng.random_range(0..members.len())]
        } else {
            phrase
        };
        if para.normalized != phrase.normalized {
            let selected: Vec<_> = engine
                .select(i, j)
                .into_iter()
                .filter(|v| kept.iter().any(|k| k.frame_index == v.frame_index))
                .collect();
            kept = engine.score_views(i, j, para, &selected)?;
        }
        let rec = engine.assemble(i, j, para, kept, raw, logits(para))?;
        qs.push(witness_quality(&rec, config));
    }
    let n = qs.len().max(1) as f64;
    let mean = qs.iter().sum::<f64>() / n;
    let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n;
    Ok((var, qs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    MissPositive,
    ReliableNegative,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageDecision {
    pub decision: Decision,
    pub quality: f64,
    pub uncertainty: f64,
    pub rationale: String,
}

/// Three-way decision with family thresholds read at the argmax family.
pub fn triage(record: &WitnessRecord, q: f64, u: f64, config: &VerifierConfig) -> TriageDecision {
    let family = record.family();
    let t = &config.thresholds[family.index()];
    let checks = [
        (q > t.tau_p, format!("Q {q:.3} vs tau_p {:.3}", t.tau_p)),
        (u < config.tau_u, format!("U {u:.4} vs tau_u {:.4}", config.tau_u)),
        (
            record.s_3d > t.tau_3d,
            format!("S_3d {:.3} vs tau_3d {:.3}", record.s_3d, t.tau_3d),
        ),
        (
            record.s_mv > t.tau_mv,
            format!("S_mv {:.3} vs tau_mv {:.3}", record.s_mv, t.tau_mv),
        ),
    ];
    let (decision, rationale) = if family == WitnessFamily::FunctionalUncertain && checks.iter().all(|c| c.0) {
        (
            Decision::Uncertain,
            "functional family is never a missing positive".to_string(),
        )
    } else if checks.iter().all(|c| c.0) {
        (Decision::MissPositive, "all positive conditions hold".to_string())
    } else if q < t.tau_n && record.s_3d < t.probe_ceiling && u < config.tau_u {
        (
            Decision::ReliableNegative,
            format!("Q {q:.3} < tau_n, S_3d {:.3} < ceiling, U stable", record.s_3d),
        )
    } else {
        let failed: Vec<String> = checks.into_iter().filter(|c| !c.0).map(|c| c.1).collect();
        (Decision::Uncertain, format!("failed: {}", failed.join("; ")))
    };
    TriageDecision {
        decision,
        quality: q,
        uncertainty: u,
        rationale,
    }
}

/// EMA copy of the student's parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherState {
    pub params: Vec<f64>,
    pub updates: u64,
}

impl TeacherState {
    pub fn new(params: Vec<f64>) -> Self {
        Self { params, updates: 0 }
    }
}

pub fn update_teacher(teacher: &mut TeacherState, student: &[f64], alpha: f64) -> Result<(), VerifierError> {
    if teacher.params.len() != student.len() {
        return Err(VerifierError::Dimension {
            teacher: teacher.params.len(),
            student: student.len(),
        });
    }
    for (t, s) in teacher.params.iter_mut().zip(student) {
        // Written as s + alpha (t - s) so the gap shrinks by exactly alpha.
        *t = if alpha == 1.0 {
            *t
        } else if alpha == 0.0 {
            *s
        } else {
            s + alpha * (*t - s)
        };
    }
    teacher.updates += 1;
    Ok(())
}
