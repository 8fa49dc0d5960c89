//! Missing-relation audit: candidate pools, annotation storage, the
//! verification rule, audit metrics and the annotation service.

mod metrics;
mod payload;
mod pool;
mod service;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Obb;
use crate::phrasebank::WitnessFamily;
use crate::viewwit::WitnessTrace;

pub use metrics::{
    compute_metrics, AuditReport, FamilyBreakdown, GroupAgreement, JudgementCounts, MeanScore, MetricsConfig,
    PoolCounts, RateCounts,
};
pub use payload::{candidate_payload, CandidatePayload, FramePayload, GeometryPayload, ObjectGeometry, PAYLOAD_FIELDS};
pub use pool::{
    build_audit_pool, FrequencyBin, MethodOutput, PoolOutcome, Prediction, Shortfall, StrataSpec, StratumKey,
};
pub use service::{AnnotationRequest, AuditService, Progress, ServiceError, TaskItem};
pub use store::{latest_labels, AnnotationStore, StoreError};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid audit config: {0}")]
    Config(String),
    #[error("annotation references unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("label counts are ragged: row {row} sums to {got}, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("agreement needs at least two raters per item and one item")]
    TooFewRaters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditLabel {
    Supported,
    Unsupported,
    Ambiguous,
    NotObservable,
}

impl AuditLabel {
    pub const ALL: [AuditLabel; 4] = [Self::Supported, Self::Unsupported, Self::Ambiguous, Self::NotObservable];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Supported => "supported",
            Self::Unsupported => "unsupported",
            Self::Ambiguous => "ambiguous",
            Self::NotObservable => "not_observable",
        }
    }
}

/// One sampled candidate shown to annotators. `source_methods` never leaves
/// the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCandidate {
    pub id: String,
    pub scene_id: String,
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub family: WitnessFamily,
    pub source_methods: Vec<String>,
    pub confidence: f64,
    pub annotated: bool,
    pub strata: StratumKey,
    pub trace: WitnessTrace,
}

impl AuditCandidate {
    pub fn key(&self) -> (&str, u32, u32, &str) {
        (&self.scene_id, self.subject_id, self.object_id, &self.phrase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditAnnotation {
    pub candidate_id: String,
    pub annotator_id: String,
    pub label: AuditLabel,
    #[serde(default)]
    pub frames: Vec<usize>,
    #[serde(default)]
    pub region_3d: Option<Obb>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

/// A missing relation counts as verified once two annotators mark it supported.
pub fn verify_missing(labels: &[AuditLabel]) -> bool {
    labels.iter().filter(|l| **l == AuditLabel::Supported).count() >= 2
}

/// Plurality label; ties for the top count resolve to `Ambiguous`.
pub fn majority_label(labels: &[AuditLabel]) -> Option<AuditLabel> {
    if labels.is_empty() {
        return None;
    }
    let mut counts = [0usize; 4];
    labels.iter().for_each(|l| counts[l.index()] += 1);
    let top = *counts.iter().max().unwrap();
    let mut winners = AuditLabel::ALL.into_iter().filter(|l| counts[l.index()] == top);
    let first = winners.next();
    if winners.next().is_some() {
        Some(AuditLabel::Ambiguous)
    } else {
        first
    }
}

fn check_counts(counts: &[Vec<usize>]) -> Result<usize, AuditError> {
    let n = counts
        .first()
        .map(|r| r.iter().sum::<usize>())
        .ok_or(AuditError::TooFewRaters)?;
    if n < 2 {
        return Err(AuditError::TooFewRaters);
    }
    for (row, r) in counts.iter().enumerate() {
        let got: usize = r.iter().sum();
        if got != n || r.len() != counts[0].len() {
            return Err(AuditError::Ragged { row, got, expected: n });
        }
    }
    Ok(n)
}

/// Fleiss' κ over an items × categories count matrix with a fixed number of
/// raters per item. When every rating falls in one category the chance
/// agreement is 1 and κ is reported as 1.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64, AuditError> {
    let n = check_counts(counts)? as f64;
    let items = counts.len() as f64;
    let p_bar = mean_pairwise_agreement(counts)?;
    let cats = counts[0].len();
    let p_e: f64 = (0..cats)
        .map(|j| {
            let pj = counts.iter().map(|r| r[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Mean over items of the fraction of rater pairs that agree.
pub fn mean_pairwise_agreement(counts: &[Vec<usize>]) -> Result<f64, AuditError> {
    let n = check_counts(counts)? as f64;
    let per_item = counts.iter().map(|r| {
        let same: f64 = r.iter().map(|&c| (c * c) as f64).sum::<f64>() - n;
        same / (n * (n - 1.0))
    });
    Ok(per_item.sum::<f64>() / counts.len() as f64)
}
