use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    fleiss_kappa, latest_labels, majority_label, mean_pairwise_agreement, verify_missing, AuditAnnotation,
    AuditCandidate, AuditError, AuditLabel, MethodOutput, Prediction,
};
use crate::decode::is_redundant;
use crate::geom::obb_iou;
use crate::phrasebank::WitnessFamily;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Predictions at or above this confidence enter the hallucination rate.
    pub confidence_cutoff: f64,
    /// Region overlap accepted in place of matching frames.
    pub region_iou: f64,
    pub text_threshold: f64,
    pub trace_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            confidence_cutoff: 0.5,
            region_iou: 0.25,
            text_threshold: 0.8,
            trace_threshold: 0.5,
        }
    }
}

/// A ratio with its counts. `rate` is absent when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCounts {
    pub numerator: usize,
    pub denominator: usize,
    pub rate: Option<f64>,
}

impl RateCounts {
    fn new(numerator: usize, denominator: usize) -> Self {
        Self {
            numerator,
            denominator,
            rate: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgementCounts {
    pub supported: usize,
    pub unsupported: usize,
    pub ambiguous: usize,
    pub not_observable: usize,
    /// In the pool but not yet labeled.
    pub unjudged: usize,
}

impl JudgementCounts {
    fn add(&mut self, label: Option<AuditLabel>) {
        match label {
            Some(AuditLabel::Supported) => self.supported += 1,
            Some(AuditLabel::Unsupported) => self.unsupported += 1,
            Some(AuditLabel::Ambiguous) => self.ambiguous += 1,
            Some(AuditLabel::NotObservable) => self.not_observable += 1,
            None => self.unjudged += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.supported + self.unsupported + self.ambiguous + self.not_observable + self.unjudged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub items: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyBreakdown {
    pub family: WitnessFamily,
    pub vmr: RateCounts,
    pub wp: RateCounts,
    pub hallucination: RateCounts,
}

/// Agreement over candidates of one family (or all, when `family` is
/// absent) that share the most common rater count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAgreement {
    pub family: Option<WitnessFamily>,
    pub items: usize,
    pub raters: usize,
    pub percent: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCounts {
    pub pool: usize,
    pub unannotated: usize,
    pub labeled: usize,
    pub annotations: usize,
    pub verified_missing: usize,
    pub predictions: usize,
    pub predictions_in_pool: usize,
    pub unannotated_predictions_in_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub method: String,
    pub vmr: RateCounts,
    pub wp: RateCounts,
    pub wp_judgements: JudgementCounts,
    pub mvwa: MeanScore,
    pub hallucination: RateCounts,
    pub redundancy: RateCounts,
    pub per_family: Vec<FamilyBreakdown>,
    pub agreement: Vec<GroupAgreement>,
    pub counts: PoolCounts,
}

fn agreement(family: Option<WitnessFamily>, rows: &[Vec<AuditLabel>]) -> GroupAgreement {
    let mut by_n: BTreeMap<usize, usize> = BTreeMap::new();
    rows.iter()
        .filter(|r| r.len() >= 2)
        .for_each(|r| *by_n.entry(r.len()).or_default() += 1);
    let raters = by_n
        .iter()
        .max_by_key(|(n, c)| (**c, **n))
        .map(|(n, _)| *n)
        .unwrap_or(0);
    let counts: Vec<Vec<usize>> = rows
        .iter()
        .filter(|r| raters >= 2 && r.len() == raters)
        .map(|r| {
            let mut c = vec![0; 4];
            r.iter().for_each(|l| c[l.index()] += 1);
            c
        })
        .collect();
    GroupAgreement {
        family,
        items: counts.len(),
        raters,
        percent: mean_pairwise_agreement(&counts).ok(),
        kappa: fleiss_kappa(&counts).ok(),
    }
}

fn frame_jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Audit metrics of one method against the pool's annotations. Each
/// annotator's latest label per candidate counts.
pub fn compute_metrics(
    pool: &[AuditCandidate],
    annotations: &[AuditAnnotation],
    method: &MethodOutput,
    config: &MetricsConfig,
) -> Result<AuditReport, AuditError> {
    let index: HashMap<(&str, u32, u32, &str), &AuditCandidate> = pool.iter().map(|c| (c.key(), c)).collect();
    let ids: BTreeSet<&str> = pool.iter().map(|c| c.id.as_str()).collect();
    if let Some(a) = annotations.iter().find(|a| !ids.contains(a.candidate_id.as_str())) {
        return Err(AuditError::UnknownCandidate(a.candidate_id.clone()));
    }
    let latest = latest_labels(annotations);
    let labels_of = |c: &AuditCandidate| -> Vec<AuditLabel> {
        latest
            .get(&c.id)
            .map(|v| v.iter().map(|a| a.label).collect())
            .unwrap_or_default()
    };

    let predicted: HashMap<(&str, u32, u32, &str), &Prediction> =
        method.predictions.iter().map(|p| (p.key(), p)).collect();
    let in_pool: Vec<(&Prediction, &AuditCandidate)> = method
        .predictions
        .iter()
        .filter_map(|p| index.get(&p.key()).map(|c| (p, *c)))
        .collect();

    let families: BTreeSet<WitnessFamily> = pool.iter().map(|c| c.family).collect();
    let mut vmr_f: BTreeMap<WitnessFamily, (usize, usize)> = BTreeMap::new();
    let mut wp_f: BTreeMap<WitnessFamily, (usize, usize)> = BTreeMap::new();
    let mut hal_f: BTreeMap<WitnessFamily, (usize, usize)> = BTreeMap::new();

    let (mut vmr_hit, mut vmr_all) = (0, 0);
    for c in pool.iter().filter(|c| !c.annotated) {
        if verify_missing(&labels_of(c)) {
            vmr_all += 1;
            let hit = predicted.contains_key(&c.key());
            vmr_hit += hit as usize;
            let e = vmr_f.entry(c.family).or_default();
            e.0 += hit as usize;
            e.1 += 1;
        }
    }

    let mut judgements = JudgementCounts::default();
    let (mut hal_bad, mut hal_all) = (0, 0);
    let (mut mvwa_sum, mut mvwa_n) = (0.0, 0);
    for (p, c) in &in_pool {
        let labels = labels_of(c);
        let majority = majority_label(&labels);
        if !c.annotated {
            judgements.add(majority);
            if let Some(m @ (AuditLabel::Supported | AuditLabel::Unsupported)) = majority {
                let e = wp_f.entry(c.family).or_default();
                e.0 += (m == AuditLabel::Supported) as usize;
                e.1 += 1;
            }
        }
        if p.confidence >= config.confidence_cutoff && majority.is_some() {
            let bad = majority == Some(AuditLabel::Unsupported);
            hal_bad += bad as usize;
            hal_all += 1;
            let e = hal_f.entry(c.family).or_default();
            e.0 += bad as usize;
            e.1 += 1;
        }
        let supporters: Vec<&AuditAnnotation> = latest
            .get(&c.id)
            .into_iter()
            .flatten()
            .filter(|a| a.label == AuditLabel::Supported && (!a.frames.is_empty() || a.region_3d.is_some()))
            .collect();
        if !supporters.is_empty() {
            let human: BTreeSet<usize> = supporters.iter().flat_map(|a| a.frames.iter().copied()).collect();
            let model: BTreeSet<usize> = p.trace.supporting_frames.iter().map(|f| f.frame_index).collect();
            let region_match = p.trace.region_3d.is_some_and(|m| {
                supporters
                    .iter()
                    .filter_map(|a| a.region_3d)
                    .any(|h| obb_iou(&m, &h, 10) >= config.region_iou)
            });
            mvwa_sum += if region_match {
                1.0
            } else {
                frame_jaccard(&model, &human)
            };
            mvwa_n += 1;
        }
    }

    let (mut redundant, mut edges) = (0, 0);
    for list in method.edges.values() {
        for (k, e) in list.iter().enumerate() {
            edges += 1;
            let dup = list
                .iter()
                .enumerate()
                .any(|(m, o)| m != k && is_redundant(e, o, config.text_threshold, config.trace_threshold));
            redundant += dup as usize;
        }
    }

    let rate = |m: &BTreeMap<WitnessFamily, (usize, usize)>, f: &WitnessFamily| {
        let (n, d) = m.get(f).copied().unwrap_or_default();
        RateCounts::new(n, d)
    };
    let per_family = families
        .iter()
        .map(|f| FamilyBreakdown {
            family: *f,
            vmr: rate(&vmr_f, f),
            wp: rate(&wp_f, f),
            hallucination: rate(&hal_f, f),
        })
        .collect();

    let rows_for = |f: Option<WitnessFamily>| -> Vec<Vec<AuditLabel>> {
        pool.iter()
            .filter(|c| f.is_none_or(|f| c.family == f))
            .map(labels_of)
            .collect()
    };
    let mut agreements = vec![agreement(None, &rows_for(None))];
    agreements.extend(families.iter().map(|f| agreement(Some(*f), &rows_for(Some(*f)))));

    let counts = PoolCounts {
        pool: pool.len(),
        unannotated: pool.iter().filter(|c| !c.annotated).count(),
        labeled: pool.iter().filter(|c| latest.contains_key(&c.id)).count(),
        annotations: annotations.len(),
        verified_missing: vmr_all,
        predictions: method.predictions.len(),
        predictions_in_pool: in_pool.len(),
        unannotated_predictions_in_pool: in_pool.iter().filter(|(_, c)| !c.annotated).count(),
    };
    Ok(AuditReport {
        method: method.name.clone(),
        vmr: RateCounts::new(vmr_hit, vmr_all),
        wp: RateCounts::new(judgements.supported, judgements.supported + judgements.unsupported),
        wp_judgements: judgements,
        mvwa: MeanScore {
            items: mvwa_n,
            value: (mvwa_n > 0).then(|| mvwa_sum / mvwa_n as f64),
        },
        hallucination: RateCounts::new(hal_bad, hal_all),
        redundancy: RateCounts::new(redundant, edges),
        per_family,
        agreement: agreements,
        counts,
    })
}
