use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AuditCandidate, AuditError};
use crate::hashing::derive_seed;
use crate::phrasebank::WitnessFamily;
use crate::viewwit::WitnessTrace;

/// One relation predicted by a method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scene_id: String,
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub family: WitnessFamily,
    pub confidence: f64,
    /// The relation was in the observed annotations.
    pub annotated: bool,
    /// The phrase's cluster occurs in the training annotations.
    pub seen: bool,
    /// Training annotations in the phrase's cluster.
    pub frequency: usize,
    /// Category pair, `subject/object`.
    pub pair_type: String,
    pub trace: WitnessTrace,
}

impl Prediction {
    pub fn key(&self) -> (&str, u32, u32, &str) {
        (&self.scene_id, self.subject_id, self.object_id, &self.phrase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutput {
    pub name: String,
    pub predictions: Vec<Prediction>,
    /// Decoded edges per scene, for the redundancy rate.
    #[serde(default)]
    pub edges: BTreeMap<String, Vec<crate::decode::DecodedEdge>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyBin {
    Head,
    Body,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumKey {
    pub frequency: FrequencyBin,
    pub family: WitnessFamily,
    pub seen: bool,
    pub pair_type: String,
    pub confidence_bin: usize,
    pub annotated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrataSpec {
    /// Clusters with at least this many training annotations are head.
    pub head_min: usize,
    /// Clusters with at most this many are tail.
    pub tail_max: usize,
    /// Ascending confidence bin edges.
    pub confidence_edges: Vec<f64>,
    /// Required number of unannotated candidates; the rest of the pool is
    /// drawn from annotated ones.
    pub unannotated: Option<usize>,
}

impl Default for StrataSpec {
    fn default() -> Self {
        Self {
            head_min: 20,
            tail_max: 5,
            confidence_edges: vec![0.5, 0.8],
            unannotated: None,
        }
    }
}

impl StrataSpec {
    pub fn key(&self, p: &Prediction, confidence: f64) -> StratumKey {
        let frequency = if p.frequency >= self.head_min {
            FrequencyBin::Head
        } else if p.frequency <= self.tail_max {
            FrequencyBin::Tail
        } else {
            FrequencyBin::Body
        };
        StratumKey {
            frequency,
            family: p.family,
            seen: p.seen,
            pair_type: p.pair_type.clone(),
            confidence_bin: self.confidence_edges.iter().filter(|e| confidence >= **e).count(),
            annotated: p.annotated,
        }
    }
}

/// A group that could not fill its quota.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub group: String,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolOutcome {
    pub candidates: Vec<AuditCandidate>,
    pub shortfalls: Vec<Shortfall>,
}

/// Largest-remainder allocation of `total` across groups of the given sizes.
fn allocate(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quota: Vec<usize> = sizes.iter().map(|s| s * total / n).collect();
    let mut rest: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(k, s)| (s * total % n, k)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - quota.iter().sum::<usize>();
    for (_, k) in rest.into_iter().take(missing) {
        quota[k] += 1;
    }
    quota
}

/// Samples a blind audit pool from the union of all methods' predictions.
/// Predictions of the same relation by several methods become one
/// candidate. Sampling is proportional across strata; a group that cannot
/// meet its quota is taken whole and reported as a shortfall.
pub fn build_audit_pool(
    methods: &[MethodOutput],
    spec: &StrataSpec,
    size: usize,
    seed: u64,
) -> Result<PoolOutcome, AuditError> {
    if spec.unannotated.is_some_and(|u| u > size) {
        return Err(AuditError::Config("unannotated quota exceeds pool size".into()));
    }
    type Key = (String, u32, u32, String);
    let mut merged: BTreeMap<Key, (Prediction, BTreeMap<String, f64>)> = BTreeMap::new();
    for m in methods {
        for p in &m.predictions {
            let key = (p.scene_id.clone(), p.subject_id, p.object_id, p.phrase.clone());
            let entry = merged.entry(key).or_insert_with(|| (p.clone(), BTreeMap::new()));
            if p.confidence > entry.0.confidence {
                entry.0 = p.clone();
            }
            let c = entry.1.entry(m.name.clone()).or_insert(p.confidence);
            *c = c.max(p.confidence);
        }
    }
    let all: Vec<AuditCandidate> = merged
        .into_values()
        .map(|(p, sources)| AuditCandidate {
            id: String::new(),
            strata: spec.key(&p, p.confidence),
            scene_id: p.scene_id,
            subject_id: p.subject_id,
            object_id: p.object_id,
            phrase: p.phrase,
            family: p.family,
            source_methods: sources.into_keys().collect(),
            confidence: p.confidence,
            annotated: p.annotated,
            trace: p.trace,
        })
        .collect();

    let groups: Vec<(&str, Vec<AuditCandidate>, usize)> = match spec.unannotated {
        Some(u) => {
            let (ann, unann): (Vec<_>, Vec<_>) = all.into_iter().partition(|c| c.annotated);
            vec![("unannotated", unann, u), ("annotated", ann, size - u)]
        }
        None => vec![("all", all, size)],
    };
    let mut shortfalls = Vec::new();
    let mut chosen = Vec::new();
    for (g, (name, members, target)) in groups.into_iter().enumerate() {
        if target > members.len() {
            shortfalls.push(Shortfall {
                group: name.into(),
                requested: target,
                available: members.len(),
            });
        }
        let target = target.min(members.len());
        let mut strata: BTreeMap<StratumKey, Vec<AuditCandidate>> = BTreeMap::new();
        for c in members {
            strata.entry(c.strata.clone()).or_default().push(c);
        }
        let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
        let quotas = allocate(&sizes, target);
        for (s, (members, q)) in strata.into_values().zip(quotas).enumerate() {
            let mut members = members;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[g as u64, s as u64]));
            members.shuffle(&mut rng);
            chosen.extend(members.into_iter().take(q));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX]));
    chosen.shuffle(&mut rng);
    for (k, c) in chosen.iter_mut().enumerate() {
        c.id = format!("c{k:05}");
    }
    Ok(PoolOutcome {
        candidates: chosen,
        shortfalls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_allocation() {
        assert_eq!(allocate(&[5, 3, 2], 5), vec![3, 1, 1]);
        assert_eq!(allocate(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(allocate(&[], 0), Vec::<usize>::new());
        assert_eq!(allocate(&[4, 6], 10), vec![4, 6]);
    }
}
