//! Geometry-blind category co-occurrence prior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::phrasebank::{normalize_phrase, PhrasePool};
use crate::scenekit::{LabelStatus, Scene};

/// Laplace-smoothed frequency of `(c_i, r, c_j)` among annotated positives:
/// `(n_pos + prior_r) / (n_pairs + 2)`, where `prior_r` is the cluster's
/// overall rate per ordered pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NullPrior {
    positives: BTreeMap<String, u32>,
    pairs: BTreeMap<String, u32>,
    cluster_rate: BTreeMap<usize, f64>,
}

fn pair_key(ci: &str, cj: &str) -> String {
    format!("{ci}|{cj}")
}

impl NullPrior {
    /// Counts annotated positives only; unlabeled and hidden labels are ignored.
    pub fn from_scenes<'a>(scenes: impl IntoIterator<Item = &'a Scene>, pool: &PhrasePool) -> Self {
        let mut prior = Self::default();
        let mut total_pairs = 0u32;
        let mut per_cluster: BTreeMap<usize, u32> = BTreeMap::new();
        for scene in scenes {
            for (i, j) in scene.ordered_pairs() {
                let (a, b) = (scene.object(i).expect("pair id"), scene.object(j).expect("pair id"));
                *prior.pairs.entry(pair_key(&a.category, &b.category)).or_default() += 1;
                total_pairs += 1;
            }
            let mut seen = std::collections::BTreeSet::new();
            for l in scene
                .labels
                .iter()
                .filter(|l| l.status == LabelStatus::AnnotatedPositive)
            {
                let Some(p) = pool.get(&normalize_phrase(&l.phrase)) else {
                    continue;
                };
                if !seen.insert((l.subject_id, l.object_id, p.cluster_id)) {
                    continue;
                }
                let (Some(a), Some(b)) = (scene.object(l.subject_id), scene.object(l.object_id)) else {
                    continue;
                };
                let key = format!("{}|{}", pair_key(&a.category, &b.category), p.cluster_id);
                *prior.positives.entry(key).or_default() += 1;
                *per_cluster.entry(p.cluster_id).or_default() += 1;
            }
        }
        if total_pairs > 0 {
            for (c, n) in per_cluster {
                prior.cluster_rate.insert(c, (n as f64 / total_pairs as f64).min(1.0));
            }
        }
        prior
    }

    pub fn score(&self, ci: &str, cj: &str, cluster_id: usize) -> f64 {
        let pk = pair_key(ci, cj);
        let n = *self.pairs.get(&pk).unwrap_or(&0) as f64;
        let pos = *self.positives.get(&format!("{pk}|{cluster_id}")).unwrap_or(&0) as f64;
        let prior = self.cluster_rate.get(&cluster_id).copied().unwrap_or(0.0);
        ((pos + prior) / (n + 2.0)).clamp(0.0, 1.0)
    }
}
