//! Family-balanced witness memory with capped buckets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Decision;
use crate::phrasebank::WitnessFamily;
use crate::scenekit::ObjectInstance;
use crate::viewwit::WitnessRecord;

pub const DEFAULT_CAP: usize = 64;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("malformed memory checkpoint at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn size_class(o: &ObjectInstance) -> &'static str {
    let v = o.obb.volume();
    if v < 0.02 {
        "small"
    } else if v < 0.3 {
        "medium"
    } else {
        "large"
    }
}

/// Coarse object-pair type from the two box volumes.
pub fn pair_type(subject: &ObjectInstance, object: &ObjectInstance) -> String {
    format!("{}-{}", size_class(subject), size_class(object))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub decision: Decision,
    pub family: WitnessFamily,
    pub pair_type: String,
    pub seen: bool,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key: BucketKey,
    pub quality: f64,
    pub uncertainty: f64,
    pub record: WitnessRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessMemory {
    pub cap: usize,
    buckets: BTreeMap<BucketKey, Vec<MemoryEntry>>,
    pub inserted: u64,
    pub evicted: u64,
}

impl WitnessMemory {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            buckets: BTreeMap::new(),
            inserted: 0,
            evicted: 0,
        }
    }

    /// Larger is kept longer: Q for positives, 1 - Q for negatives and
    /// 1 - U for uncertain entries.
    fn keep_score(e: &MemoryEntry) -> f64 {
        match e.key.decision {
            Decision::MissPositive => e.quality,
            Decision::ReliableNegative => 1.0 - e.quality,
            Decision::Uncertain => 1.0 - e.uncertainty,
        }
    }

    /// Inserts an entry, evicting the bucket's weakest entry at capacity.
    /// Returns the evicted entry, which may be the new one.
    pub fn insert(&mut self, entry: MemoryEntry) -> Option<MemoryEntry> {
        self.inserted += 1;
        let cap = self.cap;
        let bucket = self.buckets.entry(entry.key.clone()).or_default();
        bucket.push(entry);
        if bucket.len() <= cap {
            return None;
        }
        // The first minimum wins so ties evict the oldest entry.
        let (idx, _) = bucket
            .iter()
            .enumerate()
            .min_by(|a, b| Self::keep_score(a.1).total_cmp(&Self::keep_score(b.1)))
            .expect("nonempty bucket");
        self.evicted += 1;
        Some(bucket.remove(idx))
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, decision: Decision) -> usize {
        self.buckets
            .iter()
            .filter(|(k, _)| k.decision == decision)
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&BucketKey, &[MemoryEntry])> {
        self.buckets.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn entries(&self, decision: Decision) -> impl Iterator<Item = &MemoryEntry> {
        self.buckets
            .iter()
            .filter(move |(k, _)| k.decision == decision)
            .flat_map(|(_, v)| v.iter())
    }

    /// Draws `n` entries of one decision class: a bucket with probability
    /// proportional to `1 + cap - size`, then an entry uniformly.
    pub fn sample(&self, decision: Decision, n: usize, seed: u64) -> Vec<&MemoryEntry> {
        let buckets: Vec<&Vec<MemoryEntry>> = self
            .buckets
            .iter()
            .filter(|(k, v)| k.decision == decision && !v.is_empty())
            .map(|(_, v)| v)
            .collect();
        if buckets.is_empty() {
            return Vec::new();
        }
        let weights: Vec<f64> = buckets
            .iter()
            .map(|b| 1.0 + self.cap.saturating_sub(b.len()) as f64)
            .collect();
        let total: f64 = weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut r = rng.random::<f64>() * total;
                let mut pick = buckets.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    if r < *w {
                        pick = k;
                        break;
                    }
                    r -= w;
                }
                let b = buckets[pick];
                &b[rng.random_range(0..b.len())]
            })
            .collect()
    }

    /// Header line with the config hash, then one entry per line.
    pub fn to_jsonl(&self, config_hash: &str) -> String {
        let header = serde_json::json!({
            "kind": "memory",
            "schema_version": crate::scenekit::SCHEMA_VERSION,
            "config_hash": config_hash,
            "cap": self.cap,
            "inserted": self.inserted,
            "evicted": self.evicted,
        });
        let mut out = header.to_string();
        out.push('\n');
        for v in self.buckets.values() {
            for e in v {
                out.push_str(&serde_json::to_string(e).expect("entry serializes"));
                out.push('\n');
            }
        }
        out
    }

    /// Returns the memory and the stored config hash.
    pub fn from_jsonl(text: &str) -> Result<(Self, String), MemoryError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, message: String| MemoryError::Malformed {
            line: line + 1,
            message,
        };
        let (n, head) = lines.next().ok_or_else(|| bad(0, "empty checkpoint".into()))?;
        let h: serde_json::Value = serde_json::from_str(head).map_err(|e| bad(n, e.to_string()))?;
        if h["kind"] != "memory" {
            return Err(bad(n, "missing memory header".into()));
        }
        let cap = h["cap"].as_u64().ok_or_else(|| bad(n, "missing cap".into()))? as usize;
        let mut mem = Self::new(cap);
        for (n, l) in lines {
            let e: MemoryEntry = serde_json::from_str(l).map_err(|e| bad(n, e.to_string()))?;
            mem.buckets.entry(e.key.clone()).or_default().push(e);
        }
        mem.inserted = h["inserted"].as_u64().unwrap_or(0);
        mem.evicted = h["evicted"].as_u64().unwrap_or(0);
        let hash = h["config_hash"].as_str().unwrap_or_default().to_string();
        Ok((mem, hash))
    }
}
