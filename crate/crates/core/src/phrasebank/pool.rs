use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{cosine, embed_phrase};
use super::normalize::normalize_phrase;
use super::parse::{argmax_family, polarity, Lexicon, Polarity, WitnessFamily};

/// Cosine at or above which two phrases of the same directional group merge.
pub const CLUSTER_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPhrase {
    pub raw: String,
    pub normalized: String,
    pub cluster_id: usize,
    pub embedding: Vec<f64>,
    pub family_dist: [f64; 8],
    pub role_sensitivity: f64,
    pub directional: bool,
    pub polarity: Polarity,
}

impl RelationPhrase {
    pub fn family(&self) -> WitnessFamily {
        argmax_family(&self.family_dist)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("no phrase sources given")]
    NoSources,
    #[error("phrase pool is empty after normalization")]
    Empty,
}

/// The open relation vocabulary, deduplicated and clustered. Cluster ids are
/// assigned in first-seen order; a cluster's first phrase is its representative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhrasePool {
    phrases: Vec<RelationPhrase>,
}

impl PhrasePool {
    pub fn phrases(&self) -> &[RelationPhrase] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn get(&self, normalized: &str) -> Option<&RelationPhrase> {
        self.phrases.iter().find(|p| p.normalized == normalized)
    }

    pub fn cluster_count(&self) -> usize {
        self.phrases.iter().map(|p| p.cluster_id + 1).max().unwrap_or(0)
    }

    /// First member of every cluster, in cluster order.
    pub fn representatives(&self) -> Vec<&RelationPhrase> {
        let mut seen = vec![false; self.cluster_count()];
        self.phrases
            .iter()
            .filter(|p| !std::mem::replace(&mut seen[p.cluster_id], true))
            .collect()
    }

    pub fn cluster_members(&self, cluster_id: usize) -> Vec<&RelationPhrase> {
        self.phrases.iter().filter(|p| p.cluster_id == cluster_id).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.phrases
            .iter()
            .map(|p| serde_json::to_string(p).expect("phrase serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let phrases = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { phrases })
    }
}

/// Normalizes, deduplicates, embeds, parses and clusters the union of the
/// sources. A phrase joins the first earlier cluster whose representative it
/// matches at [`CLUSTER_THRESHOLD`] with the same polarity.
pub fn build_pool(sources: &[Vec<String>], lexicon: &Lexicon, threshold: f64) -> Result<PhrasePool, PoolError> {
    if sources.is_empty() {
        return Err(PoolError::NoSources);
    }
    let mut first_raw: BTreeMap<String, String> = BTreeMap::new();
    let mut order = Vec::new();
    for raw in sources.iter().flatten() {
        let n = normalize_phrase(raw);
        if n.is_empty() || first_raw.contains_key(&n) {
            continue;
        }
        first_raw.insert(n.clone(), raw.clone());
        order.push(n);
    }
    if order.is_empty() {
        return Err(PoolError::Empty);
    }
    let mut phrases: Vec<RelationPhrase> = Vec::new();
    let mut reps: Vec<usize> = Vec::new();
    for n in order {
        let embedding = embed_phrase(&n);
        let (family_dist, role_sensitivity) = lexicon.parse(&n);
        let pol = polarity(&n);
        let cluster_id = reps
            .iter()
            .position(|&r| phrases[r].polarity == pol && cosine(&phrases[r].embedding, &embedding) >= threshold)
            .unwrap_or_else(|| {
                reps.push(phrases.len());
                reps.len() - 1
            });
        phrases.push(RelationPhrase {
            raw: first_raw[&n].clone(),
            normalized: n,
            cluster_id,
            embedding,
            family_dist,
            role_sensitivity,
            directional: pol != Polarity::None,
            polarity: pol,
        });
    }
    Ok(PhrasePool { phrases })
}

/// Pool built from the shipped lexicon alone.
pub fn shipped_pool(lexicon: &Lexicon) -> PhrasePool {
    let phrases: Vec<String> = lexicon.entries().map(|e| e.phrase.clone()).collect();
    build_pool(&[phrases], lexicon, CLUSTER_THRESHOLD).expect("shipped lexicon is nonempty")
}
