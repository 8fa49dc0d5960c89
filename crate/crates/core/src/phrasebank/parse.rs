use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{cosine, embed_phrase};
use super::normalize::normalize_phrase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessFamily {
    Support,
    Containment,
    Proximity,
    VerticalOrder,
    Attachment,
    Orientation,
    Interaction,
    FunctionalUncertain,
}

impl WitnessFamily {
    pub const COUNT: usize = 8;
    pub const ALL: [WitnessFamily; 8] = [
        Self::Support,
        Self::Containment,
        Self::Proximity,
        Self::VerticalOrder,
        Self::Attachment,
        Self::Orientation,
        Self::Interaction,
        Self::FunctionalUncertain,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Support => "support",
            Self::Containment => "containment",
            Self::Proximity => "proximity",
            Self::VerticalOrder => "vertical_order",
            Self::Attachment => "attachment",
            Self::Orientation => "orientation",
            Self::Interaction => "interaction",
            Self::FunctionalUncertain => "functional_uncertain",
        }
    }
}

/// Direction carried by a directional phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    None,
    Up,
    Down,
    Front,
    Behind,
}

/// Reviewed list of directional relation phrases.
pub const DIRECTIONAL: &[(&str, Polarity)] = &[
    ("above", Polarity::Up),
    ("over", Polarity::Up),
    ("below", Polarity::Down),
    ("under", Polarity::Down),
    ("beneath", Polarity::Down),
    ("underneath", Polarity::Down),
    ("in front of", Polarity::Front),
    ("behind", Polarity::Behind),
];

/// Polarity of a normalized phrase: the first directional entry that occurs
/// in it as a whole-word run.
pub fn polarity(normalized: &str) -> Polarity {
    let padded = format!(" {normalized} ");
    DIRECTIONAL
        .iter()
        .find(|(p, _)| padded.contains(&format!(" {p} ")))
        .map(|(_, pol)| *pol)
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub phrase: String,
    pub family: WitnessFamily,
    pub directed: bool,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("lexicon is empty")]
    Empty,
}

/// Mass given to the matched family on an exact lexicon hit.
pub const EXACT_MASS: f64 = 0.93;
/// Softmax temperature over per-family best cosines for unmatched phrases.
const SOFT_TEMPERATURE: f64 = 0.05;
/// Below this best cosine a phrase is treated as having no geometric reading.
const FALLBACK_COSINE: f64 = 0.35;

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<(LexiconEntry, String, Vec<f64>)>,
}

pub const SHIPPED_LEXICON: &str = include_str!("../../data/lexicon.jsonl");

impl Lexicon {
    pub fn from_jsonl(text: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: LexiconEntry = serde_json::from_str(line).map_err(|err| LexiconError::Malformed {
                line: k + 1,
                message: err.to_string(),
            })?;
            let norm = normalize_phrase(&e.phrase);
            if norm.is_empty() {
                return Err(LexiconError::Malformed {
                    line: k + 1,
                    message: "phrase normalizes to nothing".into(),
                });
            }
            let emb = embed_phrase(&norm);
            entries.push((e, norm, emb));
        }
        if entries.is_empty() {
            return Err(LexiconError::Empty);
        }
        Ok(Self { entries })
    }

    pub fn shipped() -> Self {
        Self::from_jsonl(SHIPPED_LEXICON).expect("shipped lexicon parses")
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.iter().map(|(e, _, _)| e)
    }

    pub fn lookup(&self, normalized: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|(_, n, _)| n == normalized).map(|(e, _, _)| e)
    }

    /// Family distribution and role sensitivity of a normalized phrase.
    pub fn parse(&self, normalized: &str) -> ([f64; 8], f64) {
        if let Some(e) = self.lookup(normalized) {
            let mut pi = [(1.0 - EXACT_MASS) / 7.0; 8];
            pi[e.family.index()] = EXACT_MASS;
            return (pi, if e.directed { 1.0 } else { 0.0 });
        }
        let emb = embed_phrase(normalized);
        let mut best = [f64::NEG_INFINITY; 8];
        let mut directed = [0.0; 8];
        for (e, _, v) in &self.entries {
            let c = cosine(&emb, v);
            let f = e.family.index();
            if c > best[f] {
                best[f] = c;
                directed[f] = if e.directed { 1.0 } else { 0.0 };
            }
        }
        let top = best.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let fu = WitnessFamily::FunctionalUncertain.index();
        if top < FALLBACK_COSINE {
            let mut pi = [(1.0 - EXACT_MASS) / 7.0; 8];
            pi[fu] = EXACT_MASS;
            return (pi, 0.0);
        }
        let mut pi = [0.0; 8];
        for f in 0..8 {
            pi[f] = if best[f].is_finite() {
                ((best[f] - top) / SOFT_TEMPERATURE).exp()
            } else {
                0.0
            };
        }
        let z: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= z);
        let d = (0..8).map(|f| pi[f] * directed[f]).sum::<f64>().clamp(0.0, 1.0);
        (pi, d)
    }
}

/// Index of the largest entry; ties resolve to the lower index.
pub fn argmax_family(pi: &[f64; 8]) -> WitnessFamily {
    let mut best = 0;
    for k in 1..8 {
        if pi[k] > pi[best] {
            best = k;
        }
    }
    WitnessFamily::ALL[best]
}
