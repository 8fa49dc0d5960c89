//! Pluggable per-view appearance scorers.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::{derive_seed, fnv64};
use crate::oracle::TruthOracle;
use crate::phrasebank::{Lexicon, RelationPhrase};
use crate::scenekit::{Mask2D, Scene};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer process: {0}")]
    Process(String),
    #[error("scorer protocol: {0}")]
    Protocol(String),
}

/// One appearance query: a frame, both visible masks and the phrase.
pub struct RgbQuery<'a> {
    pub scene: &'a Scene,
    pub frame: usize,
    pub subject_id: u32,
    pub object_id: u32,
    pub subject_mask: &'a Mask2D,
    pub object_mask: &'a Mask2D,
    pub phrase: &'a RelationPhrase,
}

/// Appearance witness `psi_rgb`. Outputs are clamped to `[0, 1]` by callers.
pub trait RgbScorer: Send + Sync {
    fn score(&self, query: &RgbQuery<'_>) -> Result<f64, ScorerError>;
}

/// Constant 0.5: no appearance evidence either way.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullScorer;

impl RgbScorer for NullScorer {
    fn score(&self, _: &RgbQuery<'_>) -> Result<f64, ScorerError> {
        Ok(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoiseConfig {
    pub positive_mean: f64,
    pub negative_mean: f64,
    /// Noise shared by every view of a candidate.
    pub candidate_sigma: f64,
    /// Independent noise per view.
    pub view_sigma: f64,
    pub bias: f64,
    pub seed: u64,
}

impl Default for OracleNoiseConfig {
    fn default() -> Self {
        Self {
            positive_mean: 0.75,
            negative_mean: 0.25,
            candidate_sigma: 0.1,
            view_sigma: 0.15,
            bias: 0.0,
            seed: 17,
        }
    }
}

/// Simulated appearance model: reads hidden truth and adds seeded noise.
/// Evaluation harnesses only.
pub struct OracleNoisyScorer {
    lexicon: Lexicon,
    config: OracleNoiseConfig,
    truths: Mutex<HashMap<String, Arc<TruthOracle>>>,
}

impl OracleNoisyScorer {
    pub fn new(lexicon: Lexicon, config: OracleNoiseConfig) -> Self {
        Self {
            lexicon,
            config,
            truths: Mutex::new(HashMap::new()),
        }
    }

    fn oracle(&self, scene: &Scene) -> Arc<TruthOracle> {
        let mut map = self.truths.lock().expect("oracle cache poisoned");
        map.entry(scene.name.clone())
            .or_insert_with(|| Arc::new(TruthOracle::from_scene(scene, &self.lexicon)))
            .clone()
    }

    fn normal(seed: u64) -> f64 {
        StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

impl RgbScorer for OracleNoisyScorer {
    fn score(&self, q: &RgbQuery<'_>) -> Result<f64, ScorerError> {
        let c = &self.config;
        let truth = self.oracle(q.scene).holds(q.subject_id, q.object_id, q.phrase);
        let base = if truth { c.positive_mean } else { c.negative_mean };
        let key = derive_seed(
            c.seed,
            &[
                fnv64(0, &q.scene.name),
                q.subject_id as u64,
                q.object_id as u64,
                fnv64(1, &q.phrase.normalized),
            ],
        );
        let shared = c.candidate_sigma * Self::normal(key);
        let own = c.view_sigma * Self::normal(derive_seed(key, &[q.frame as u64 + 1]));
        Ok((base + c.bias + shared + own).clamp(0.0, 1.0))
    }
}

#[derive(Serialize)]
struct Request<'a> {
    scene_id: &'a str,
    frame: usize,
    subject_id: u32,
    object_id: u32,
    phrase: &'a str,
    subject_bbox: Option<[u32; 4]>,
    object_bbox: Option<[u32; 4]>,
    subject_pixels: usize,
    object_pixels: usize,
}

#[derive(Deserialize)]
struct Response {
    score: f64,
}

/// Line protocol over a child's stdio: one JSON request per line in, one
/// `{"score": x}` line out. Calls are serialized.
pub struct ExternalScorer {
    io: Mutex<(ChildStdin, BufReader<ChildStdout>)>,
    child: Mutex<Child>,
}

impl ExternalScorer {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ScorerError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ScorerError::Process(format!("{program}: {e}")))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| ScorerError::Process("no stdin".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| ScorerError::Process("no stdout".into()))?;
        Ok(Self {
            io: Mutex::new((stdin, BufReader::new(stdout))),
            child: Mutex::new(child),
        })
    }
}

impl RgbScorer for ExternalScorer {
    fn score(&self, q: &RgbQuery<'_>) -> Result<f64, ScorerError> {
        let req = Request {
            scene_id: &q.scene.name,
            frame: q.frame,
            subject_id: q.subject_id,
            object_id: q.object_id,
            phrase: &q.phrase.normalized,
            subject_bbox: q.subject_mask.bbox(),
            object_bbox: q.object_mask.bbox(),
            subject_pixels: q.subject_mask.count(),
            object_pixels: q.object_mask.count(),
        };
        let mut line = serde_json::to_string(&req).map_err(|e| ScorerError::Protocol(e.to_string()))?;
        line.push('\n');
        let mut io = self.io.lock().expect("scorer pipe poisoned");
        io.0.write_all(line.as_bytes())
            .and_then(|_| io.0.flush())
            .map_err(|e| ScorerError::Process(e.to_string()))?;
        let mut reply = String::new();
        let n =
            io.1.read_line(&mut reply)
                .map_err(|e| ScorerError::Process(e.to_string()))?;
        if n == 0 {
            return Err(ScorerError::Process("scorer closed its output".into()));
        }
        let r: Response = serde_json::from_str(reply.trim()).map_err(|e| ScorerError::Protocol(e.to_string()))?;
        if !r.score.is_finite() {
            return Err(ScorerError::Protocol(format!("non-finite score {}", r.score)));
        }
        Ok(r.score.clamp(0.0, 1.0))
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        if let Ok(mut c) = self.child.lock() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}
