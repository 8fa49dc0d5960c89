//! Final ranking of verified candidates, duplicate suppression and scene
//! graph files.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{obb_iou, Obb};
use crate::phrasebank::{cosine, embed_phrase, RelationPhrase, WitnessFamily};
use crate::scenekit::{Scene, SCHEMA_VERSION};
use crate::viewwit::WitnessTrace;

/// Grid resolution for trace box overlap.
const TRACE_IOU_RES: usize = 10;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("edge {subject}->{object} references an object missing from scene {scene}")]
    Dangling { scene: String, subject: u32, object: u32 },
    #[error("scene graph: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub lambda_q: f64,
    pub epsilon: f64,
    pub text_threshold: f64,
    pub trace_threshold: f64,
    /// Edges kept per ordered pair in the emitted graph.
    pub top_n: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            lambda_q: 0.5,
            epsilon: 1e-6,
            text_threshold: 0.8,
            trace_threshold: 0.5,
            top_n: 3,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DecodeError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda_q >= 0.0 && self.lambda_q.is_finite()) {
            return Err(DecodeError::Config(format!(
                "lambda_q must be non-negative, got {}",
                self.lambda_q
            )));
        }
        if !open_unit(self.text_threshold) || !open_unit(self.trace_threshold) {
            return Err(DecodeError::Config("thresholds must lie in (0, 1)".into()));
        }
        if self.top_n == 0 {
            return Err(DecodeError::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// A candidate with its classifier score and witness quality.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub cluster_id: usize,
    pub family: WitnessFamily,
    pub score: f64,
    pub quality: f64,
    pub trace: WitnessTrace,
}

impl ScoredCandidate {
    pub fn new(
        subject_id: u32,
        object_id: u32,
        phrase: &RelationPhrase,
        score: f64,
        quality: f64,
        trace: WitnessTrace,
    ) -> Self {
        Self {
            subject_id,
            object_id,
            phrase: phrase.normalized.clone(),
            cluster_id: phrase.cluster_id,
            family: phrase.family(),
            score,
            quality,
            trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedEdge {
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub cluster_id: usize,
    pub family: WitnessFamily,
    pub score: f64,
    pub quality: f64,
    pub final_score: f64,
    pub trace: WitnessTrace,
    pub merged_aliases: Vec<String>,
}

pub fn final_score(score: f64, quality: f64, lambda_q: f64, epsilon: f64) -> f64 {
    score + lambda_q * (quality + epsilon).ln()
}

/// Descending final score; ties go to the lower cluster id, then the
/// smaller phrase, then the smaller pair.
fn rank_order(a: &DecodedEdge, b: &DecodedEdge) -> Ordering {
    b.final_score
        .total_cmp(&a.final_score)
        .then(a.cluster_id.cmp(&b.cluster_id))
        .then(a.phrase.cmp(&b.phrase))
        .then((a.subject_id, a.object_id).cmp(&(b.subject_id, b.object_id)))
}

pub fn rescore(candidates: Vec<ScoredCandidate>, lambda_q: f64, epsilon: f64) -> Result<Vec<DecodedEdge>, DecodeError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(DecodeError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut edges: Vec<DecodedEdge> = candidates
        .into_iter()
        .map(|c| DecodedEdge {
            final_score: final_score(c.score, c.quality, lambda_q, epsilon),
            subject_id: c.subject_id,
            object_id: c.object_id,
            phrase: c.phrase,
            cluster_id: c.cluster_id,
            family: c.family,
            score: c.score,
            quality: c.quality,
            trace: c.trace,
            merged_aliases: Vec::new(),
        })
        .collect();
    edges.sort_by(rank_order);
    Ok(edges)
}

/// Overlap of two traces' 3D regions. Two traces without a region count as
/// the same trace; one region against none counts as disjoint.
pub fn trace_overlap(a: &WitnessTrace, b: &WitnessTrace) -> f64 {
    match (&a.region_3d, &b.region_3d) {
        (Some(x), Some(y)) => region_iou(x, y),
        (None, None) => 1.0,
        _ => 0.0,
    }
}

fn region_iou(a: &Obb, b: &Obb) -> f64 {
    if a == b {
        1.0
    } else {
        obb_iou(a, b, TRACE_IOU_RES)
    }
}

/// Whether two edges duplicate each other: same ordered pair, same witness
/// family, similar phrases and overlapping traces.
pub fn is_redundant(a: &DecodedEdge, b: &DecodedEdge, text_threshold: f64, trace_threshold: f64) -> bool {
    a.subject_id == b.subject_id
        && a.object_id == b.object_id
        && a.family == b.family
        && cosine(&embed_phrase(&a.phrase), &embed_phrase(&b.phrase)) >= text_threshold
        && trace_overlap(&a.trace, &b.trace) >= trace_threshold
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    /// Keeps the smaller index as root, so a component's root is its
    /// highest-ranked member.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
    }
}

/// Merges duplicates into the highest-ranked edge of each group of
/// transitively redundant edges, then drops proximity edges outranked by a
/// surviving support or containment edge on the same object pair.
pub fn suppress_redundant(mut edges: Vec<DecodedEdge>, text_threshold: f64, trace_threshold: f64) -> Vec<DecodedEdge> {
    edges.sort_by(rank_order);
    let embeddings: Vec<Vec<f64>> = edges.iter().map(|e| embed_phrase(&e.phrase)).collect();
    let mut uf = UnionFind((0..edges.len()).collect());
    let mut by_group: HashMap<(u32, u32, WitnessFamily), Vec<usize>> = HashMap::new();
    for (k, e) in edges.iter().enumerate() {
        by_group
            .entry((e.subject_id, e.object_id, e.family))
            .or_default()
            .push(k);
    }
    for members in by_group.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[..x] {
                if cosine(&embeddings[a], &embeddings[b]) >= text_threshold
                    && trace_overlap(&edges[a].trace, &edges[b].trace) >= trace_threshold
                {
                    uf.union(a, b);
                }
            }
        }
    }
    let mut absorbed: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (k, e) in edges.iter().enumerate() {
        let root = uf.find(k);
        if root != k {
            let aliases = absorbed.entry(root).or_default();
            aliases.push(e.phrase.clone());
            aliases.extend(e.merged_aliases.iter().cloned());
        }
    }
    let mut kept: Vec<DecodedEdge> = Vec::new();
    for (k, mut e) in edges.into_iter().enumerate() {
        if uf.find(k) != k {
            continue;
        }
        for alias in absorbed.remove(&k).unwrap_or_default() {
            if alias != e.phrase && !e.merged_aliases.contains(&alias) {
                e.merged_aliases.push(alias);
            }
        }
        kept.push(e);
    }
    let dominated = |e: &DecodedEdge| {
        e.family == WitnessFamily::Proximity
            && kept.iter().any(|o| {
                matches!(o.family, WitnessFamily::Support | WitnessFamily::Containment)
                    && same_objects(o, e)
                    && o.final_score >= e.final_score
            })
    };
    let drop: Vec<bool> = kept.iter().map(dominated).collect();
    kept.into_iter().zip(drop).filter(|(_, d)| !d).map(|(e, _)| e).collect()
}

fn same_objects(a: &DecodedEdge, b: &DecodedEdge) -> bool {
    let key = |e: &DecodedEdge| (e.subject_id.min(e.object_id), e.subject_id.max(e.object_id));
    key(a) == key(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub kind: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub scene_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: u32,
    pub category: String,
    pub obb: Obb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub header: GraphHeader,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<DecodedEdge>,
}

impl SceneGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DecodeError> {
        let g: SceneGraph = serde_json::from_str(text).map_err(|e| DecodeError::Format(e.to_string()))?;
        if g.header.kind != "scene_graph" {
            return Err(DecodeError::Format(format!("unexpected kind {:?}", g.header.kind)));
        }
        if g.header.schema_version != SCHEMA_VERSION {
            return Err(DecodeError::Format(format!(
                "unsupported schema_version {}",
                g.header.schema_version
            )));
        }
        Ok(g)
    }
}

/// Builds the scene graph from ranked edges, keeping the first `top_n`
/// edges of each ordered pair.
pub fn emit_graph(
    scene: &Scene,
    edges: &[DecodedEdge],
    top_n: usize,
    config_hash: &str,
) -> Result<SceneGraph, DecodeError> {
    if top_n == 0 {
        return Err(DecodeError::Config("top_n must be at least 1".into()));
    }
    let mut sorted: Vec<&DecodedEdge> = edges.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let mut per_pair: HashMap<(u32, u32), usize> = HashMap::new();
    let mut out = Vec::new();
    for e in sorted {
        if scene.object(e.subject_id).is_none() || scene.object(e.object_id).is_none() {
            return Err(DecodeError::Dangling {
                scene: scene.name.clone(),
                subject: e.subject_id,
                object: e.object_id,
            });
        }
        let n = per_pair.entry((e.subject_id, e.object_id)).or_default();
        if *n < top_n {
            *n += 1;
            out.push(e.clone());
        }
    }
    Ok(SceneGraph {
        header: GraphHeader {
            kind: "scene_graph".into(),
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.into(),
            scene_id: scene.name.clone(),
        },
        nodes: scene
            .objects
            .iter()
            .map(|o| GraphNode {
                id: o.id,
                category: o.category.clone(),
                obb: o.obb,
            })
            .collect(),
        edges: out,
    })
}

/// Rescoring, suppression and emission in one call.
pub fn decode_scene(
    scene: &Scene,
    candidates: Vec<ScoredCandidate>,
    config: &DecodeConfig,
    config_hash: &str,
) -> Result<SceneGraph, DecodeError> {
    config.validate()?;
    let ranked = rescore(candidates, config.lambda_q, config.epsilon)?;
    let kept = suppress_redundant(ranked, config.text_threshold, config.trace_threshold);
    emit_graph(scene, &kept, config.top_n, config_hash)
}
