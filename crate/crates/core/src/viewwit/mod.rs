//! View selection, per-view witness scores, pooling and witness records.

mod depth;
mod null;
mod scorers;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_between, sigmoid, Obb, Vec3};
use crate::phrasebank::{argmax_family, PhrasePool, RelationPhrase, WitnessFamily};
use crate::probes::{measure_pair, probe_vector, s3d_score, PairMeasurements, ProbeError, ProbeParams};
use crate::scenekit::{mask_and_visibility, Mask2D, ObjectInstance, Scene};

pub use depth::{NEUTRAL, SUPPORT_GAP};
pub use null::NullPrior;
pub use scorers::{ExternalScorer, NullScorer, OracleNoiseConfig, OracleNoisyScorer, RgbQuery, RgbScorer, ScorerError};

#[derive(Debug, Error)]
pub enum WitnessError {
    #[error("unknown object id {0}")]
    UnknownObject(u32),
    #[error("phrase {0:?} is not in the pool")]
    UnknownPhrase(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WitnessParams {
    pub tau_v: f64,
    pub max_views: usize,
    /// Views closer than this to a chosen view lose novelty, degrees.
    pub diversity_deg: f64,
    /// Mask pixels at which mask quality saturates.
    pub full_mask_pixels: f64,
    pub top_m: usize,
    pub epsilon: f64,
}

impl Default for WitnessParams {
    fn default() -> Self {
        Self {
            tau_v: 0.2,
            max_views: 6,
            diversity_deg: 15.0,
            full_mask_pixels: 200.0,
            top_m: 4,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub frame_index: usize,
    pub s_rgb: f64,
    pub s_dep: f64,
    pub rho: f64,
}

/// A frame chosen for a pair with its reliability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedView {
    pub frame_index: usize,
    pub rho: f64,
    pub novel: bool,
}

#[derive(Debug, Clone)]
struct ObjectView {
    mask: Mask2D,
    visibility: f64,
    pixels: usize,
}

/// Visible masks, visibilities and rendered pixel counts of every object in
/// every frame, computed once per scene.
#[derive(Debug, Clone)]
pub struct SceneViews {
    views: BTreeMap<u32, Vec<ObjectView>>,
}

impl SceneViews {
    pub fn new(scene: &Scene) -> Self {
        let renders: Vec<_> = (0..scene.frames.len())
            .into_par_iter()
            .map(|t| scene.rendering(t))
            .collect();
        let views = scene
            .objects
            .par_iter()
            .map(|o| {
                let per_frame = (0..scene.frames.len())
                    .map(|t| {
                        let (mask, visibility) = mask_and_visibility(scene, o.id, t);
                        let pixels = renders[t]
                            .as_ref()
                            .map_or(0, |r| r.rgb_proxy.ids.iter().filter(|v| **v == Some(o.id)).count());
                        ObjectView {
                            mask,
                            visibility,
                            pixels,
                        }
                    })
                    .collect();
                (o.id, per_frame)
            })
            .collect();
        Self { views }
    }

    fn get(&self, id: u32, frame: usize) -> Option<&ObjectView> {
        self.views.get(&id)?.get(frame)
    }

    pub fn visibility(&self, id: u32, frame: usize) -> f64 {
        self.get(id, frame).map_or(0.0, |v| v.visibility)
    }

    pub fn mask(&self, id: u32, frame: usize) -> Option<&Mask2D> {
        self.get(id, frame).map(|v| &v.mask)
    }

    fn frames(&self) -> usize {
        self.views.values().next().map_or(0, Vec::len)
    }
}

/// Scored frame candidate for view selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewCandidate {
    pub frame_index: usize,
    /// Joint visibility times mask quality, before novelty.
    pub base: f64,
    /// Unit direction from the camera to the pair.
    pub direction: Vec3,
}

/// Greedy diverse selection: views are taken in descending `base` order and
/// a view within `diversity_deg` of an earlier pick is deferred. Deferred
/// views fill the remaining slots at half reliability.
pub fn select_ranked(mut cands: Vec<ViewCandidate>, max_views: usize, diversity_deg: f64) -> Vec<SelectedView> {
    cands.sort_by(|a, b| b.base.total_cmp(&a.base).then(a.frame_index.cmp(&b.frame_index)));
    let limit = diversity_deg.to_radians();
    let mut chosen: Vec<(SelectedView, Vec3)> = Vec::new();
    let mut deferred = Vec::new();
    for c in cands {
        if chosen.len() >= max_views {
            break;
        }
        if chosen.iter().all(|(_, d)| angle_between(d, &c.direction) >= limit) {
            chosen.push((
                SelectedView {
                    frame_index: c.frame_index,
                    rho: c.base,
                    novel: true,
                },
                c.direction,
            ));
        } else {
            deferred.push(c);
        }
    }
    for c in deferred {
        if chosen.len() >= max_views {
            break;
        }
        chosen.push((
            SelectedView {
                frame_index: c.frame_index,
                rho: 0.5 * c.base,
                novel: false,
            },
            c.direction,
        ));
    }
    chosen.into_iter().map(|(v, _)| v).collect()
}

/// Frames where both objects are visible above `tau_v`, ranked by
/// reliability with angular diversity.
pub fn select_views(scene: &Scene, views: &SceneViews, i: u32, j: u32, params: &WitnessParams) -> Vec<SelectedView> {
    let (Some(a), Some(b)) = (scene.object(i), scene.object(j)) else {
        return Vec::new();
    };
    let mid = (a.obb.center + b.obb.center) / 2.0;
    let cands = scene
        .frames
        .iter()
        .filter_map(|f| {
            let (vi, vj) = (views.get(i, f.index)?, views.get(j, f.index)?);
            if vi.visibility <= params.tau_v || vj.visibility <= params.tau_v {
                return None;
            }
            let quality = ((vi.pixels + vj.pixels) as f64 / params.full_mask_pixels).min(1.0);
            let dir = mid - f.pose.center();
            Some(ViewCandidate {
                frame_index: f.index,
                base: vi.visibility * vj.visibility * quality,
                direction: dir / dir.norm().max(1e-12),
            })
        })
        .collect();
    select_ranked(cands, params.max_views, params.diversity_deg)
}

/// Reliability-weighted average over the `top_m` most reliable views.
pub fn pool_rgb(views: &[ViewScore], top_m: usize, epsilon: f64) -> f64 {
    let mut sorted: Vec<&ViewScore> = views.iter().collect();
    sorted.sort_by(|a, b| b.rho.total_cmp(&a.rho));
    sorted.truncate(top_m.min(views.len()));
    let (num, den) = sorted
        .iter()
        .fold((0.0, 0.0), |(n, d), v| (n + v.rho * v.s_rgb, d + v.rho));
    (num / (den + epsilon)).clamp(0.0, 1.0)
}

/// Reliability-weighted average of per-view depth scores.
pub fn pool_depth(views: &[ViewScore], epsilon: f64) -> f64 {
    let (num, den) = views
        .iter()
        .fold((0.0, 0.0), |(n, d), v| (n + v.rho * v.s_dep, d + v.rho));
    (num / (den + epsilon)).clamp(0.0, 1.0)
}

/// `(1 - Var(x)) * mean(x) / 2` with `x_t = rho_t (s_rgb + s_dep)`, clamped.
pub fn multiview_score(views: &[ViewScore]) -> f64 {
    if views.is_empty() {
        return 0.0;
    }
    let x: Vec<f64> = views.iter().map(|v| v.rho * (v.s_rgb + v.s_dep)).collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ((1.0 - var) * mean / 2.0).clamp(0.0, 1.0)
}

pub fn role_score(s_ij: f64, s_ji: f64, d_r: f64) -> f64 {
    sigmoid(s_ij - s_ji).powf(d_r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WitnessTrace {
    pub supporting_frames: Vec<FrameScore>,
    /// Pixel box `[x0, y0, x1, y1]` of the pair per selected frame.
    pub region_2d: BTreeMap<usize, [u32; 4]>,
    /// Box around the decisive 3D points, in the object's frame.
    pub region_3d: Option<Obb>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub n_views: usize,
    pub min_visibility: f64,
    pub mask_point_count: usize,
    pub render_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub scene_id: String,
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub cluster_id: usize,
    pub s_rgb: f64,
    pub s_dep: f64,
    pub s_3d: f64,
    pub s_mv: f64,
    pub s_role: f64,
    pub s_null: f64,
    pub family_dist: [f64; 8],
    pub directional: f64,
    pub views: Vec<ViewScore>,
    pub trace: WitnessTrace,
    pub quality: QualitySummary,
}

impl WitnessRecord {
    pub fn scores(&self) -> [f64; 6] {
        [self.s_rgb, self.s_dep, self.s_3d, self.s_mv, self.s_role, self.s_null]
    }

    pub fn family(&self) -> WitnessFamily {
        argmax_family(&self.family_dist)
    }
}

/// Minimum half extent of a trace box, meters.
const TRACE_PAD: f64 = 0.01;

/// Box in `frame`'s orientation bounding `points`.
pub fn bounding_box_in(frame: &Obb, points: &[Vec3]) -> Option<Obb> {
    if points.is_empty() {
        return None;
    }
    let local: Vec<Vec3> = points.iter().map(|p| frame.rotation.transpose() * p).collect();
    let lo = local.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = local.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let half = ((hi - lo) / 2.0).map(|h| h.max(TRACE_PAD));
    let center = frame.rotation * ((hi + lo) / 2.0);
    Some(Obb::new(center, half, frame.rotation))
}

/// Decisive point subset of the probe for `family`.
pub fn decisive_points(
    family: WitnessFamily,
    subject: &ObjectInstance,
    object: &ObjectInstance,
    params: &ProbeParams,
) -> Vec<Vec3> {
    let bj = &object.obb;
    let segment = || {
        subject
            .mask_points
            .iter()
            .min_by(|a, b| bj.distance(a).total_cmp(&bj.distance(b)))
            .map(|p| vec![*p, bj.closest_point(p)])
            .unwrap_or_default()
    };
    match family {
        WitnessFamily::Support | WitnessFamily::Attachment | WitnessFamily::Interaction => {
            let band = params.attachment[0];
            let pts: Vec<Vec3> = subject
                .mask_points
                .iter()
                .filter(|p| bj.distance(p) <= band)
                .flat_map(|p| [*p, bj.closest_point(p)])
                .collect();
            if pts.is_empty() {
                segment()
            } else {
                pts
            }
        }
        WitnessFamily::Containment => {
            let inside: Vec<Vec3> = subject
                .mask_points
                .iter()
                .filter(|p| bj.contains(p, 0.0))
                .copied()
                .collect();
            if inside.is_empty() {
                segment()
            } else {
                inside
            }
        }
        WitnessFamily::FunctionalUncertain => Vec::new(),
        _ => segment(),
    }
}

/// Shared per-scene state for witness assembly.
pub struct WitnessEngine<'a> {
    pub scene: &'a Scene,
    pub pool: &'a PhrasePool,
    pub rgb: &'a dyn RgbScorer,
    pub null: &'a NullPrior,
    pub params: WitnessParams,
    pub probe_params: ProbeParams,
    views: SceneViews,
    measurements: BTreeMap<(u32, u32), PairMeasurements>,
}

impl<'a> WitnessEngine<'a> {
    pub fn new(
        scene: &'a Scene,
        pool: &'a PhrasePool,
        rgb: &'a dyn RgbScorer,
        null: &'a NullPrior,
        params: WitnessParams,
        probe_params: ProbeParams,
    ) -> Result<Self, WitnessError> {
        let views = SceneViews::new(scene);
        let measurements = scene
            .ordered_pairs()
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (scene.object(i).expect("pair id"), scene.object(j).expect("pair id"));
                measure_pair(a, b, &a.mask_points, &b.mask_points, &probe_params, scene.room_scale).map(|m| ((i, j), m))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            scene,
            pool,
            rgb,
            null,
            params,
            probe_params,
            views,
            measurements,
        })
    }

    pub fn views(&self) -> &SceneViews {
        &self.views
    }

    fn object(&self, id: u32) -> Result<&'a ObjectInstance, WitnessError> {
        self.scene.object(id).ok_or(WitnessError::UnknownObject(id))
    }

    pub fn measurements(&self, i: u32, j: u32) -> Result<PairMeasurements, WitnessError> {
        if let Some(m) = self.measurements.get(&(i, j)) {
            return Ok(*m);
        }
        let (a, b) = (self.object(i)?, self.object(j)?);
        Ok(measure_pair(
            a,
            b,
            &a.mask_points,
            &b.mask_points,
            &self.probe_params,
            self.scene.room_scale,
        )?)
    }

    pub fn select(&self, i: u32, j: u32) -> Vec<SelectedView> {
        select_views(self.scene, &self.views, i, j, &self.params)
    }

    /// RGB and depth scores of `phrase` on each selected view.
    pub fn score_views(
        &self,
        i: u32,
        j: u32,
        phrase: &RelationPhrase,
        selected: &[SelectedView],
    ) -> Result<Vec<ViewScore>, WitnessError> {
        let (a, b) = (self.object(i)?, self.object(j)?);
        let empty = Mask2D::empty(1, 1);
        selected
            .iter()
            .map(|v| {
                let t = v.frame_index;
                let query = RgbQuery {
                    scene: self.scene,
                    frame: t,
                    subject_id: i,
                    object_id: j,
                    subject_mask: self.views.mask(i, t).unwrap_or(&empty),
                    object_mask: self.views.mask(j, t).unwrap_or(&empty),
                    phrase,
                };
                let s_rgb = self.rgb.score(&query)?.clamp(0.0, 1.0);
                let s_dep = match (self.scene.frame(t), self.scene.rendering(t)) {
                    (Some(f), Some(r)) => depth::DepthView {
                        pose: &f.pose,
                        render: &r,
                        subject: i,
                        object: j,
                        object_box: &b.obb,
                        subject_center: a.obb.center,
                    }
                    .score(&phrase.family_dist, phrase.polarity),
                    _ => 0.0,
                };
                Ok(ViewScore {
                    frame_index: t,
                    s_rgb,
                    s_dep,
                    rho: v.rho.clamp(0.0, 1.0),
                })
            })
            .collect()
    }

    /// Combines per-view scores and pair measurements into a record.
    /// `logits` are the relation scorer's outputs for `(i, j)` and `(j, i)`.
    pub fn assemble(
        &self,
        i: u32,
        j: u32,
        phrase: &RelationPhrase,
        views: Vec<ViewScore>,
        raw: &PairMeasurements,
        logits: (f64, f64),
    ) -> Result<WitnessRecord, WitnessError> {
        let (a, b) = (self.object(i)?, self.object(j)?);
        let family = phrase.family();
        // Functional relations have no geometric witness.
        let s_3d = if family == WitnessFamily::FunctionalUncertain {
            0.0
        } else {
            s3d_score(
                &phrase.family_dist,
                &probe_vector(raw, &self.probe_params, phrase.polarity),
            )
        };
        let p = &self.params;
        let s_rgb = pool_rgb(&views, p.top_m, p.epsilon);
        let s_dep = pool_depth(&views, p.epsilon);
        let s_mv = multiview_score(&views);
        let s_role = role_score(logits.0, logits.1, phrase.role_sensitivity).clamp(0.0, 1.0);
        let s_null = self.null.score(&a.category, &b.category, phrase.cluster_id);

        let strengths: Vec<f64> = views.iter().map(|v| v.rho * (v.s_rgb + v.s_dep)).collect();
        let best = strengths.iter().copied().fold(0.0, f64::max);
        let supporting_frames = views
            .iter()
            .zip(&strengths)
            .filter(|(_, x)| best > 0.0 && **x >= 0.5 * best)
            .map(|(v, x)| FrameScore {
                frame_index: v.frame_index,
                score: *x,
            })
            .collect();
        let mut region_2d = BTreeMap::new();
        for v in &views {
            if let Some(r) = self.scene.rendering(v.frame_index) {
                let ids = &r.rgb_proxy;
                let mut bb: Option<[u32; 4]> = None;
                for (k, id) in ids.ids.iter().enumerate() {
                    if *id == Some(i) || *id == Some(j) {
                        let (x, y) = (k as u32 % ids.width, k as u32 / ids.width);
                        bb = Some(match bb {
                            None => [x, y, x, y],
                            Some(q) => [q[0].min(x), q[1].min(y), q[2].max(x), q[3].max(y)],
                        });
                    }
                }
                if let Some(bb) = bb {
                    region_2d.insert(v.frame_index, bb);
                }
            }
        }
        let region_3d = bounding_box_in(&b.obb, &decisive_points(family, a, b, &self.probe_params));

        let frames = self.views.frames();
        let both = (0..frames)
            .filter(|t| self.views.visibility(i, *t) > 0.0 && self.views.visibility(j, *t) > 0.0)
            .count();
        let quality = QualitySummary {
            n_views: views.len(),
            min_visibility: views
                .iter()
                .map(|v| {
                    self.views
                        .visibility(i, v.frame_index)
                        .min(self.views.visibility(j, v.frame_index))
                })
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))))
                .unwrap_or(0.0),
            mask_point_count: a.mask_points.len().min(b.mask_points.len()),
            render_coverage: if frames == 0 { 0.0 } else { both as f64 / frames as f64 },
        };
        Ok(WitnessRecord {
            scene_id: self.scene.name.clone(),
            subject_id: i,
            object_id: j,
            phrase: phrase.normalized.clone(),
            cluster_id: phrase.cluster_id,
            s_rgb,
            s_dep,
            s_3d,
            s_mv,
            s_role,
            s_null,
            family_dist: phrase.family_dist,
            directional: phrase.role_sensitivity,
            views,
            trace: WitnessTrace {
                supporting_frames,
                region_2d,
                region_3d,
            },
            quality,
        })
    }

    /// Full record for one candidate.
    pub fn record(
        &self,
        i: u32,
        j: u32,
        phrase: &RelationPhrase,
        logits: (f64, f64),
    ) -> Result<WitnessRecord, WitnessError> {
        let selected = self.select(i, j);
        let views = self.score_views(i, j, phrase, &selected)?;
        let raw = self.measurements(i, j)?;
        self.assemble(i, j, phrase, views, &raw, logits)
    }
}

pub fn records_to_jsonl(records: &[WitnessRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<WitnessRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests;
