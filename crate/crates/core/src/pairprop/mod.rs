//! Pair geometry, pair embeddings and TopK phrase proposal.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_between, obb_iou, Obb, Vec3};
use crate::phrasebank::{PhrasePool, RelationPhrase};
use crate::probes::surface_distance;
use crate::scenekit::{LabelStatus, ObjectInstance, Scene, FEATURE_DIM};

/// Objects whose centers lie within this distance of the union box form
/// the pair's context.
pub const CONTEXT_RADIUS: f64 = 1.5;
pub const DEFAULT_K: usize = 20;
/// Grid resolution per box axis for the IoU estimate.
const IOU_RES: usize = 16;
pub const GEOMETRY_DIM: usize = 12;
const UNION_STATS: usize = 4;
pub const PAIR_INPUT_DIM: usize = 2 * FEATURE_DIM + FEATURE_DIM + UNION_STATS + GEOMETRY_DIM + FEATURE_DIM;

#[derive(Debug, Error, PartialEq)]
pub enum PairError {
    #[error("subject and object must differ")]
    SameObject,
    #[error("unknown object id {0}")]
    UnknownObject(u32),
    #[error("object {0} has a degenerate box")]
    Degenerate(u32),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty mask on object {0}")]
    EmptyMask(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryFeatures {
    pub relative_translation: [f64; 3],
    pub scale_ratio: f64,
    pub iou3d: f64,
    pub vertical_disp: f64,
    pub surface_distance: f64,
    pub orientation_diff: f64,
}

impl GeometryFeatures {
    /// Fixed encoding fed to the pair embedding: the raw quantities plus
    /// contact-sensitive kernels of them.
    pub fn encode(&self) -> [f64; GEOMETRY_DIM] {
        let [tx, ty, tz] = self.relative_translation;
        let horiz = (tx * tx + ty * ty).sqrt();
        let contact = (-self.surface_distance / 0.05).exp();
        let level = (-self.vertical_disp.abs() / 0.05).exp();
        [
            tx,
            ty,
            tz,
            self.scale_ratio.ln().clamp(-10.0, 10.0) / 5.0,
            self.iou3d,
            self.vertical_disp,
            self.surface_distance,
            self.orientation_diff / std::f64::consts::PI,
            contact,
            level * contact,
            (-horiz / 0.5).exp(),
            (-self.surface_distance / 0.5).exp(),
        ]
    }
}

fn lookup(scene: &Scene, id: u32) -> Result<&ObjectInstance, PairError> {
    let o = scene.object(id).ok_or(PairError::UnknownObject(id))?;
    if o.obb.is_degenerate() {
        return Err(PairError::Degenerate(id));
    }
    Ok(o)
}

pub fn pair_geometry(scene: &Scene, i: u32, j: u32) -> Result<GeometryFeatures, PairError> {
    if i == j {
        return Err(PairError::SameObject);
    }
    let (a, b) = (lookup(scene, i)?, lookup(scene, j)?);
    geometry_of(a, b)
}

pub fn geometry_of(a: &ObjectInstance, b: &ObjectInstance) -> Result<GeometryFeatures, PairError> {
    let t = b.obb.center - a.obb.center;
    let d = surface_distance(&a.mask_points, &a.obb, &b.mask_points, &b.obb)
        .map_err(|_| PairError::EmptyMask(if a.mask_points.is_empty() { a.id } else { b.id }))?;
    Ok(GeometryFeatures {
        relative_translation: [t.x, t.y, t.z],
        scale_ratio: a.obb.volume() / b.obb.volume(),
        iou3d: obb_iou(&a.obb, &b.obb, IOU_RES),
        vertical_disp: a.obb.bottom_z() - b.obb.top_z(),
        surface_distance: d,
        orientation_diff: angle_between(&a.front_axis, &b.front_axis),
    })
}

/// Axis-aligned box enclosing both boxes, as (min, max).
fn union_aabb(a: &Obb, b: &Obb) -> (Vec3, Vec3) {
    let (ha, hb) = (a.aabb_half_extents(), b.aabb_half_extents());
    let lo = (a.center - ha).inf(&(b.center - hb));
    let hi = (a.center + ha).sup(&(b.center + hb));
    (lo, hi)
}

/// Mean feature of the other objects near the pair's union box.
pub fn pair_context(scene: &Scene, a: &ObjectInstance, b: &ObjectInstance) -> Vec<f64> {
    let (lo, hi) = union_aabb(&a.obb, &b.obb);
    let mut acc = vec![0.0; FEATURE_DIM];
    let mut n = 0usize;
    for o in &scene.objects {
        if o.id == a.id || o.id == b.id {
            continue;
        }
        let c = o.obb.center;
        let gap = Vec3::from_fn(|k, _| (lo[k] - c[k]).max(0.0).max(c[k] - hi[k]));
        if gap.norm() <= CONTEXT_RADIUS {
            for (x, f) in acc.iter_mut().zip(&o.feature) {
                *x += f;
            }
            n += 1;
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|x| *x /= n as f64);
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub subject_id: u32,
    pub object_id: u32,
    pub pair_embedding: Vec<f64>,
    pub union_feature: Vec<f64>,
    pub context: Vec<f64>,
    pub geometry: GeometryFeatures,
}

/// `[H_i, H_j, H_u, g, h_ctx]` mapped by the fixed linear `phi` (identity
/// when `None`). `H_u` is the element-wise max of the two features followed
/// by union-box statistics.
pub fn pair_embedding(
    subject: &ObjectInstance,
    object: &ObjectInstance,
    geometry: &GeometryFeatures,
    context: &[f64],
    phi: Option<&DMatrix<f64>>,
) -> Result<PairFeatures, PairError> {
    for f in [&subject.feature, &object.feature] {
        if f.len() != FEATURE_DIM {
            return Err(PairError::Dimension {
                expected: FEATURE_DIM,
                got: f.len(),
            });
        }
    }
    if context.len() != FEATURE_DIM {
        return Err(PairError::Dimension {
            expected: FEATURE_DIM,
            got: context.len(),
        });
    }
    let (lo, hi) = union_aabb(&subject.obb, &object.obb);
    let ext = hi - lo;
    let mut union_feature: Vec<f64> = subject
        .feature
        .iter()
        .zip(&object.feature)
        .map(|(a, b)| a.max(*b))
        .collect();
    union_feature.extend([ext.x, ext.y, ext.z, (ext.x * ext.y * ext.z).cbrt()]);
    let mut x = Vec::with_capacity(PAIR_INPUT_DIM);
    x.extend(&subject.feature);
    x.extend(&object.feature);
    x.extend(&union_feature);
    x.extend(geometry.encode());
    x.extend(context);
    let pair_embedding = match phi {
        None => x,
        Some(m) => {
            if m.ncols() != x.len() {
                return Err(PairError::Dimension {
                    expected: m.ncols(),
                    got: x.len(),
                });
            }
            (m * DVector::from_vec(x)).iter().copied().collect()
        }
    };
    Ok(PairFeatures {
        subject_id: subject.id,
        object_id: object.id,
        pair_embedding,
        union_feature,
        context: context.to_vec(),
        geometry: *geometry,
    })
}

/// Geometry, context and embedding for one ordered pair, with `phi = I`.
pub fn pair_features(scene: &Scene, i: u32, j: u32) -> Result<PairFeatures, PairError> {
    if i == j {
        return Err(PairError::SameObject);
    }
    let (a, b) = (lookup(scene, i)?, lookup(scene, j)?);
    let g = geometry_of(a, b)?;
    let ctx = pair_context(scene, a, b);
    pair_embedding(a, b, &g, &ctx, None)
}

/// Projections into the shared pair/text space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerModel {
    pub pair_projection: DMatrix<f64>,
    pub text_projection: DMatrix<f64>,
    pub k: usize,
}

impl ProposerModel {
    /// Seeded Gaussian projections with `1 / sqrt(fan_in)` scale.
    pub fn random(dim: usize, pair_dim: usize, text_dim: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |r: usize, c: usize| {
            let n = Normal::new(0.0, 1.0 / (c as f64).sqrt()).expect("valid normal");
            DMatrix::from_fn(r, c, |_, _| n.sample(&mut rng))
        };
        let pair_projection = gen(dim, pair_dim);
        let text_projection = gen(dim, text_dim);
        Self {
            pair_projection,
            text_projection,
            k,
        }
    }

    /// Projected cosine similarity of one pair and one phrase.
    pub fn similarity(&self, pair: &PairFeatures, phrase: &RelationPhrase) -> f64 {
        let zp = &self.pair_projection * DVector::from_column_slice(&pair.pair_embedding);
        let zt = &self.text_projection * DVector::from_column_slice(&phrase.embedding);
        cos(&zp, &zt)
    }
}

fn cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

/// Ranks the pool's cluster representatives by projected cosine similarity
/// and keeps the top `k`. Ties go to the lower cluster id, then the
/// lexicographically smaller phrase.
pub fn propose_candidates<'p>(
    pair: &PairFeatures,
    pool: &'p PhrasePool,
    model: &ProposerModel,
) -> Vec<(&'p RelationPhrase, f64)> {
    let zp = &model.pair_projection * DVector::from_column_slice(&pair.pair_embedding);
    let mut ranked: Vec<(&RelationPhrase, f64)> = pool
        .representatives()
        .into_iter()
        .map(|r| {
            let zt = &model.text_projection * DVector::from_column_slice(&r.embedding);
            (r, cos(&zp, &zt))
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cluster_id.cmp(&b.0.cluster_id))
            .then(a.0.normalized.cmp(&b.0.normalized))
    });
    ranked.truncate(model.k);
    ranked
}

/// One proposed `(subject, phrase, object)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCandidate {
    pub scene_id: String,
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub similarity: f64,
    pub status: LabelStatus,
}

/// Annotated when an annotated label on the same ordered pair falls in the
/// phrase's cluster.
pub fn annotation_status(scene: &Scene, pool: &PhrasePool, i: u32, j: u32, phrase: &RelationPhrase) -> LabelStatus {
    let hit = scene.labels.iter().any(|l| {
        l.status == LabelStatus::AnnotatedPositive
            && l.subject_id == i
            && l.object_id == j
            && pool
                .get(&crate::phrasebank::normalize_phrase(&l.phrase))
                .is_some_and(|p| p.cluster_id == phrase.cluster_id)
    });
    if hit {
        LabelStatus::AnnotatedPositive
    } else {
        LabelStatus::Unlabeled
    }
}

/// Candidates for every ordered pair of a scene, in pair order then rank.
pub fn propose_scene(
    scene: &Scene,
    pool: &PhrasePool,
    model: &ProposerModel,
) -> Result<Vec<RelationCandidate>, PairError> {
    let mut out = Vec::new();
    for (i, j) in scene.ordered_pairs() {
        let pf = pair_features(scene, i, j)?;
        for (phrase, sim) in propose_candidates(&pf, pool, model) {
            out.push(RelationCandidate {
                scene_id: scene.name.clone(),
                subject_id: i,
                object_id: j,
                phrase: phrase.normalized.clone(),
                similarity: sim,
                status: annotation_status(scene, pool, i, j, phrase),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phrasebank::{build_pool, shipped_pool, Lexicon, CLUSTER_THRESHOLD};
    use crate::scenekit::{generate_scene, SceneSpec};
    use std::collections::BTreeSet;

    fn obj(id: u32, obb: Obb, n: usize) -> ObjectInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
        ObjectInstance {
            id,
            category: "box".into(),
            obb,
            mask_points: obb.sample_surface(&mut rng, n),
            feature: vec![0.1 * id as f64; FEATURE_DIM],
            front_axis: Vec3::new(0.0, 1.0, 0.0),
            symmetric: false,
            open_face: None,
            visible_frames: Default::default(),
        }
    }

    #[test]
    fn coincident_and_distant_boxes() {
        let b = Obb::axis_aligned(Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.3, 0.2, 0.5));
        let g = geometry_of(&obj(0, b, 200), &obj(1, b, 200)).unwrap();
        assert!((g.iou3d - 1.0).abs() <= 0.02);
        assert_eq!(g.relative_translation, [0.0, 0.0, 0.0]);
        let far = Obb::axis_aligned(Vec3::new(5.0, 0.0, 0.5), Vec3::new(0.3, 0.2, 0.5));
        assert_eq!(geometry_of(&obj(0, b, 200), &obj(1, far, 200)).unwrap().iou3d, 0.0);
    }

    #[test]
    fn stacked_cup_geometry() {
        let spec = SceneSpec {
            drop_rate: 0.0,
            ..Default::default()
        };
        let mut checked = 0;
        for seed in 0..10 {
            let scene = generate_scene(&spec, seed).unwrap();
            for l in scene.labels.iter().filter(|l| l.phrase == "on") {
                let g = pair_geometry(&scene, l.subject_id, l.object_id).unwrap();
                let (a, b) = (scene.object(l.subject_id).unwrap(), scene.object(l.object_id).unwrap());
                let brute = a
                    .mask_points
                    .iter()
                    .flat_map(|p| b.mask_points.iter().map(move |q| (p - q).norm()))
                    .fold(f64::INFINITY, f64::min);
                assert!(g.vertical_disp.abs() < 0.02 && g.surface_distance < 0.02, "{g:?}");
                assert!(g.surface_distance <= brute + 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn translation_antisymmetry() {
        let scene = generate_scene(&SceneSpec::default(), 2).unwrap();
        for (i, j) in scene.ordered_pairs().into_iter().take(10) {
            let (a, b) = (
                pair_geometry(&scene, i, j).unwrap(),
                pair_geometry(&scene, j, i).unwrap(),
            );
            for k in 0..3 {
                assert_eq!(a.relative_translation[k], -b.relative_translation[k]);
            }
            let (oi, oj) = (scene.object(i).unwrap(), scene.object(j).unwrap());
            assert!((a.vertical_disp - (oi.obb.bottom_z() - oj.obb.top_z())).abs() < 1e-12);
            assert!((b.vertical_disp - (oj.obb.bottom_z() - oi.obb.top_z())).abs() < 1e-12);
        }
        assert_eq!(pair_geometry(&scene, 0, 0), Err(PairError::SameObject));
    }

    #[test]
    fn embedding_properties() {
        let scene = generate_scene(&SceneSpec::default(), 5).unwrap();
        let (i, j) = scene.ordered_pairs()[0];
        let a = pair_features(&scene, i, j).unwrap();
        let b = pair_features(&scene, j, i).unwrap();
        assert_ne!(a.pair_embedding, b.pair_embedding);
        assert_eq!(a.pair_embedding.len(), PAIR_INPUT_DIM);

        let zero = ObjectInstance {
            feature: vec![0.0; FEATURE_DIM],
            ..scene.objects[0].clone()
        };
        let g0 = GeometryFeatures {
            relative_translation: [0.0; 3],
            scale_ratio: 1.0,
            iou3d: 0.0,
            vertical_disp: 0.0,
            surface_distance: 0.0,
            orientation_diff: 0.0,
        };
        // With phi = 0 on the kernel block, the embedding of zero inputs is zero.
        let mut phi = DMatrix::identity(PAIR_INPUT_DIM, PAIR_INPUT_DIM);
        let gstart = 3 * FEATURE_DIM + UNION_STATS;
        for k in 0..UNION_STATS {
            phi[(3 * FEATURE_DIM + k, 3 * FEATURE_DIM + k)] = 0.0;
        }
        for k in 8..GEOMETRY_DIM {
            phi[(gstart + k, gstart + k)] = 0.0;
        }
        let ctx = vec![0.0; FEATURE_DIM];
        let e = pair_embedding(&zero, &zero, &g0, &ctx, Some(&phi)).unwrap();
        assert!(e.pair_embedding.iter().all(|x| *x == 0.0));

        // Linearity: a coordinate perturbation moves the output by the column norm.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 1.0).unwrap();
        let phi = DMatrix::from_fn(20, PAIR_INPUT_DIM, |_, _| n.sample(&mut rng));
        let (oi, oj) = (scene.object(i).unwrap(), scene.object(j).unwrap());
        let g = pair_geometry(&scene, i, j).unwrap();
        let ctx = pair_context(&scene, oi, oj);
        let base = pair_embedding(oi, oj, &g, &ctx, Some(&phi)).unwrap().pair_embedding;
        let mut moved = oi.clone();
        let eps = 1e-3;
        moved.feature[3] += eps;
        let out = pair_embedding(&moved, oj, &g, &ctx, Some(&phi)).unwrap().pair_embedding;
        let diff: f64 = base.iter().zip(&out).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let col = phi.column(3).norm();
        assert!((diff - col * eps).abs() < 1e-9);

        let bad = ObjectInstance {
            feature: vec![0.0; 3],
            ..oi.clone()
        };
        assert!(matches!(
            pair_embedding(&bad, oj, &g, &ctx, None),
            Err(PairError::Dimension { .. })
        ));
    }

    #[test]
    fn proposal_truncation_and_ties() {
        let lex = Lexicon::shipped();
        let pool = build_pool(
            &[vec!["on".into(), "inside".into(), "near".into()]],
            &lex,
            CLUSTER_THRESHOLD,
        )
        .unwrap();
        let scene = generate_scene(&SceneSpec::default(), 1).unwrap();
        let pf = pair_features(&scene, 0, 1).unwrap();
        let model = ProposerModel::random(8, PAIR_INPUT_DIM, 64, DEFAULT_K, 3);
        assert_eq!(propose_candidates(&pf, &pool, &model).len(), 3);

        // A zero text projection ties every phrase at similarity 0.
        let flat = ProposerModel {
            text_projection: DMatrix::zeros(8, 64),
            ..model.clone()
        };
        let full = shipped_pool(&lex);
        let a = propose_candidates(&pf, &full, &flat);
        let ids: Vec<usize> = a.iter().map(|(p, _)| p.cluster_id).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        let again = propose_candidates(&pf, &full, &flat);
        assert_eq!(a, again);
        let names: BTreeSet<&str> = a.iter().map(|(p, _)| p.normalized.as_str()).collect();
        assert_eq!(names.len(), a.len());
        let ranked = propose_candidates(&pf, &full, &model);
        assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}
