use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::geom::{Mat3, Obb, Vec3};

/// Points closer than this to the camera plane are not projected.
pub const NEAR_PLANE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Pinhole intrinsics with the principal point at the image center.
    pub fn from_fov(width: u32, height: u32, horizontal_fov: f64) -> Self {
        let fx = (width as f64 / 2.0) / (horizontal_fov / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// World-to-camera transform, `p_cam = rotation * p_world + translation`.
/// Camera axes follow the pinhole convention: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub intrinsics: Intrinsics,
}

/// A projected point: pixel coordinates and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    pub fn pixel(&self, intr: &Intrinsics) -> Option<(u32, u32)> {
        if self.u < 0.0 || self.v < 0.0 {
            return None;
        }
        let (px, py) = (self.u.floor() as u64, self.v.floor() as u64);
        (px < intr.width as u64 && py < intr.height as u64).then_some((px as u32, py as u32))
    }
}

impl CameraPose {
    /// Camera at `eye` looking at `target` with world z as the up hint.
    pub fn look_at(eye: Vec3, target: Vec3, intrinsics: Intrinsics) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&crate::geom::UP);
        if right.norm() < 1e-9 {
            right = Vec3::new(1.0, 0.0, 0.0);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self {
            rotation,
            translation,
            intrinsics,
        }
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn project(&self, p: &Vec3) -> Option<Projection> {
        let c = self.to_camera(p);
        if c.z <= NEAR_PLANE {
            return None;
        }
        let k = &self.intrinsics;
        Some(Projection {
            u: k.fx * c.x / c.z + k.cx,
            v: k.fy * c.y / c.z + k.cy,
            depth: c.z,
        })
    }

    /// World-space direction of the ray through the center of pixel `(px, py)`,
    /// scaled so that its camera-frame z component equals one.
    pub fn pixel_ray(&self, px: u32, py: u32) -> Vec3 {
        let k = &self.intrinsics;
        let x = (px as f64 + 0.5 - k.cx) / k.fx;
        let y = (py as f64 + 0.5 - k.cy) / k.fy;
        self.rotation.transpose() * Vec3::new(x, y, 1.0)
    }

    /// Back-projects pixel `(px, py)` at camera depth `depth` to world space.
    pub fn unproject(&self, px: u32, py: u32, depth: f64) -> Vec3 {
        self.center() + self.pixel_ray(px, py) * depth
    }

    /// Angular size of one pixel, radians.
    pub fn pixel_angle(&self) -> f64 {
        1.0 / self.intrinsics.fx
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).amax() <= tol
    }
}

/// Per-pixel camera depth in meters; pixels hitting nothing hold
/// [`DepthMap::BACKGROUND`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub const BACKGROUND: f64 = 0.0;

    pub fn background(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![Self::BACKGROUND; width as usize * height as usize],
        }
    }

    pub fn index(&self, px: u32, py: u32) -> usize {
        py as usize * self.width as usize + px as usize
    }

    pub fn get(&self, px: u32, py: u32) -> Option<f64> {
        let d = self.data[self.index(px, py)];
        (d != Self::BACKGROUND).then_some(d)
    }
}

/// Stand-in for an RGB frame: the id of the object seen at each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct IdMap {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<Option<u32>>,
}

impl IdMap {
    pub fn get(&self, px: u32, py: u32) -> Option<u32> {
        self.ids[py as usize * self.width as usize + px as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub depth: DepthMap,
    pub rgb_proxy: IdMap,
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl Mask2D {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn set(&mut self, px: u32, py: u32) {
        let w = self.width as usize;
        self.bits[py as usize * w + px as usize] = true;
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px < self.width && py < self.height && self.bits[py as usize * self.width as usize + px as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// Mean pixel center, if any pixel is set.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self.pixels().fold((0.0, 0.0), |(sx, sy), (x, y)| {
            (sx + x as f64 + 0.5, sy + y as f64 + 0.5)
        });
        Some((sx / n as f64, sy / n as f64))
    }

    /// Inclusive pixel bounding box `[x0, y0, x1, y1]`.
    pub fn bbox(&self) -> Option<[u32; 4]> {
        let mut it = self.pixels();
        let (x, y) = it.next()?;
        Some(it.fold([x, y, x, y], |b, (x, y)| {
            [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)]
        }))
    }

    pub fn union(&self, other: &Mask2D) -> Mask2D {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Mask2D {
            width: self.width,
            height: self.height,
            bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub pose: CameraPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub id: u32,
    pub category: String,
    pub obb: Obb,
    pub mask_points: Vec<Vec3>,
    pub feature: Vec<f64>,
    pub front_axis: Vec3,
    /// Front axis is arbitrary for this category (it was sampled, not observed).
    pub symmetric: bool,
    /// Access face of an open container (shelf cell, cabinet front).
    pub open_face: Option<usize>,
    pub visible_frames: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStatus {
    /// `y = 1`; the relation holds.
    AnnotatedPositive,
    /// `y = 0`; the relation may or may not hold.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationLabel {
    pub subject_id: u32,
    pub object_id: u32,
    pub phrase: String,
    pub status: LabelStatus,
    /// Hidden ground truth. Only synthetic scenes carry it, and only the
    /// evaluation oracles may read it.
    pub truth: Option<bool>,
}

/// A posed frame sequence with fused object instances and relation labels.
/// Immutable after construction; renders are computed on first use and cached.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub seed: u64,
    pub room_scale: f64,
    pub frames: Vec<Frame>,
    pub objects: Vec<ObjectInstance>,
    pub labels: Vec<RelationLabel>,
    renders: Vec<OnceLock<Arc<Rendering>>>,
}

impl PartialEq for Scene {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.seed == other.seed
            && self.room_scale == other.room_scale
            && self.frames == other.frames
            && self.objects == other.objects
            && self.labels == other.labels
    }
}

impl Scene {
    pub fn new(
        name: impl Into<String>,
        seed: u64,
        room_scale: f64,
        frames: Vec<Frame>,
        objects: Vec<ObjectInstance>,
        labels: Vec<RelationLabel>,
    ) -> Self {
        let renders = (0..frames.len()).map(|_| OnceLock::new()).collect();
        Self {
            name: name.into(),
            seed,
            room_scale,
            frames,
            objects,
            labels,
            renders,
        }
    }

    pub fn object(&self, id: u32) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_index(&self, id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn frame(&self, index: usize) -> Option<&Frame> {
        self.frames.get(index)
    }

    /// Depth and id buffers of a frame, rendered once and shared.
    pub fn rendering(&self, frame_index: usize) -> Option<Arc<Rendering>> {
        let frame = self.frames.get(frame_index)?;
        let cell = &self.renders[frame_index];
        Some(
            cell.get_or_init(|| Arc::new(super::render::rasterize(&self.objects, &frame.pose)))
                .clone(),
        )
    }

    /// Copy with every hidden truth bit removed, for learner-facing output.
    pub fn redacted(&self) -> Scene {
        let mut labels = self.labels.clone();
        for l in &mut labels {
            l.truth = None;
        }
        Scene::new(
            self.name.clone(),
            self.seed,
            self.room_scale,
            self.frames.clone(),
            self.objects.clone(),
            labels,
        )
    }

    /// Ordered pairs of distinct object ids, in object order.
    pub fn ordered_pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for a in &self.objects {
            for b in &self.objects {
                if a.id != b.id {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }

    /// Checks the structural invariants of the data model.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.room_scale > 0.0) {
            return Err(format!("room_scale must be positive, got {}", self.room_scale));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(format!("duplicate object id {}", o.id));
            }
            if o.obb.is_degenerate() {
                return Err(format!("object {} has non-positive half extents", o.id));
            }
            if ((o.front_axis.norm() - 1.0).abs()) > 1e-6 {
                return Err(format!("object {} front axis is not unit length", o.id));
            }
            if let Some(p) = o.mask_points.iter().find(|p| !o.obb.contains(p, 1e-6)) {
                return Err(format!("object {} mask point {:?} lies outside its box", o.id, p));
            }
            if let Some(f) = o.visible_frames.iter().find(|f| **f >= self.frames.len()) {
                return Err(format!("object {} lists unknown frame {}", o.id, f));
            }
        }
        for f in &self.frames {
            if !f.pose.is_orthonormal(1e-6) {
                return Err(format!("frame {} rotation is not orthonormal", f.index));
            }
            if !(f.pose.intrinsics.fx > 0.0 && f.pose.intrinsics.fy > 0.0) {
                return Err(format!("frame {} has non-positive focal length", f.index));
            }
        }
        for l in &self.labels {
            if l.subject_id == l.object_id {
                return Err(format!(
                    "label '{}' relates object {} to itself",
                    l.phrase, l.subject_id
                ));
            }
            if !ids.contains(&l.subject_id) || !ids.contains(&l.object_id) {
                return Err(format!("label '{}' references a missing object", l.phrase));
            }
            if l.status == LabelStatus::AnnotatedPositive && l.truth == Some(false) {
                return Err(format!("annotated label '{}' has false ground truth", l.phrase));
            }
        }
        Ok(())
    }
}
