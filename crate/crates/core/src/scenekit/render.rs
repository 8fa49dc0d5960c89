//! Ray-cast z-buffer rendering of oriented boxes, mask projection and
//! per-frame visibility.

use crate::geom::{Obb, Vec3};

use super::model::{CameraPose, DepthMap, IdMap, Mask2D, ObjectInstance, Rendering, Scene};

/// Depth slack used by the occlusion test, meters.
pub const OCCLUSION_TOLERANCE: f64 = 0.01;

/// Ray parameter of the first visible surface of a box along `dir`.
/// Open containers are hollow on their access face: a ray entering through
/// it sees the inner back wall instead.
pub fn visible_hit(obb: &Obb, open_face: Option<usize>, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let hit = obb.ray_intersect(origin, dir)?;
    let entry_open = open_face == Some(hit.near_face);
    let t = if hit.t_near > 0.0 && !entry_open {
        hit.t_near
    } else {
        hit.t_far
    };
    (t > 0.0).then_some(t)
}

pub(crate) fn rasterize(objects: &[ObjectInstance], pose: &CameraPose) -> Rendering {
    let k = pose.intrinsics;
    let mut depth = DepthMap::background(k.width, k.height);
    let mut ids = vec![None; k.pixel_count()];
    let origin = pose.center();
    for py in 0..k.height {
        for px in 0..k.width {
            let dir = pose.pixel_ray(px, py);
            let mut best: Option<(f64, u32)> = None;
            for o in objects {
                if let Some(t) = visible_hit(&o.obb, o.open_face, &origin, &dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, o.id));
                    }
                }
            }
            if let Some((t, id)) = best {
                let i = depth.index(px, py);
                // `dir` has unit camera-z, so the ray parameter is the depth.
                depth.data[i] = t;
                ids[i] = Some(id);
            }
        }
    }
    Rendering {
        depth,
        rgb_proxy: IdMap {
            width: k.width,
            height: k.height,
            ids,
        },
    }
}

/// Per-pixel nearest ray-box depth for a frame; `None` for an unknown frame.
pub fn render_depth(scene: &Scene, frame_index: usize) -> Option<DepthMap> {
    scene.rendering(frame_index).map(|r| r.depth.clone())
}

/// Whether the segment from `eye` to `p` is blocked by any object other
/// than `owner`.
pub fn is_occluded(objects: &[ObjectInstance], owner: u32, eye: &Vec3, p: &Vec3) -> bool {
    let dir = p - eye;
    let len = dir.norm();
    if len < 1e-12 {
        return false;
    }
    let limit = 1.0 - OCCLUSION_TOLERANCE / len;
    objects
        .iter()
        .filter(|o| o.id != owner)
        .any(|o| visible_hit(&o.obb, o.open_face, eye, &dir).is_some_and(|t| t < limit))
}

/// Projected and visible pixel masks of an arbitrary point set owned by `owner`.
pub fn project_points(objects: &[ObjectInstance], owner: u32, points: &[Vec3], pose: &CameraPose) -> (Mask2D, Mask2D) {
    let k = pose.intrinsics;
    let eye = pose.center();
    let mut projected = Mask2D::empty(k.width, k.height);
    let mut visible = Mask2D::empty(k.width, k.height);
    for p in points {
        let Some(pixel) = pose.project(p).and_then(|pr| pr.pixel(&k)) else {
            continue;
        };
        projected.set(pixel.0, pixel.1);
        if !visible.contains(pixel.0, pixel.1) && !is_occluded(objects, owner, &eye, p) {
            visible.set(pixel.0, pixel.1);
        }
    }
    (projected, visible)
}

/// Visible pixels of an object's mask points in a frame. Points hidden
/// behind other objects are excluded; empty for unknown ids or frames.
pub fn project_mask(scene: &Scene, object_id: u32, frame_index: usize) -> Mask2D {
    mask_and_visibility(scene, object_id, frame_index).0
}

/// Fraction of the object's projected pixels that survive the occlusion
/// test; zero when nothing projects into the frame.
pub fn visibility(scene: &Scene, object_id: u32, frame_index: usize) -> f64 {
    mask_and_visibility(scene, object_id, frame_index).1
}

pub fn mask_and_visibility(scene: &Scene, object_id: u32, frame_index: usize) -> (Mask2D, f64) {
    let (Some(obj), Some(frame)) = (scene.object(object_id), scene.frame(frame_index)) else {
        return (Mask2D::empty(1, 1), 0.0);
    };
    let (projected, visible) = project_points(&scene.objects, object_id, &obj.mask_points, &frame.pose);
    let total = projected.count();
    let vis = if total == 0 {
        0.0
    } else {
        visible.count() as f64 / total as f64
    };
    (visible, vis)
}
