//! Oriented boxes, ray casting and point sampling in a z-up world frame.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// World "up". Gravity points along `-UP`.
pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// An oriented bounding box. The columns of `rotation` are the box axes
/// expressed in world coordinates, so `world = center + rotation * local`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub rotation: Mat3,
}

/// Entry/exit parameters of a ray through a box, with the face indices
/// crossed. Faces are numbered `2 * axis + (1 if on the positive side)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t_near: f64,
    pub t_far: f64,
    pub near_face: usize,
    pub far_face: usize,
}

impl Obb {
    pub fn new(center: Vec3, half_extents: Vec3, rotation: Mat3) -> Self {
        Self {
            center,
            half_extents,
            rotation,
        }
    }

    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Self {
        Self::new(center, half_extents, Mat3::identity())
    }

    /// Box rotated about the world z axis by `yaw` radians.
    pub fn with_yaw(center: Vec3, half_extents: Vec3, yaw: f64) -> Self {
        Self::new(center, half_extents, yaw_matrix(yaw))
    }

    pub fn is_degenerate(&self) -> bool {
        self.half_extents.iter().any(|h| !(*h > 0.0) || !h.is_finite())
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn axis(&self, k: usize) -> Vec3 {
        self.rotation.column(k).into_owned()
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.center)
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.center + self.rotation * local
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let l = self.to_local(p);
        (0..3).all(|k| l[k].abs() <= self.half_extents[k] + tol)
    }

    /// Euclidean distance from `p` to the solid box; zero inside.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let l = self.to_local(p);
        let mut d2 = 0.0;
        for k in 0..3 {
            let excess = l[k].abs() - self.half_extents[k];
            if excess > 0.0 {
                d2 += excess * excess;
            }
        }
        d2.sqrt()
    }

    /// Closest point of the solid box to `p`.
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        let l = self.to_local(p);
        let clamped = Vec3::from_fn(|k, _| l[k].clamp(-self.half_extents[k], self.half_extents[k]));
        self.to_world(&clamped)
    }

    /// Index of the face nearest to `p` and that face's outward normal.
    pub fn nearest_face(&self, p: &Vec3) -> (usize, Vec3) {
        let l = self.to_local(p);
        let mut best = (0usize, f64::INFINITY);
        for k in 0..3 {
            for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
                let d = (sign * self.half_extents[k] - l[k]).abs();
                if d < best.1 {
                    best = (2 * k + side, d);
                }
            }
        }
        (best.0, self.face_normal(best.0))
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let sign = if face % 2 == 1 { 1.0 } else { -1.0 };
        self.axis(face / 2) * sign
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (n, c) in out.iter_mut().enumerate() {
            let l = Vec3::new(
                if n & 1 == 0 { -1.0 } else { 1.0 } * self.half_extents.x,
                if n & 2 == 0 { -1.0 } else { 1.0 } * self.half_extents.y,
                if n & 4 == 0 { -1.0 } else { 1.0 } * self.half_extents.z,
            );
            *c = self.to_world(&l);
        }
        out
    }

    /// World-space half extents of the axis-aligned box enclosing this box.
    pub fn aabb_half_extents(&self) -> Vec3 {
        self.rotation.abs() * self.half_extents
    }

    pub fn bottom_z(&self) -> f64 {
        self.center.z - self.aabb_half_extents().z
    }

    pub fn top_z(&self) -> f64 {
        self.center.z + self.aabb_half_extents().z
    }

    /// Slab intersection. Returns `None` when the ray's line misses the box
    /// or the box lies entirely behind the origin.
    pub fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        let o = self.to_local(origin);
        let d = self.rotation.transpose() * dir;
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut near_face = 0;
        let mut far_face = 0;
        for k in 0..3 {
            let h = self.half_extents[k];
            if d[k].abs() < 1e-15 {
                if o[k].abs() > h {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[k];
            let mut t0 = (-h - o[k]) * inv;
            let mut t1 = (h - o[k]) * inv;
            let (mut f0, mut f1) = (2 * k, 2 * k + 1);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
                std::mem::swap(&mut f0, &mut f1);
            }
            if t0 > t_near {
                t_near = t0;
                near_face = f0;
            }
            if t1 < t_far {
                t_far = t1;
                far_face = f1;
            }
            if t_near > t_far {
                return None;
            }
        }
        if t_far < 0.0 {
            return None;
        }
        Some(RayHit {
            t_near,
            t_far,
            near_face,
            far_face,
        })
    }

    /// Points uniformly distributed over the box surface (area-weighted faces).
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec3> {
        let h = self.half_extents;
        let areas = [h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z, h.x * h.y, h.x * h.y];
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut pick = rng.random::<f64>() * total;
                let mut face = 5;
                for (f, a) in areas.iter().enumerate() {
                    if pick < *a {
                        face = f;
                        break;
                    }
                    pick -= a;
                }
                let axis = face / 2;
                let sign = if face % 2 == 1 { 1.0 } else { -1.0 };
                let mut l = Vec3::zeros();
                for k in 0..3 {
                    l[k] = if k == axis {
                        sign * h[k]
                    } else {
                        (rng.random::<f64>() * 2.0 - 1.0) * h[k]
                    };
                }
                self.to_world(&l)
            })
            .collect()
    }

    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                let l = Vec3::from_fn(|k, _| (rng.random::<f64>() * 2.0 - 1.0) * self.half_extents[k]);
                self.to_world(&l)
            })
            .collect()
    }

    /// Cell centers of a `res³` grid filling the box.
    pub fn grid_points(&self, res: usize) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(res * res * res);
        let step = |i: usize, k: usize| ((i as f64 + 0.5) / res as f64 * 2.0 - 1.0) * self.half_extents[k];
        for a in 0..res {
            for b in 0..res {
                for c in 0..res {
                    out.push(self.to_world(&Vec3::new(step(a, 0), step(b, 1), step(c, 2))));
                }
            }
        }
        out
    }
}

/// Intersection-over-union of two solid boxes by grid quadrature over both
/// boxes (`res³` cells each); the two intersection estimates are averaged.
pub fn obb_iou(a: &Obb, b: &Obb, res: usize) -> f64 {
    let frac = |src: &Obb, dst: &Obb| {
        let pts = src.grid_points(res);
        pts.iter().filter(|p| dst.contains(p, 1e-12)).count() as f64 / pts.len() as f64
    };
    let (va, vb) = (a.volume(), b.volume());
    let inter = 0.5 * (frac(a, b) * va + frac(b, a) * vb);
    let union = va + vb - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Separating-axis test. Reports overlap only when the boxes interpenetrate
/// by more than `slack` along every candidate axis, so touching faces pass.
pub fn obb_overlap(a: &Obb, b: &Obb, slack: f64) -> bool {
    let mut axes: Vec<Vec3> = Vec::with_capacity(15);
    for k in 0..3 {
        axes.push(a.axis(k));
        axes.push(b.axis(k));
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = a.axis(i).cross(&b.axis(j));
            if c.norm() > 1e-9 {
                axes.push(c.normalize());
            }
        }
    }
    let d = b.center - a.center;
    axes.iter().all(|axis| {
        let ra: f64 = (0..3).map(|k| a.half_extents[k] * a.axis(k).dot(axis).abs()).sum();
        let rb: f64 = (0..3).map(|k| b.half_extents[k] * b.axis(k).dot(axis).abs()).sum();
        d.dot(axis).abs() < ra + rb - slack
    })
}

pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Angle in radians between two vectors; zero if either is degenerate.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < 1e-15 || nb < 1e-15 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear-interpolated percentile (`q` in `[0, 1]`) of an unsorted slice.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    values[lo] * (1.0 - w) + values[hi] * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ray_hits_unit_cube_front_face() {
        let b = Obb::axis_aligned(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.5, 0.5, 0.5));
        let hit = b.ray_intersect(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((hit.t_near - 1.5).abs() < 1e-12);
        assert!((hit.t_far - 2.5).abs() < 1e-12);
        assert_eq!(hit.near_face, 4);
        assert_eq!(hit.far_face, 5);
    }

    #[test]
    fn ray_behind_origin_misses() {
        let b = Obb::axis_aligned(Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.5, 0.5, 0.5));
        assert!(b.ray_intersect(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn distance_and_containment() {
        let b = Obb::with_yaw(Vec3::new(1.0, 2.0, 0.5), Vec3::new(1.0, 0.5, 0.5), 0.7);
        assert_eq!(b.distance(&b.center), 0.0);
        let outside = b.to_world(&Vec3::new(1.3, 0.0, 0.0));
        assert!((b.distance(&outside) - 0.3).abs() < 1e-12);
        assert!(!b.contains(&outside, 1e-9));
        assert!((b.closest_point(&outside) - b.to_world(&Vec3::new(1.0, 0.0, 0.0))).norm() < 1e-12);
    }

    #[test]
    fn surface_samples_lie_on_boundary() {
        let b = Obb::with_yaw(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.3, 0.2, 0.1), 1.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in b.sample_surface(&mut rng, 200) {
            assert!(b.contains(&p, 1e-9));
            let l = b.to_local(&p);
            let on_face = (0..3).any(|k| (l[k].abs() - b.half_extents[k]).abs() < 1e-9);
            assert!(on_face);
        }
    }

    #[test]
    fn iou_of_identical_and_disjoint_boxes() {
        let a = Obb::with_yaw(Vec3::zeros(), Vec3::new(0.4, 0.3, 0.2), 0.3);
        assert!((obb_iou(&a, &a, 12) - 1.0).abs() < 1e-12);
        let mut far = a;
        far.center.x += 5.0;
        assert_eq!(obb_iou(&a, &far, 12), 0.0);
    }

    #[test]
    fn sat_overlap_allows_touching() {
        let a = Obb::axis_aligned(Vec3::zeros(), Vec3::repeat(0.5));
        let touching = Obb::axis_aligned(Vec3::new(1.0, 0.0, 0.0), Vec3::repeat(0.5));
        let inside = Obb::with_yaw(Vec3::new(0.6, 0.0, 0.0), Vec3::repeat(0.3), 0.5);
        assert!(!obb_overlap(&a, &touching, 1e-6));
        assert!(obb_overlap(&a, &inside, 1e-6));
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&mut v, 0.0), 1.0);
        assert_eq!(percentile(&mut v, 0.5), 3.0);
        assert!((percentile(&mut v, 0.05) - 1.2).abs() < 1e-12);
    }
}
