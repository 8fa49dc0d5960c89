//! Measurement kernels over mask point sets and boxes.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geom::{percentile, Obb, Vec3};

/// Side of the square gravity-plane cells used for footprint overlap.
pub const OVERLAP_CELL: f64 = 0.02;
/// Percentile of per-point distances taken as the robust minimum.
pub const SURFACE_PERCENTILE: f64 = 0.05;
/// How far an open container's box extends past its access face.
pub const ACCESS_INFLATION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("empty mask")]
    EmptyMask,
    #[error("degenerate box")]
    DegenerateBox,
}

/// Robust minimum surface distance between two masked objects: the 5th
/// percentile of distances from the points of the smaller-volume object to
/// the solid box of the larger one.
pub fn surface_distance(points_i: &[Vec3], box_i: &Obb, points_j: &[Vec3], box_j: &Obb) -> Result<f64, KernelError> {
    if points_i.is_empty() || points_j.is_empty() {
        return Err(KernelError::EmptyMask);
    }
    let (pts, target) = if box_i.volume() <= box_j.volume() {
        (points_i, box_j)
    } else {
        (points_j, box_i)
    };
    let mut d: Vec<f64> = pts.iter().map(|p| target.distance(p)).collect();
    Ok(percentile(&mut d, SURFACE_PERCENTILE))
}

/// Container box with the access face pushed outward.
pub fn access_box(container: &Obb, open_face: Option<usize>) -> Obb {
    let Some(face) = open_face else {
        return *container;
    };
    let axis = face / 2;
    let sign = if face % 2 == 1 { 1.0 } else { -1.0 };
    let mut b = *container;
    b.half_extents[axis] += ACCESS_INFLATION / 2.0;
    b.center += container.axis(axis) * (sign * ACCESS_INFLATION / 2.0);
    b
}

/// Fraction of subject points inside the container box and mean distance of
/// the outside points to it (zero when none are outside).
/// Depth below the container surface a point needs to count as inside.
pub const INTERIOR_MARGIN: f64 = 1e-4;

pub fn containment_fraction(
    points_i: &[Vec3],
    container: &Obb,
    open_face: Option<usize>,
) -> Result<(f64, f64), KernelError> {
    if points_i.is_empty() {
        return Err(KernelError::EmptyMask);
    }
    if container.is_degenerate() {
        return Err(KernelError::DegenerateBox);
    }
    let b = access_box(container, open_face);
    let mut inside = 0usize;
    let mut out_sum = 0.0;
    for p in points_i {
        // Points on the boundary are touching, not contained.
        if b.contains(p, -INTERIOR_MARGIN) {
            inside += 1;
        } else {
            out_sum += b.distance(p);
        }
    }
    let n = points_i.len();
    let outside = n - inside;
    let d_out = if outside == 0 { 0.0 } else { out_sum / outside as f64 };
    Ok((inside as f64 / n as f64, d_out))
}

/// Convex hull of 2D points, counter-clockwise, without collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Whether `p` lies in the closed convex polygon `hull` (counter-clockwise).
pub fn in_convex(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    match hull.len() {
        0 => false,
        1 => (hull[0][0] - p[0]).abs() < 1e-12 && (hull[0][1] - p[1]).abs() < 1e-12,
        n => (0..n).all(|k| {
            let (a, b) = (hull[k], hull[(k + 1) % n]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
        }),
    }
}

/// Gravity-plane footprint of a box.
pub fn footprint(b: &Obb) -> Vec<[f64; 2]> {
    let corners: Vec<[f64; 2]> = b.corners().iter().map(|c| [c.x, c.y]).collect();
    convex_hull(&corners)
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

/// Part of `poly` inside the counter-clockwise convex polygon `clip`.
pub fn clip_convex(poly: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = poly.to_vec();
    let n = clip.len();
    for k in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[k], clip[(k + 1) % n]);
        let side = |p: &[f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        for (i, cur) in input.iter().enumerate() {
            let prev = &input[(i + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if (sc >= 0.0) != (sp >= 0.0) {
                let t = sp / (sp - sc);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if sc >= 0.0 {
                out.push(*cur);
            }
        }
    }
    out
}

/// Share of the subject's gravity-plane footprint that lies over the
/// object's footprint.
///
/// The subject footprint is rasterized into occupied [`OVERLAP_CELL`] cells,
/// and each cell is weighted by its area inside the convex hull of the
/// projected points, so partly covered cells on the outline count only for
/// what they cover. Collinear projections fall back to the share of points
/// over the object.
pub fn horizontal_overlap(points_i: &[Vec3], object: &Obb) -> Result<f64, KernelError> {
    if points_i.is_empty() {
        return Err(KernelError::EmptyMask);
    }
    let target = footprint(object);
    let flat: Vec<[f64; 2]> = points_i.iter().map(|p| [p.x, p.y]).collect();
    let hull = convex_hull(&flat);
    let point_share = || flat.iter().filter(|p| in_convex(&target, **p)).count() as f64 / flat.len() as f64;
    if polygon_area(&hull) < OVERLAP_CELL * OVERLAP_CELL * 1e-6 {
        return Ok(point_share());
    }
    let cells: BTreeSet<(i64, i64)> = flat
        .iter()
        .map(|p| {
            (
                (p[0] / OVERLAP_CELL).floor() as i64,
                (p[1] / OVERLAP_CELL).floor() as i64,
            )
        })
        .collect();
    let (mut covered, mut over) = (0.0, 0.0);
    for (cx, cy) in cells {
        let (x0, y0) = (cx as f64 * OVERLAP_CELL, cy as f64 * OVERLAP_CELL);
        let (x1, y1) = (x0 + OVERLAP_CELL, y0 + OVERLAP_CELL);
        let part = clip_convex(&hull, &[[x0, y0], [x1, y0], [x1, y1], [x0, y1]]);
        covered += polygon_area(&part);
        over += polygon_area(&clip_convex(&part, &target));
    }
    if covered <= 0.0 {
        return Ok(point_share());
    }
    Ok((over / covered).clamp(0.0, 1.0))
}

/// Distance from a 2D point to a convex polygon; zero inside.
pub fn distance_to_convex(hull: &[[f64; 2]], p: [f64; 2]) -> f64 {
    if in_convex(hull, p) {
        return 0.0;
    }
    let n = hull.len();
    (0..n)
        .map(|k| {
            let (a, b) = (hull[k], hull[(k + 1) % n]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
            (cx * cx + cy * cy).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Fraction of `points` within `band` of `target`.
pub fn band_fraction(points: &[Vec3], target: &Obb, band: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().filter(|p| target.distance(p) <= band).count() as f64 / points.len() as f64
}
