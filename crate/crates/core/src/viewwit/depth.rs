//! Per-view depth tests on the rendered depth and id buffers.

use crate::geom::{Obb, Vec3, UP};
use crate::phrasebank::{Polarity, WitnessFamily};
use crate::scenekit::{CameraPose, Rendering};

/// Contact slack of the support test, meters.
pub const SUPPORT_GAP: f64 = 0.03;
/// Height difference that moves the vertical test from 0.5 to about 0.73.
const VERTICAL_SCALE: f64 = 0.05;
const CONTAINMENT_SLACK: f64 = 0.03;
pub const NEUTRAL: f64 = 0.5;

pub(crate) struct DepthView<'a> {
    pub pose: &'a CameraPose,
    pub render: &'a Rendering,
    pub subject: u32,
    pub object: u32,
    pub object_box: &'a Obb,
    pub subject_center: Vec3,
}

impl DepthView<'_> {
    fn pixels_of(&self, id: u32) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.render.rgb_proxy.width;
        self.render
            .rgb_proxy
            .ids
            .iter()
            .enumerate()
            .filter(move |(_, v)| **v == Some(id))
            .map(move |(k, _)| (k as u32 % w, k as u32 / w))
    }

    fn world(&self, px: u32, py: u32) -> Option<Vec3> {
        let d = self.render.depth.get(px, py)?;
        (d > 0.0).then(|| self.pose.unproject(px, py, d))
    }

    /// Image offset pointing along world-down at the subject.
    fn down_step(&self) -> Option<(i64, i64)> {
        let a = self.pose.project(&self.subject_center)?;
        let b = self.pose.project(&(self.subject_center - UP * 0.1))?;
        let (du, dv) = (b.u - a.u, b.v - a.v);
        let n = du.hypot(dv);
        if n < 1e-9 {
            return None;
        }
        Some(((du / n).round() as i64, (dv / n).round() as i64))
    }

    /// Fraction of subject pixels resting on an object pixel directly below
    /// them in the image whose world height is within contact slack.
    pub fn support(&self) -> f64 {
        let Some((sx, sy)) = self.down_step() else {
            return 0.0;
        };
        let (w, h) = (self.render.rgb_proxy.width as i64, self.render.rgb_proxy.height as i64);
        let footprint = self.pose.pixel_angle();
        let (mut n, mut ok) = (0usize, 0usize);
        for (px, py) in self.pixels_of(self.subject) {
            let (qx, qy) = (px as i64 + sx, py as i64 + sy);
            if qx < 0 || qy < 0 || qx >= w || qy >= h {
                continue;
            }
            let (qx, qy) = (qx as u32, qy as u32);
            if self.render.rgb_proxy.get(qx, qy) != Some(self.object) {
                continue;
            }
            let (Some(p), Some(q)) = (self.world(px, py), self.world(qx, qy)) else {
                continue;
            };
            n += 1;
            let depth = self.render.depth.get(qx, qy).unwrap_or(0.0);
            if (p.z - q.z).abs() <= SUPPORT_GAP + depth * footprint {
                ok += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            ok as f64 / n as f64
        }
    }

    fn mean_height(&self, id: u32) -> Option<f64> {
        let (sum, n) = self
            .pixels_of(id)
            .filter_map(|(x, y)| self.world(x, y))
            .fold((0.0, 0usize), |(s, n), p| (s + p.z, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Agreement of the mean back-projected heights with the claimed order.
    pub fn vertical(&self, polarity: Polarity) -> f64 {
        let (Some(zi), Some(zj)) = (self.mean_height(self.subject), self.mean_height(self.object)) else {
            return 0.0;
        };
        let up = crate::geom::sigmoid((zi - zj) / VERTICAL_SCALE);
        match polarity {
            Polarity::Up => up,
            Polarity::Down => 1.0 - up,
            _ => up.max(1.0 - up),
        }
    }

    /// Fraction of subject pixels whose depth falls between the container's
    /// entry and exit along the pixel ray.
    pub fn containment(&self) -> f64 {
        let eye = self.pose.center();
        let (mut n, mut ok) = (0usize, 0usize);
        for (px, py) in self.pixels_of(self.subject) {
            let Some(d) = self.render.depth.get(px, py).filter(|d| *d > 0.0) else {
                continue;
            };
            n += 1;
            let ray = self.pose.pixel_ray(px, py);
            if let Some(hit) = self.object_box.ray_intersect(&eye, &ray) {
                if d >= hit.t_near - CONTAINMENT_SLACK && d <= hit.t_far + CONTAINMENT_SLACK {
                    ok += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            ok as f64 / n as f64
        }
    }

    /// Family-mixed depth score of one view.
    pub fn score(&self, pi: &[f64; 8], polarity: Polarity) -> f64 {
        let mut s = 0.0;
        for fam in WitnessFamily::ALL {
            let w = pi[fam.index()];
            if w == 0.0 {
                continue;
            }
            let t = match fam {
                WitnessFamily::Support => self.support(),
                WitnessFamily::Containment => self.containment(),
                WitnessFamily::VerticalOrder => self.vertical(polarity),
                _ => NEUTRAL,
            };
            s += w * t;
        }
        s.clamp(0.0, 1.0)
    }
}
