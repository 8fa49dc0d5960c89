//! Geometric witness probes: one value in `[0, 1]` per witness family.

mod kernels;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_between, sigmoid, Obb, Vec3, UP};
use crate::phrasebank::{Polarity, WitnessFamily};
use crate::scenekit::ObjectInstance;

pub use kernels::{
    access_box, band_fraction, clip_convex, containment_fraction, convex_hull, distance_to_convex, footprint,
    horizontal_overlap, in_convex, polygon_area, surface_distance, KernelError, ACCESS_INFLATION, INTERIOR_MARGIN,
    OVERLAP_CELL, SURFACE_PERCENTILE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeParams {
    /// Support logit weights on overlap, surface distance and vertical gap.
    pub support: [f64; 3],
    /// Containment logit weights on inside fraction and outside distance.
    pub containment: [f64; 2],
    pub tau_d: f64,
    /// Divide proximity distances by `room_scale / 5`.
    pub normalize_proximity: bool,
    /// Vertical order: height margin (m) and horizontal offset allowance (m).
    pub vertical: [f64; 2],
    /// Vertical order logit gains on height gap and horizontal offset.
    pub vertical_gain: [f64; 2],
    /// Attachment: contact band (m) and minimum contact fraction.
    pub attachment: [f64; 2],
    /// Attachment logit gains on contact fraction and surface mismatch.
    pub attachment_gain: [f64; 2],
    /// Largest angle between front axis and target still scored above zero.
    pub facing_half_angle: f64,
    /// Interaction contact radius (m).
    pub contact_radius: f64,
    /// Interaction logit gain and offset.
    pub interaction_gain: [f64; 2],
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            support: [4.0, 8.0, 4.0],
            containment: [6.0, 4.0],
            tau_d: 0.25,
            normalize_proximity: true,
            vertical: [0.05, 0.02],
            vertical_gain: [20.0, 60.0],
            attachment: [0.03, 0.2],
            attachment_gain: [10.0, 6.0],
            facing_half_angle: 50f64.to_radians(),
            contact_radius: 0.02,
            interaction_gain: [20.0, 2.0],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("probe parameter {0} must be positive and finite")]
    NonPositive(&'static str),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl ProbeParams {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let checks: [(&'static str, &[f64]); 9] = [
            ("support", &self.support),
            ("containment", &self.containment),
            ("tau_d", &[self.tau_d]),
            ("vertical", &self.vertical),
            ("vertical_gain", &self.vertical_gain),
            ("attachment", &self.attachment),
            ("attachment_gain", &self.attachment_gain),
            ("facing_half_angle", &[self.facing_half_angle]),
            (
                "interaction",
                &[self.contact_radius, self.interaction_gain[0], self.interaction_gain[1]],
            ),
        ];
        for (name, vals) in checks {
            if !vals.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(ProbeError::NonPositive(name));
            }
        }
        Ok(())
    }

    /// The trainable subset `(a1, a2, a3, b1, b2, tau_d)`.
    pub fn trainable(&self) -> [f64; 6] {
        let [a1, a2, a3] = self.support;
        let [b1, b2] = self.containment;
        [a1, a2, a3, b1, b2, self.tau_d]
    }

    pub fn set_trainable(&mut self, v: &[f64; 6]) {
        self.support = [v[0], v[1], v[2]];
        self.containment = [v[3], v[4]];
        self.tau_d = v[5];
    }
}

/// Raw pair measurements; independent of the phrase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PairMeasurements {
    pub d_surf: f64,
    /// Signed vertical displacement for support, zero at exact contact.
    pub dz: f64,
    pub omega: f64,
    pub delta_in: f64,
    pub d_out: f64,
    /// Subject-above-object height gap and horizontal offset.
    pub up_gap: f64,
    pub up_offset: f64,
    /// Subject-below-object height gap and horizontal offset.
    pub down_gap: f64,
    pub down_offset: f64,
    pub attach_fraction: f64,
    pub attach_mismatch: f64,
    /// Angle between the subject's front and the direction to the object.
    pub facing_angle: f64,
    /// Angle between the object's front and the direction to the subject.
    pub front_angle: f64,
    pub subject_symmetric: bool,
    pub object_symmetric: bool,
    pub contact_fraction: f64,
    /// Distance scale used when proximity normalization is on.
    pub distance_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeVector {
    pub q: [f64; 8],
    pub raw: PairMeasurements,
}

fn horizontal(v: Vec3) -> Vec3 {
    Vec3::new(v.x, v.y, 0.0)
}

/// Height gap of `upper` above `lower` and how far `upper`'s center lies
/// outside `lower`'s footprint.
fn vertical_terms(upper: &Obb, lower: &Obb) -> (f64, f64) {
    let gap = upper.bottom_z() - lower.top_z();
    let offset = distance_to_convex(&footprint(lower), [upper.center.x, upper.center.y]);
    (gap, offset)
}

/// Measures a subject/object pair from the given mask points. The points
/// default to the instances' own masks; perturbation passes jittered copies.
pub fn measure_pair(
    subject: &ObjectInstance,
    object: &ObjectInstance,
    points_i: &[Vec3],
    points_j: &[Vec3],
    params: &ProbeParams,
    room_scale: f64,
) -> Result<PairMeasurements, ProbeError> {
    let (bi, bj) = (&subject.obb, &object.obb);
    let d_surf = surface_distance(points_i, bi, points_j, bj)?;
    // Both a gap above the support and a subject sunk below its top lower dz.
    let dz = -(bi.bottom_z() - bj.top_z()).abs();
    let omega = horizontal_overlap(points_i, bj)?;
    let (delta_in, d_out) = containment_fraction(points_i, bj, object.open_face)?;
    let (up_gap, up_offset) = vertical_terms(bi, bj);
    let (down_gap, down_offset) = vertical_terms(bj, bi);

    let band = params.attachment[0];
    let attach_fraction = band_fraction(points_i, bj, band);
    let contact: Vec<&Vec3> = points_i.iter().filter(|p| bj.distance(p) <= band).collect();
    let attach_mismatch = if contact.is_empty() {
        1.0
    } else {
        let mean = contact.iter().fold(Vec3::zeros(), |a, p| a + **p) / contact.len() as f64;
        let (_, n_obj) = bj.nearest_face(&mean);
        // Resting on the top face is support, not attachment.
        let top = n_obj.dot(&UP).max(0.0);
        let best_anti = (0..6)
            .map(|f| -bi.face_normal(f).dot(&n_obj))
            .fold(f64::NEG_INFINITY, f64::max);
        top + (1.0 - best_anti).max(0.0)
    };

    let to_object = horizontal(bj.center - bi.center);
    let facing_angle = angle_between(&horizontal(subject.front_axis), &to_object);
    let front_angle = angle_between(&horizontal(object.front_axis), &(-to_object));

    let (small, big) = if bi.volume() <= bj.volume() {
        (points_i, bj)
    } else {
        (points_j, bi)
    };
    let contact_fraction = band_fraction(small, big, params.contact_radius);

    Ok(PairMeasurements {
        d_surf,
        dz,
        omega,
        delta_in,
        d_out,
        up_gap,
        up_offset,
        down_gap,
        down_offset,
        attach_fraction,
        attach_mismatch,
        facing_angle,
        front_angle,
        subject_symmetric: subject.symmetric,
        object_symmetric: object.symmetric,
        contact_fraction,
        distance_scale: room_scale / 5.0,
    })
}

pub fn probe_support(omega: f64, d_surf: f64, dz: f64, a: &[f64; 3]) -> f64 {
    sigmoid(a[0] * omega - a[1] * d_surf + a[2] * dz)
}

pub fn probe_containment(delta_in: f64, d_out: f64, b: &[f64; 2]) -> f64 {
    sigmoid(b[0] * delta_in - b[1] * d_out)
}

pub fn probe_proximity(d_surf: f64, tau_d: f64) -> f64 {
    (-d_surf / tau_d).exp()
}

/// Proximity distance after the optional room-scale normalization.
pub fn proximity_distance(raw: &PairMeasurements, params: &ProbeParams) -> f64 {
    if params.normalize_proximity && raw.distance_scale > 0.0 {
        raw.d_surf / raw.distance_scale
    } else {
        raw.d_surf
    }
}

pub fn probe_vertical(gap: f64, offset: f64, params: &ProbeParams) -> f64 {
    let [margin, allowance] = params.vertical;
    let [c1, c2] = params.vertical_gain;
    // Gaps beyond 0.25 m add nothing: far above is still above.
    sigmoid(c1 * (gap.min(0.25) + margin) - c2 * (offset - allowance).max(0.0))
}

pub fn probe_attachment(fraction: f64, mismatch: f64, params: &ProbeParams) -> f64 {
    let [c3, c4] = params.attachment_gain;
    sigmoid(c3 * (fraction - params.attachment[1]) - c4 * mismatch)
}

/// Cosine falloff: 1 along the axis, 0 at and beyond the half-angle.
/// Halved when the axis was sampled for a symmetric object.
pub fn probe_orientation(angle: f64, symmetric: bool, half_angle: f64) -> f64 {
    let c = half_angle.cos();
    let q = ((angle.cos() - c) / (1.0 - c)).clamp(0.0, 1.0);
    if symmetric {
        0.5 * q
    } else {
        q
    }
}

pub fn probe_interaction(contact_fraction: f64, params: &ProbeParams) -> f64 {
    let [c5, c6] = params.interaction_gain;
    sigmoid(c5 * contact_fraction - c6)
}

/// Family probe values for a phrase of the given polarity.
pub fn probe_vector(raw: &PairMeasurements, params: &ProbeParams, polarity: Polarity) -> ProbeVector {
    let up = probe_vertical(raw.up_gap, raw.up_offset, params);
    let down = probe_vertical(raw.down_gap, raw.down_offset, params);
    let half = params.facing_half_angle;
    let q_vert = match polarity {
        Polarity::Up => up,
        Polarity::Down => down,
        _ => up.max(down),
    };
    let q_orient = match polarity {
        Polarity::Front => probe_orientation(raw.front_angle, raw.object_symmetric, half),
        Polarity::Behind => probe_orientation(std::f64::consts::PI - raw.front_angle, raw.object_symmetric, half),
        _ => probe_orientation(raw.facing_angle, raw.subject_symmetric, half),
    };
    let mut q = [0.0; 8];
    q[WitnessFamily::Support.index()] = probe_support(raw.omega, raw.d_surf, raw.dz, &params.support);
    q[WitnessFamily::Containment.index()] = probe_containment(raw.delta_in, raw.d_out, &params.containment);
    q[WitnessFamily::Proximity.index()] = probe_proximity(proximity_distance(raw, params), params.tau_d);
    q[WitnessFamily::VerticalOrder.index()] = q_vert;
    q[WitnessFamily::Attachment.index()] = probe_attachment(raw.attach_fraction, raw.attach_mismatch, params);
    q[WitnessFamily::Orientation.index()] = q_orient;
    q[WitnessFamily::Interaction.index()] = probe_interaction(raw.contact_fraction, params);
    q[WitnessFamily::FunctionalUncertain.index()] = 0.0;
    ProbeVector { q, raw: *raw }
}

pub fn s3d_score(pi: &[f64; 8], probes: &ProbeVector) -> f64 {
    pi.iter()
        .zip(&probes.q)
        .map(|(p, q)| p * q)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Gradient of the family probe for `family` with respect to the trainable
/// parameters `(a1, a2, a3, b1, b2, tau_d)`; zero for the fixed families.
pub fn probe_gradient(raw: &PairMeasurements, params: &ProbeParams, family: WitnessFamily) -> [f64; 6] {
    let mut g = [0.0; 6];
    match family {
        WitnessFamily::Support => {
            let q = probe_support(raw.omega, raw.d_surf, raw.dz, &params.support);
            let s = q * (1.0 - q);
            g[0] = s * raw.omega;
            g[1] = -s * raw.d_surf;
            g[2] = s * raw.dz;
        }
        WitnessFamily::Containment => {
            let q = probe_containment(raw.delta_in, raw.d_out, &params.containment);
            let s = q * (1.0 - q);
            g[3] = s * raw.delta_in;
            g[4] = -s * raw.d_out;
        }
        WitnessFamily::Proximity => {
            let d = proximity_distance(raw, params);
            let q = probe_proximity(d, params.tau_d);
            g[5] = q * d / (params.tau_d * params.tau_d);
        }
        _ => {}
    }
    g
}
