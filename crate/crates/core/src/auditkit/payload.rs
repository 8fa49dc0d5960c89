use std::io::Cursor;

use base64::Engine;
use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::{AuditCandidate, AuditError};
use crate::geom::Obb;
use crate::scenekit::{project_mask, Mask2D, Scene};
use crate::viewwit::WitnessTrace;

/// The complete set of top-level keys an annotator receives.
pub const PAYLOAD_FIELDS: [&str; 5] = ["id", "phrase", "frames", "geometry", "trace"];

const MAX_FRAMES: usize = 3;
const MAX_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub frame_index: usize,
    /// PNG data URL of the frame.
    pub image: String,
    /// Transparent PNG overlays of the subject and object masks.
    pub subject_mask: String,
    pub object_mask: String,
    /// Grayscale PNG of the depth inside `crop_box`, nearer is brighter.
    pub depth_crop: String,
    pub crop_box: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGeometry {
    pub category: String,
    pub obb: Obb,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryPayload {
    pub subject: ObjectGeometry,
    pub object: ObjectGeometry,
}

/// What an annotator sees of a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatePayload {
    pub id: String,
    pub phrase: String,
    pub frames: Vec<FramePayload>,
    pub geometry: GeometryPayload,
    pub trace: WitnessTrace,
}

fn png_url(encode: impl FnOnce(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>) -> String {
    let mut buf = Cursor::new(Vec::new());
    encode(&mut buf).expect("in-memory PNG encoding");
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
    )
}

fn palette(id: u32) -> Rgb<u8> {
    let h = id.wrapping_mul(2_654_435_761);
    Rgb([
        80 + (h & 0x7f) as u8,
        80 + ((h >> 8) & 0x7f) as u8,
        80 + ((h >> 16) & 0x7f) as u8,
    ])
}

fn overlay(mask: &Mask2D, width: u32, height: u32, color: [u8; 3]) -> String {
    let mut img = RgbaImage::from_pixel(width, height, Rgba([0, 0, 0, 0]));
    if mask.width == width && mask.height == height {
        for (x, y) in mask.pixels() {
            img.put_pixel(x, y, Rgba([color[0], color[1], color[2], 140]));
        }
    }
    png_url(|w| img.write_to(w, ImageFormat::Png))
}

fn frames_for(scene: &Scene, c: &AuditCandidate) -> Vec<usize> {
    let valid = |f: &usize| *f < scene.frames.len();
    let mut frames: Vec<usize> = c
        .trace
        .supporting_frames
        .iter()
        .map(|f| f.frame_index)
        .filter(valid)
        .collect();
    if frames.is_empty() {
        if let (Some(a), Some(b)) = (scene.object(c.subject_id), scene.object(c.object_id)) {
            frames = a
                .visible_frames
                .intersection(&b.visible_frames)
                .copied()
                .filter(valid)
                .collect();
            if frames.is_empty() {
                frames = a
                    .visible_frames
                    .union(&b.visible_frames)
                    .copied()
                    .filter(valid)
                    .collect();
            }
        }
    }
    if frames.is_empty() && !scene.frames.is_empty() {
        frames.push(0);
    }
    frames.truncate(MAX_FRAMES);
    frames
}

fn frame_payload(scene: &Scene, c: &AuditCandidate, index: usize) -> Option<FramePayload> {
    let render = scene.rendering(index)?;
    let (w, h) = (render.depth.width, render.depth.height);
    let rgb = RgbImage::from_fn(w, h, |x, y| {
        render.rgb_proxy.get(x, y).map_or(Rgb([30, 30, 30]), palette)
    });
    let subject = project_mask(scene, c.subject_id, index);
    let object = project_mask(scene, c.object_id, index);
    let union = if subject.width == object.width && subject.height == object.height {
        subject.union(&object)
    } else {
        Mask2D::empty(1, 1)
    };
    let full = [0, 0, w - 1, h - 1];
    let [x0, y0, x1, y1] = c
        .trace
        .region_2d
        .get(&index)
        .copied()
        .or_else(|| union.bbox())
        .unwrap_or(full);
    let (x1, y1) = (x1.min(w - 1), y1.min(h - 1));
    let (x0, y0) = (x0.min(x1), y0.min(y1));
    let values: Vec<f64> = (y0..=y1)
        .flat_map(|y| (x0..=x1).map(move |x| (x, y)))
        .filter_map(|(x, y)| render.depth.get(x, y))
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let crop = GrayImage::from_fn(x1 - x0 + 1, y1 - y0 + 1, |x, y| {
        Luma([render
            .depth
            .get(x0 + x, y0 + y)
            .map_or(0, |d| (255.0 - 200.0 * (d - lo) / span).round() as u8)])
    });
    Some(FramePayload {
        frame_index: index,
        image: png_url(|wr| rgb.write_to(wr, ImageFormat::Png)),
        subject_mask: overlay(&subject, w, h, [230, 40, 40]),
        object_mask: overlay(&object, w, h, [40, 90, 230]),
        depth_crop: png_url(|wr| crop.write_to(wr, ImageFormat::Png)),
        crop_box: [x0, y0, x1, y1],
    })
}

fn geometry(scene: &Scene, id: u32) -> Result<ObjectGeometry, AuditError> {
    let o = scene
        .object(id)
        .ok_or_else(|| AuditError::Config(format!("object {id} missing from scene {}", scene.name)))?;
    let step = o.mask_points.len().div_ceil(MAX_POINTS).max(1);
    Ok(ObjectGeometry {
        category: o.category.clone(),
        obb: o.obb,
        points: o.mask_points.iter().step_by(step).map(|p| [p.x, p.y, p.z]).collect(),
    })
}

/// Builds the annotator view of a candidate. Method provenance is not part
/// of the payload type.
pub fn candidate_payload(candidate: &AuditCandidate, scene: &Scene) -> Result<CandidatePayload, AuditError> {
    let geometry = GeometryPayload {
        subject: geometry(scene, candidate.subject_id)?,
        object: geometry(scene, candidate.object_id)?,
    };
    Ok(CandidatePayload {
        id: candidate.id.clone(),
        phrase: candidate.phrase.clone(),
        frames: frames_for(scene, candidate)
            .into_iter()
            .filter_map(|f| frame_payload(scene, candidate, f))
            .collect(),
        geometry,
        trace: candidate.trace.clone(),
    })
}
