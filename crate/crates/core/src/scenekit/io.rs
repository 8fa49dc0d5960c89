//! JSON Lines scene files: one `meta` record, then `frame`, `object` and
//! `label` records. Floats are written in shortest round-trip form.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Mat3, Obb, Vec3};

use super::model::{CameraPose, Frame, Intrinsics, LabelStatus, ObjectInstance, RelationLabel, Scene};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn malformed(line: usize, message: impl Into<String>) -> SceneIoError {
    SceneIoError::Malformed {
        line,
        message: message.into(),
    }
}

type Row3 = [f64; 3];

fn rows(m: &Mat3) -> [Row3; 3] {
    [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]])
}

fn from_rows(r: &[Row3; 3]) -> Mat3 {
    Mat3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

fn arr(v: &Vec3) -> Row3 {
    [v.x, v.y, v.z]
}

fn vec(a: &Row3) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    center: Row3,
    half_extents: Row3,
    rotation: [Row3; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Meta {
        schema_version: u32,
        name: String,
        seed: u64,
        room_scale: f64,
    },
    Frame {
        index: usize,
        rotation: [Row3; 3],
        translation: Row3,
        intrinsics: Intrinsics,
    },
    Object {
        id: u32,
        category: String,
        obb: BoxRecord,
        front_axis: Row3,
        symmetric: bool,
        open_face: Option<usize>,
        visible_frames: Vec<usize>,
        feature: Vec<f64>,
        mask_points: Vec<Row3>,
    },
    Label {
        subject_id: u32,
        object_id: u32,
        phrase: String,
        status: LabelStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<bool>,
    },
}

/// Serializes a scene to JSON Lines text. With `redact`, truth bits are dropped.
pub fn scene_to_jsonl(scene: &Scene, redact: bool) -> String {
    let mut out = Vec::new();
    let meta = Record::Meta {
        schema_version: SCHEMA_VERSION,
        name: scene.name.clone(),
        seed: scene.seed,
        room_scale: scene.room_scale,
    };
    out.push(meta);
    for f in &scene.frames {
        out.push(Record::Frame {
            index: f.index,
            rotation: rows(&f.pose.rotation),
            translation: arr(&f.pose.translation),
            intrinsics: f.pose.intrinsics,
        });
    }
    for o in &scene.objects {
        out.push(Record::Object {
            id: o.id,
            category: o.category.clone(),
            obb: BoxRecord {
                center: arr(&o.obb.center),
                half_extents: arr(&o.obb.half_extents),
                rotation: rows(&o.obb.rotation),
            },
            front_axis: arr(&o.front_axis),
            symmetric: o.symmetric,
            open_face: o.open_face,
            visible_frames: o.visible_frames.iter().copied().collect(),
            feature: o.feature.clone(),
            mask_points: o.mask_points.iter().map(arr).collect(),
        });
    }
    for l in &scene.labels {
        out.push(Record::Label {
            subject_id: l.subject_id,
            object_id: l.object_id,
            phrase: l.phrase.clone(),
            status: l.status,
            truth: if redact { None } else { l.truth },
        });
    }
    let mut s = String::new();
    for r in out {
        s.push_str(&serde_json::to_string(&r).expect("scene records serialize"));
        s.push('\n');
    }
    s
}

/// Parses JSON Lines text produced by [`scene_to_jsonl`].
pub fn scene_from_jsonl(text: &str) -> Result<Scene, SceneIoError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

fn parse_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Scene, SceneIoError> {
    let mut meta: Option<(String, u64, f64)> = None;
    let mut frames = Vec::new();
    let mut objects: Vec<ObjectInstance> = Vec::new();
    let mut labels = Vec::new();
    let mut label_lines = Vec::new();
    for (k, line) in lines.enumerate() {
        let n = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| malformed(n, e.to_string()))?;
        match rec {
            Record::Meta {
                schema_version,
                name,
                seed,
                room_scale,
            } => {
                if schema_version != SCHEMA_VERSION {
                    return Err(malformed(n, format!("unsupported schema_version {schema_version}")));
                }
                if meta.is_some() {
                    return Err(malformed(n, "duplicate meta record"));
                }
                meta = Some((name, seed, room_scale));
            }
            _ if meta.is_none() => return Err(malformed(n, "first record must be meta")),
            Record::Frame {
                index,
                rotation,
                translation,
                intrinsics,
            } => {
                if index != frames.len() {
                    return Err(malformed(n, format!("frame index {index} out of sequence")));
                }
                let pose = CameraPose {
                    rotation: from_rows(&rotation),
                    translation: vec(&translation),
                    intrinsics,
                };
                if !pose.is_orthonormal(1e-6) || !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
                    return Err(malformed(
                        n,
                        "camera rotation not orthonormal or focal length not positive",
                    ));
                }
                frames.push(Frame { index, pose });
            }
            Record::Object {
                id,
                category,
                obb,
                front_axis,
                symmetric,
                open_face,
                visible_frames,
                feature,
                mask_points,
            } => {
                if objects.iter().any(|o| o.id == id) {
                    return Err(malformed(n, format!("duplicate object id {id}")));
                }
                objects.push(ObjectInstance {
                    id,
                    category,
                    obb: Obb::new(vec(&obb.center), vec(&obb.half_extents), from_rows(&obb.rotation)),
                    mask_points: mask_points.iter().map(vec).collect(),
                    feature,
                    front_axis: vec(&front_axis),
                    symmetric,
                    open_face,
                    visible_frames: visible_frames.into_iter().collect::<BTreeSet<_>>(),
                });
            }
            Record::Label {
                subject_id,
                object_id,
                phrase,
                status,
                truth,
            } => {
                labels.push(RelationLabel {
                    subject_id,
                    object_id,
                    phrase,
                    status,
                    truth,
                });
                label_lines.push(n);
            }
        }
    }
    let (name, seed, room_scale) = meta.ok_or_else(|| malformed(0, "missing meta record"))?;
    for (l, n) in labels.iter().zip(&label_lines) {
        for id in [l.subject_id, l.object_id] {
            if !objects.iter().any(|o| o.id == id) {
                return Err(malformed(*n, format!("label references missing object id {id}")));
            }
        }
    }
    let scene = Scene::new(name, seed, room_scale, frames, objects, labels);
    scene.validate().map_err(|m| malformed(0, m))?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: &Path, redact: bool) -> Result<(), SceneIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(scene_to_jsonl(scene, redact).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneIoError> {
    parse_lines(BufReader::new(File::open(path)?).lines())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenekit::{generate_scene, SceneSpec};

    #[test]
    fn round_trip_is_lossless() {
        let scene = generate_scene(&SceneSpec::default(), 11).unwrap();
        let text = scene_to_jsonl(&scene, false);
        let back = scene_from_jsonl(&text).unwrap();
        assert_eq!(scene, back);
        assert_eq!(scene_to_jsonl(&back, false), text);
    }

    #[test]
    fn empty_scene_round_trips() {
        let scene = Scene::new("empty", 0, 1.0, vec![], vec![], vec![]);
        assert_eq!(scene_from_jsonl(&scene_to_jsonl(&scene, false)).unwrap(), scene);
    }

    #[test]
    fn dangling_label_names_its_line() {
        let scene = Scene::new("empty", 0, 1.0, vec![], vec![], vec![]);
        let mut text = scene_to_jsonl(&scene, false);
        text.push_str(r#"{"kind":"label","subject_id":3,"object_id":4,"phrase":"on","status":"unlabeled"}"#);
        text.push('\n');
        let err = scene_from_jsonl(&text).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn garbage_names_its_line() {
        let err = scene_from_jsonl(
            "{\"kind\":\"meta\",\"schema_version\":1,\"name\":\"x\",\"seed\":0,\"room_scale\":1.0}\nnot json\n",
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("line 2:"));
    }

    #[test]
    fn redacted_output_has_no_truth() {
        let scene = generate_scene(&SceneSpec::default(), 3).unwrap();
        let text = scene_to_jsonl(&scene, true);
        assert!(!text.contains("truth"));
        assert!(scene_to_jsonl(&scene, false).contains("truth"));
    }
}
