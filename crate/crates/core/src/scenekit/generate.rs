//! Procedural desk-scale scenes with known ground-truth relations.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_between, obb_overlap, yaw_matrix, Obb, Vec3};
use crate::hashing::hashed_vector;

use super::model::{CameraPose, Frame, Intrinsics, LabelStatus, ObjectInstance, RelationLabel, Scene};
use super::render::mask_and_visibility;

/// Attempts per object before a spec is rejected.
pub const PLACEMENT_RETRIES: usize = 64;
pub const FEATURE_DIM: usize = 32;
const WALL_HEIGHT: f64 = 2.5;
/// Half-angle and range of the cone that makes a relation directional.
/// Surface gap (m) below which two objects touch.
const CONTACT_GAP: f64 = 0.01;
const FACING_CONE: f64 = 30.0 * PI / 180.0;

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place a {category} without interpenetration after {attempts} attempts")]
    PlacementFailed { category: String, attempts: usize },
}

/// Relative weights of the configurations small objects are placed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMix {
    pub stacked: f64,
    pub contained: f64,
    pub adjacent: f64,
    pub mounted: f64,
    /// When positive, chairs are turned to face a table, desk or sofa.
    pub facing: f64,
}

impl Default for FamilyMix {
    fn default() -> Self {
        Self {
            stacked: 0.35,
            contained: 0.25,
            adjacent: 0.25,
            mounted: 0.15,
            facing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub furniture: (usize, usize),
    pub small_objects: (usize, usize),
    pub furniture_kinds: Vec<String>,
    pub small_kinds: Vec<String>,
    pub mix: FamilyMix,
    pub drop_rate: f64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Floor extents along x and y, meters.
    pub room_size: (f64, f64),
    pub proximity_radius: f64,
    pub surface_points: usize,
    pub interior_points: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            furniture: (3, 5),
            small_objects: (4, 7),
            furniture_kinds: ["table", "desk", "shelf", "cabinet", "chair", "sofa"]
                .map(String::from)
                .to_vec(),
            small_kinds: [
                "cup", "book", "box", "lamp", "plant", "bag", "monitor", "picture", "clock",
            ]
            .map(String::from)
            .to_vec(),
            mix: FamilyMix::default(),
            drop_rate: 0.3,
            frames: 8,
            width: 96,
            height: 72,
            room_size: (6.0, 5.0),
            proximity_radius: 0.5,
            surface_points: 512,
            interior_points: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Furniture,
    Small,
    Wall,
}

#[derive(Debug, Clone, Copy)]
struct Category {
    name: &'static str,
    /// Full size along the local x, y (front) and z axes.
    size: [f64; 3],
    role: Role,
    support_top: bool,
    container: bool,
    /// Has a meaningful front (seats, screens).
    faces: bool,
    mount_only: bool,
}

const fn cat(name: &'static str, size: [f64; 3], role: Role) -> Category {
    Category {
        name,
        size,
        role,
        support_top: false,
        container: false,
        faces: false,
        mount_only: false,
    }
}

const CATALOG: &[Category] = &[
    Category {
        support_top: true,
        ..cat("table", [1.2, 0.8, 0.75], Role::Furniture)
    },
    Category {
        support_top: true,
        ..cat("desk", [1.4, 0.7, 0.75], Role::Furniture)
    },
    Category {
        support_top: true,
        container: true,
        ..cat("shelf", [0.8, 0.45, 1.6], Role::Furniture)
    },
    Category {
        support_top: true,
        container: true,
        ..cat("cabinet", [0.9, 0.5, 0.9], Role::Furniture)
    },
    Category {
        faces: true,
        ..cat("chair", [0.5, 0.5, 0.9], Role::Furniture)
    },
    Category {
        faces: true,
        ..cat("sofa", [1.8, 0.8, 0.8], Role::Furniture)
    },
    cat("cup", [0.08, 0.08, 0.1], Role::Small),
    cat("book", [0.2, 0.15, 0.04], Role::Small),
    cat("box", [0.3, 0.25, 0.2], Role::Small),
    cat("lamp", [0.2, 0.2, 0.45], Role::Small),
    cat("plant", [0.25, 0.25, 0.4], Role::Small),
    cat("bag", [0.35, 0.2, 0.3], Role::Small),
    Category {
        faces: true,
        ..cat("monitor", [0.55, 0.2, 0.4], Role::Small)
    },
    Category {
        mount_only: true,
        faces: true,
        ..cat("picture", [0.6, 0.03, 0.4], Role::Small)
    },
    Category {
        mount_only: true,
        ..cat("clock", [0.3, 0.05, 0.3], Role::Small)
    },
    cat("wall", [6.0, 0.1, WALL_HEIGHT], Role::Wall),
];

fn category(name: &str) -> Option<&'static Category> {
    CATALOG.iter().find(|c| c.name == name)
}

/// Whether a category is treated as an open container with an access face.
pub fn is_container_category(name: &str) -> bool {
    category(name).is_some_and(|c| c.container)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Config {
    Stacked,
    Contained,
    Adjacent,
    Mounted,
}

struct Placed {
    cat: &'static Category,
    obb: Obb,
}

/// Local +y is every object's front.
fn front_of(obb: &Obb) -> Vec3 {
    obb.axis(1)
}

fn footprint_radius(half: &Vec3) -> f64 {
    (half.x * half.x + half.y * half.y).sqrt()
}

fn validate(spec: &SceneSpec) -> Result<(), GenerateError> {
    let bad = |m: String| Err(GenerateError::InvalidSpec(m));
    if spec.furniture.0 > spec.furniture.1 || spec.small_objects.0 > spec.small_objects.1 {
        return bad("empty object count range".into());
    }
    if !(0.0..1.0).contains(&spec.drop_rate) {
        return bad(format!("drop rate {} outside [0, 1)", spec.drop_rate));
    }
    if spec.frames == 0 || spec.width == 0 || spec.height == 0 {
        return bad("frame count and resolution must be positive".into());
    }
    if !(spec.room_size.0 > 0.5 && spec.room_size.1 > 0.5 && spec.proximity_radius > 0.0) {
        return bad("room and proximity radius must be positive".into());
    }
    if spec.surface_points == 0 {
        return bad("objects need at least one surface point".into());
    }
    for (kinds, role) in [
        (&spec.furniture_kinds, Role::Furniture),
        (&spec.small_kinds, Role::Small),
    ] {
        for k in kinds {
            match category(k) {
                Some(c) if c.role == role => {}
                _ => return bad(format!("unknown or misplaced category '{k}'")),
            }
        }
    }
    if spec.furniture.1 > 0 && spec.furniture_kinds.is_empty() {
        return bad("furniture requested but no furniture kinds".into());
    }
    if spec.small_objects.1 > 0 && spec.small_kinds.is_empty() {
        return bad("small objects requested but no small kinds".into());
    }
    let m = &spec.mix;
    if [m.stacked, m.contained, m.adjacent, m.mounted, m.facing]
        .iter()
        .any(|w| !(*w >= 0.0))
    {
        return bad("negative mix weight".into());
    }
    Ok(())
}

/// Generates a scene; a pure function of `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, GenerateError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (room_w, room_d) = spec.room_size;
    let mut placed: Vec<Placed> = Vec::new();
    let mut relations: Vec<(usize, &'static str, usize)> = Vec::new();

    let mountables = spec
        .small_kinds
        .iter()
        .any(|k| category(k).is_some_and(|c| c.mount_only));
    let wall = (spec.mix.mounted > 0.0 && mountables).then(|| {
        let c = category("wall").unwrap();
        let obb = Obb::axis_aligned(
            Vec3::new(0.0, room_d / 2.0 + 0.05, WALL_HEIGHT / 2.0),
            Vec3::new(room_w / 2.0, 0.05, WALL_HEIGHT / 2.0),
        );
        // Rotate so the wall's front (local +y) faces into the room.
        let obb = Obb::new(obb.center, obb.half_extents, yaw_matrix(PI));
        placed.push(Placed { cat: c, obb });
        0usize
    });

    let n_furniture = rng.random_range(spec.furniture.0..=spec.furniture.1);
    for _ in 0..n_furniture {
        let kind = spec.furniture_kinds.choose(&mut rng).unwrap();
        let c = category(kind).unwrap();
        let obb = place_furniture(&mut rng, spec, c, &placed)?;
        placed.push(Placed { cat: c, obb });
    }

    let n_small = rng.random_range(spec.small_objects.0..=spec.small_objects.1);
    for _ in 0..n_small {
        let mut done = false;
        for _ in 0..PLACEMENT_RETRIES {
            let kind = spec.small_kinds.choose(&mut rng).unwrap();
            let c = category(kind).unwrap();
            let options = config_options(spec, c, &placed, wall);
            let total: f64 = options.iter().map(|(_, w)| w).sum();
            if total <= 0.0 {
                continue;
            }
            let mut pick = rng.random::<f64>() * total;
            let mut config = options[0].0;
            for (cfg, w) in &options {
                if pick < *w {
                    config = *cfg;
                    break;
                }
                pick -= w;
            }
            if let Some((obb, host)) = place_small(&mut rng, spec, c, config, &placed, wall) {
                let idx = placed.len();
                placed.push(Placed { cat: c, obb });
                match config {
                    Config::Stacked => {
                        relations.push((idx, "on", host));
                        relations.push((idx, "touching", host));
                        relations.push((host, "touching", idx));
                    }
                    Config::Contained => relations.push((idx, "inside", host)),
                    Config::Mounted => {
                        relations.push((idx, "attached to", host));
                        relations.push((idx, "touching", host));
                        relations.push((host, "touching", idx));
                    }
                    Config::Adjacent => {}
                }
                done = true;
                break;
            }
        }
        if !done {
            let category = spec.small_kinds.join("|");
            return Err(GenerateError::PlacementFailed {
                category,
                attempts: PLACEMENT_RETRIES,
            });
        }
    }

    let room_scale = (room_w * room_w + room_d * room_d + WALL_HEIGHT * WALL_HEIGHT).sqrt();
    let mut objects: Vec<ObjectInstance> = placed
        .iter()
        .enumerate()
        .map(|(i, p)| build_instance(&mut rng, spec, i as u32, p, room_scale))
        .collect();

    let frames = build_frames(&mut rng, spec);
    geometric_relations(spec, &placed, &objects, &mut relations);

    let mut seen = BTreeSet::new();
    let mut labels: Vec<RelationLabel> = relations
        .into_iter()
        .filter(|(s, p, o)| seen.insert((*s, *p, *o)))
        .map(|(s, phrase, o)| RelationLabel {
            subject_id: s as u32,
            object_id: o as u32,
            phrase: phrase.to_string(),
            status: LabelStatus::AnnotatedPositive,
            truth: Some(true),
        })
        .collect();
    labels.sort_by(|a, b| (a.subject_id, a.object_id, &a.phrase).cmp(&(b.subject_id, b.object_id, &b.phrase)));
    let n_drop = (spec.drop_rate * labels.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(n_drop) {
        labels[i].status = LabelStatus::Unlabeled;
    }

    let scene = Scene::new(
        format!("scene-{seed:08x}"),
        seed,
        room_scale,
        frames,
        objects.clone(),
        labels,
    );
    for (k, obj) in objects.iter_mut().enumerate() {
        obj.visible_frames = (0..scene.frames.len())
            .filter(|f| mask_and_visibility(&scene, k as u32, *f).1 > 0.0)
            .collect();
    }
    Ok(Scene::new(
        scene.name.clone(),
        seed,
        room_scale,
        scene.frames.clone(),
        objects,
        scene.labels.clone(),
    ))
}

fn place_furniture(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    c: &'static Category,
    placed: &[Placed],
) -> Result<Obb, GenerateError> {
    let half = Vec3::new(c.size[0] / 2.0, c.size[1] / 2.0, c.size[2] / 2.0);
    let (room_w, room_d) = spec.room_size;
    let targets: Vec<&Placed> = placed
        .iter()
        .filter(|p| matches!(p.cat.name, "table" | "desk" | "sofa"))
        .collect();
    for _ in 0..PLACEMENT_RETRIES {
        let obb = if c.name == "chair" && spec.mix.facing > 0.0 && !targets.is_empty() {
            let t = targets.choose(rng).unwrap();
            let phi = rng.random::<f64>() * 2.0 * PI;
            let dist = footprint_radius(&t.obb.half_extents) + footprint_radius(&half) + rng.random_range(0.05..0.6);
            let center = Vec3::new(
                t.obb.center.x + dist * phi.cos(),
                t.obb.center.y + dist * phi.sin(),
                half.z,
            );
            let to_target = t.obb.center - center;
            let yaw = to_target.y.atan2(to_target.x) - PI / 2.0;
            Obb::with_yaw(center, half, yaw)
        } else {
            let r = footprint_radius(&half);
            let x = rng.random_range((-room_w / 2.0 + r)..(room_w / 2.0 - r).max(-room_w / 2.0 + r + 1e-6));
            let y = rng.random_range((-room_d / 2.0 + r)..(room_d / 2.0 - r).max(-room_d / 2.0 + r + 1e-6));
            Obb::with_yaw(Vec3::new(x, y, half.z), half, rng.random::<f64>() * 2.0 * PI)
        };
        let r = footprint_radius(&half);
        let inside_room = obb.center.x.abs() + r <= room_w / 2.0 && obb.center.y.abs() + r <= room_d / 2.0;
        let mut clearance = obb;
        clearance.half_extents += Vec3::new(0.1, 0.1, 0.0);
        if inside_room && !placed.iter().any(|p| obb_overlap(&clearance, &p.obb, 1e-6)) {
            return Ok(obb);
        }
    }
    Err(GenerateError::PlacementFailed {
        category: c.name.to_string(),
        attempts: PLACEMENT_RETRIES,
    })
}

fn config_options(spec: &SceneSpec, c: &Category, placed: &[Placed], wall: Option<usize>) -> Vec<(Config, f64)> {
    let m = &spec.mix;
    let half = Vec3::new(c.size[0] / 2.0, c.size[1] / 2.0, c.size[2] / 2.0);
    let mut out = Vec::new();
    if c.mount_only {
        if wall.is_some() {
            out.push((Config::Mounted, m.mounted.max(1e-9)));
        }
        return out;
    }
    if placed.iter().any(|p| p.cat.support_top) {
        out.push((Config::Stacked, m.stacked));
    }
    let fits = |p: &Placed| {
        p.cat.container
            && (0..3).all(|k| half[k] + 0.05 < p.obb.half_extents[k])
            && footprint_radius(&half) + 0.05 < p.obb.half_extents.x.min(p.obb.half_extents.y)
    };
    if placed.iter().any(fits) {
        out.push((Config::Contained, m.contained));
    }
    if placed.iter().any(|p| p.cat.role == Role::Furniture) {
        out.push((Config::Adjacent, m.adjacent));
    }
    out
}

fn place_small(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    c: &'static Category,
    config: Config,
    placed: &[Placed],
    wall: Option<usize>,
) -> Option<(Obb, usize)> {
    let half = Vec3::new(c.size[0] / 2.0, c.size[1] / 2.0, c.size[2] / 2.0);
    let r = footprint_radius(&half);
    let hosts: Vec<usize> = placed
        .iter()
        .enumerate()
        .filter(|(i, p)| match config {
            Config::Stacked => p.cat.support_top,
            Config::Contained => {
                p.cat.container
                    && (0..3).all(|k| half[k] + 0.05 < p.obb.half_extents[k])
                    && r + 0.05 < p.obb.half_extents.x.min(p.obb.half_extents.y)
            }
            Config::Adjacent => p.cat.role == Role::Furniture,
            Config::Mounted => Some(*i) == wall,
        })
        .map(|(i, _)| i)
        .collect();
    let host = *hosts.choose(rng)?;
    let h = &placed[host].obb;
    let (room_w, room_d) = spec.room_size;
    let obb = match config {
        Config::Stacked => {
            let (ax, ay) = (h.half_extents.x - r, h.half_extents.y - r);
            if ax <= 0.0 || ay <= 0.0 {
                return None;
            }
            let local = Vec3::new(rng.random_range(-ax..ax), rng.random_range(-ay..ay), h.half_extents.z);
            let mut c = h.to_world(&local);
            c.z = h.top_z() + half.z;
            Obb::with_yaw(c, half, rng.random::<f64>() * 2.0 * PI)
        }
        Config::Contained => {
            let (ax, ay) = (h.half_extents.x - r - 0.03, h.half_extents.y - r - 0.03);
            let az = h.half_extents.z - half.z - 0.03;
            if ax <= 0.0 || ay <= 0.0 || az <= 0.0 {
                return None;
            }
            let local = Vec3::new(
                rng.random_range(-ax..ax),
                rng.random_range(-ay..ay),
                rng.random_range(-az..az),
            );
            Obb::with_yaw(h.to_world(&local), half, rng.random::<f64>() * 2.0 * PI)
        }
        Config::Adjacent => {
            let phi = rng.random::<f64>() * 2.0 * PI;
            let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
            // Walk outward until the footprint clears the host, then add a gap.
            let gap = rng.random_range(0.03..(0.7 * spec.proximity_radius).max(0.031));
            let mut dist = r;
            let mut candidate;
            loop {
                candidate = Obb::with_yaw(
                    Vec3::new(h.center.x, h.center.y, half.z) + dir * dist,
                    half,
                    rng.random::<f64>() * 2.0 * PI,
                );
                if !obb_overlap(&candidate, h, 1e-6) || dist > 5.0 {
                    break;
                }
                dist += 0.02;
            }
            candidate.center += dir * gap;
            candidate
        }
        Config::Mounted => {
            let x_room = h.half_extents.x - half.x - 0.1;
            let x = rng.random_range(-x_room..x_room);
            let z = rng.random_range(1.1..1.9);
            let inner = h.center.y - h.half_extents.y;
            Obb::with_yaw(Vec3::new(x, inner - half.y, z), half, PI)
        }
    };
    let rr = footprint_radius(&obb.half_extents);
    if obb.center.x.abs() + rr > room_w / 2.0 + 1e-9
        || obb.center.y.abs() + rr > room_d / 2.0 + 1e-9 && config != Config::Mounted
    {
        return None;
    }
    if config == Config::Contained && !obb.corners().iter().all(|p| h.contains(p, 1e-9)) {
        return None;
    }
    let collides = placed.iter().enumerate().any(|(i, p)| {
        if i == host && config == Config::Contained {
            return false;
        }
        obb_overlap(&obb, &p.obb, 1e-6)
    });
    (!collides).then_some((obb, host))
}

fn build_instance(rng: &mut ChaCha8Rng, spec: &SceneSpec, id: u32, p: &Placed, room_scale: f64) -> ObjectInstance {
    let mut mask_points = p.obb.sample_surface(rng, spec.surface_points);
    mask_points.extend(p.obb.sample_interior(rng, spec.interior_points));
    let symmetric = !p.cat.faces && p.cat.role != Role::Wall;
    let front_axis = if symmetric {
        let phi = rng.random::<f64>() * 2.0 * PI;
        Vec3::new(phi.cos(), phi.sin(), 0.0)
    } else {
        front_of(&p.obb)
    };
    let open_face = p.cat.container.then_some(3);
    let feature = object_feature(
        p.cat.name,
        &p.obb,
        &front_axis,
        symmetric,
        open_face.is_some(),
        room_scale,
    );
    ObjectInstance {
        id,
        category: p.cat.name.to_string(),
        obb: p.obb,
        mask_points,
        feature,
        front_axis,
        symmetric,
        open_face,
        visible_frames: BTreeSet::new(),
    }
}

/// 16 hashed category dimensions followed by 16 box statistics.
pub fn object_feature(
    category: &str,
    obb: &Obb,
    front_axis: &Vec3,
    symmetric: bool,
    container: bool,
    room_scale: f64,
) -> Vec<f64> {
    let padded = format!("#{category}#");
    let chars: Vec<char> = padded.chars().collect();
    let grams: Vec<String> = chars.windows(3).map(|w| w.iter().collect()).collect();
    let mut f = hashed_vector(0x000b_1ec7, 16, grams.iter().map(String::as_str));
    let h = obb.half_extents;
    let vol = obb.volume();
    let bool01 = |b: bool| if b { 1.0 } else { 0.0 };
    f.extend([
        h.x,
        h.y,
        h.z,
        vol.cbrt(),
        obb.center.z,
        obb.bottom_z(),
        obb.top_z(),
        front_axis.x,
        front_axis.y,
        front_axis.z,
        bool01(symmetric),
        4.0 * h.x * h.y,
        h.z / h.x.max(h.y),
        bool01(container),
        (vol.max(1e-9)).ln() / 10.0,
        obb.center.xy().norm() / room_scale,
    ]);
    f
}

fn build_frames(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<Frame> {
    let (room_w, room_d) = spec.room_size;
    let radius = room_w.max(room_d) / 2.0 + 1.2;
    let intr = Intrinsics::from_fov(spec.width, spec.height, 70f64.to_radians());
    let target = Vec3::new(0.0, 0.3, 0.6);
    // Cameras sweep the half of the room opposite the wall.
    let (start, end) = (-PI + 0.25, -0.25);
    (0..spec.frames)
        .map(|k| {
            let base = if spec.frames == 1 {
                (start + end) / 2.0
            } else {
                start + (end - start) * k as f64 / (spec.frames - 1) as f64
            };
            let phi = base + rng.random_range(-0.05..0.05);
            let eye = Vec3::new(radius * phi.cos(), radius * phi.sin(), rng.random_range(1.5..1.9));
            Frame {
                index: k,
                pose: CameraPose::look_at(eye, target, intr),
            }
        })
        .collect()
}

/// Box-to-box gap estimated from each object's surface samples.
fn sampled_gap(a: &ObjectInstance, b: &ObjectInstance) -> f64 {
    let ab = a
        .mask_points
        .iter()
        .map(|p| b.obb.distance(p))
        .fold(f64::INFINITY, f64::min);
    let ba = b
        .mask_points
        .iter()
        .map(|p| a.obb.distance(p))
        .fold(f64::INFINITY, f64::min);
    ab.min(ba)
}

/// Relations that follow from the final layout: vertical order, proximity,
/// contact and facing.
fn geometric_relations(
    spec: &SceneSpec,
    placed: &[Placed],
    objects: &[ObjectInstance],
    relations: &mut Vec<(usize, &'static str, usize)>,
) {
    let n = placed.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if i < j {
                let gap = sampled_gap(&objects[i], &objects[j]);
                if gap < spec.proximity_radius {
                    relations.push((i, "near", j));
                    relations.push((j, "near", i));
                }
                if gap < CONTACT_GAP {
                    relations.push((i, "touching", j));
                    relations.push((j, "touching", i));
                }
            }
            let (a, b) = (&placed[i].obb, &placed[j].obb);
            let walls = placed[i].cat.role == Role::Wall || placed[j].cat.role == Role::Wall;
            let local = b.to_local(&a.center);
            let over = local.x.abs() <= b.half_extents.x && local.y.abs() <= b.half_extents.y;
            if !walls && over && a.bottom_z() >= b.top_z() - 0.01 {
                relations.push((i, "above", j));
            }
            // Anything with a front axis, walls included, can face.
            let mut to = b.center - a.center;
            to.z = 0.0;
            if !objects[i].symmetric {
                let mut front = objects[i].front_axis;
                front.z = 0.0;
                if angle_between(&front, &to) < FACING_CONE {
                    relations.push((i, "facing", j));
                }
            }
            if !objects[j].symmetric {
                let mut front = objects[j].front_axis;
                front.z = 0.0;
                let angle = angle_between(&front, &(-to));
                if angle < FACING_CONE {
                    relations.push((i, "in front of", j));
                } else if PI - angle < FACING_CONE {
                    relations.push((i, "behind", j));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_specs() {
        let mut s = SceneSpec {
            drop_rate: 1.0,
            ..Default::default()
        };
        assert!(matches!(generate_scene(&s, 1), Err(GenerateError::InvalidSpec(_))));
        s.drop_rate = 0.2;
        s.furniture = (3, 2);
        assert!(matches!(generate_scene(&s, 1), Err(GenerateError::InvalidSpec(_))));
        s.furniture = (1, 1);
        s.small_kinds = vec!["table".into()];
        assert!(matches!(generate_scene(&s, 1), Err(GenerateError::InvalidSpec(_))));
    }

    #[test]
    fn overcrowded_room_is_rejected() {
        let s = SceneSpec {
            furniture: (40, 40),
            furniture_kinds: vec!["sofa".into()],
            room_size: (3.0, 3.0),
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&s, 5),
            Err(GenerateError::PlacementFailed { .. })
        ));
    }

    #[test]
    fn default_scene_is_valid() {
        for seed in 0..5 {
            let s = generate_scene(&SceneSpec::default(), seed).unwrap();
            s.validate().unwrap();
            assert!(!s.labels.is_empty());
        }
    }
}
