//! Scene data model, procedural generator, box rendering and scene files.

mod generate;
mod io;
mod model;
mod render;

pub use generate::{
    generate_scene, is_container_category, object_feature, FamilyMix, GenerateError, SceneSpec, FEATURE_DIM,
    PLACEMENT_RETRIES,
};
pub use io::{load_scene, save_scene, scene_from_jsonl, scene_to_jsonl, SceneIoError, SCHEMA_VERSION};
pub use model::{
    CameraPose, DepthMap, Frame, IdMap, Intrinsics, LabelStatus, Mask2D, ObjectInstance, Projection, RelationLabel,
    Rendering, Scene, NEAR_PLANE,
};
pub use render::{
    is_occluded, mask_and_visibility, project_mask, project_points, render_depth, visibility, visible_hit,
    OCCLUSION_TOLERANCE,
};
