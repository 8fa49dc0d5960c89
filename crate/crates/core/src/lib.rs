//! Witness-grounded verification of open-vocabulary 3D relation candidates
//! learned from incomplete labels.

pub mod auditkit;
pub mod decode;
pub mod geom;
mod hashing;
pub mod oracle;
pub mod pairprop;
pub mod phrasebank;
pub mod pipeline;
pub mod probes;
pub mod pulearn;
pub mod scenekit;
pub mod verifier;
pub mod viewwit;

pub use geom::{Obb, Vec3};
pub use hashing::{config_hash, sha256_hex};
pub use scenekit::{Scene, SceneSpec};
