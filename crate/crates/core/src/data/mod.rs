//! Synthetic clips, hole masks and the on-disk dataset layout.
//!
//! ```text
//! root/<clip_id>/frame_00000.ppm  frame_00001.ppm  ...
//! root/<clip_id>/mask_00000.pgm   mask_00001.pgm   ...
//! ```

mod layout;
pub mod netpbm;
mod synthetic;

pub use layout::{read_clip_dir, write_clip_dir, write_frames, ClipSample, Dataset};
pub use synthetic::{
    generate_clip, generate_mask, generate_sample, propagation_feasible, scene, Background, GeneratedClip, MaskKind,
    MaskSpec, Scene, SceneObject, ShapeKind, SyntheticSpec,
};
