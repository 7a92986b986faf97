//! Scene ingestion, instance decomposition, camera placement, and view prompts.

mod cameras;
mod manifest;
mod prompt;
pub mod toy;

pub use cameras::{place_cameras, CameraPolicy, DistanceRule, Phase, PlacedView, ViewSet};
pub use manifest::{InstanceRecord, Role, Scene, SceneInstance, SceneManifest, UvLayout};
pub use prompt::{
    build_view_prompt, derive_style, dir_label, furniture_prompt, instance_pixel_fractions, relative_azimuth,
    room_frame_prompt, stage1_prompt, PromptContext, PROMPT_THRESHOLD,
};
