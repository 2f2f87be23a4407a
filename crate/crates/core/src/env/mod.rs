//! Tabletop pick-and-place environment: scene sampling, dynamics, and the
//! grid renderer, plus the train/eval split tables that scenarios draw from.

pub mod config;
pub mod render;
pub mod scenario;
pub mod sim;
pub mod splits;

pub use config::EnvConfig;
pub use render::{
    category_embedding, render, render_background, segmentation_mask, Observation, CHANNELS,
    CH_CATEGORY0, CH_GRIPPER, CH_OCCUPANCY, CH_RECEPTACLE, CH_TEXTURE0, N_CATEGORY_CH, N_PROPRIO,
    N_TEXTURE_CH,
};
pub use scenario::{ScenarioKind, ScenarioSpec};
pub use sim::{
    reset, step, ActionCmd, Entity, EnvError, Gripper, SceneState, StepInfo, ORIENTATIONS,
    TARGET_ID,
};
pub use splits::{
    build_splits, LightingConfig, PoseRegion, SplitTables, N_CATEGORIES, N_CATEGORIES_TRAIN,
    N_LIGHTING_EVAL, N_TEXTURES, N_TEXTURES_TRAIN,
};
