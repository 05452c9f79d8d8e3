//! Deterministic synthetic deformable-body data: surface deformation,
//! internal-camera rendering and paired dataset generation.

mod dataset;
mod render;
mod scene;

pub use dataset::{
    dataset_checksum, generate, sample_dataset, Dataset, DatasetSample, GenConfig, Split, DATASET_INFO, MANIFEST,
    PARAMS,
};
pub use render::{camera_coords, ground_truth, project, render_internal, view_prototype, DotPattern};
pub use scene::{
    deform, random_unit, Body, Bump, DeformationParams, SceneConfig, AMPLITUDE_RANGE, MAX_BUMPS, SCALE_RANGE,
    SIGMA_RANGE,
};
