//! Deterministic synthetic joints: images, bone masks, distractor candidates
//! and severity labels.

mod dataset;
mod generator;
mod pgm;

pub use dataset::{
    generate_dataset, load_manifest, ManifestRow, Split, MANIFEST, TEMPLATE_L, TEMPLATE_U,
};
pub use generator::{
    gap_interval, generate_sample, grade_from_gap, template_masks, GeneratorConfig, SynthSample,
    GAP_RANGE, GAP_SEPARATION, SIDE,
};
pub use pgm::{GrayImage, MASK_THRESHOLD};
