//! Rotated boxes to aligned multi-task labels: box rasterization stands in
//! for a promptable segmenter, followed by horizontal-box extraction and
//! semantic-map composition.

mod geometry;
mod mtsd;
mod sample;
mod synth;

pub use geometry::{
    compose_semantic, min_hbox, normalize_angle, rasterize_rbox, HBox, Mask, RotatedBox, SemanticMap, CONTAINMENT_EPS,
    IGNORE,
};
pub use mtsd::{Dataset, MTSD1_MAGIC};
pub use sample::{build_sample, BuiltSample, InstanceAnnotation, MultiTaskSample};
pub use synth::{class_brightness, synth_dataset, synth_sample, SynthSpec};
