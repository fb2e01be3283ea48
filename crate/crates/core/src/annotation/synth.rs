//! Synthetic rotated-box datasets whose pixels carry class evidence.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::geometry::{RotatedBox, IGNORE};
use super::sample::{build_sample, MultiTaskSample};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub classes: u32,
    pub min_boxes: usize,
    pub max_boxes: usize,
    #[serde(default = "default_min_side")]
    pub min_side: f64,
    #[serde(default = "default_max_side")]
    pub max_side: f64,
    #[serde(default)]
    pub dataset_id: u32,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_channels() -> usize {
    3
}
fn default_min_side() -> f64 {
    3.0
}
fn default_max_side() -> f64 {
    10.0
}
fn default_noise() -> f64 {
    0.1
}

impl SynthSpec {
    pub fn new(samples: usize, side: usize, classes: u32, boxes: (usize, usize), dataset_id: u32) -> Self {
        Self {
            samples,
            height: side,
            width: side,
            channels: default_channels(),
            classes,
            min_boxes: boxes.0,
            max_boxes: boxes.1,
            min_side: default_min_side(),
            max_side: default_max_side(),
            dataset_id,
            noise: default_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.samples == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return fail("samples, height, width and channels must be positive".into());
        }
        if self.classes == 0 || self.classes >= IGNORE as u32 {
            return fail(format!("classes must be in 1..{IGNORE}, got {}", self.classes));
        }
        if self.min_boxes > self.max_boxes {
            return fail(format!("min_boxes {} > max_boxes {}", self.min_boxes, self.max_boxes));
        }
        if !(self.min_side >= 1.0 && self.min_side <= self.max_side && self.max_side.is_finite()) {
            return fail(format!("side range [{}, {}] invalid", self.min_side, self.max_side));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise {} invalid", self.noise));
        }
        Ok(())
    }
}

/// Brightness added to channel `ch` of pixels labeled `class` in dataset
/// `dataset_id`.
pub fn class_brightness(dataset_id: u32, class: u32, ch: usize) -> f64 {
    let g = (dataset_id as usize) * 31 + class as usize;
    0.4 + 0.3 * ((g * 7 + ch * 3) % 5) as f64
}

/// Sample `index` of the dataset; depends only on `(spec, seed, index)`.
pub fn synth_sample(spec: &SynthSpec, seed: u64, index: usize) -> Result<MultiTaskSample> {
    spec.validate()?;
    if spec.max_boxes == 0 {
        return Err(Error::DegenerateSample(format!(
            "sample {index}: box range 0-0 yields no boxes"
        )));
    }
    let mut rng = Rng::derive(seed, index as u64);
    let count = rng.int_inclusive(spec.min_boxes.max(1), spec.max_boxes);
    let mut boxes = Vec::with_capacity(count);
    for _ in 0..count {
        let w = rng.uniform(spec.min_side, spec.max_side);
        let h = rng.uniform(spec.min_side, spec.max_side);
        let cx = rng.uniform(0.0, (spec.width - 1) as f64);
        let cy = rng.uniform(0.0, (spec.height - 1) as f64);
        let theta = rng.uniform(-PI / 2.0, PI / 2.0);
        let class = rng.int_inclusive(0, spec.classes as usize - 1) as u32;
        boxes.push(RotatedBox::new(cx, cy, w, h, theta, class)?);
    }
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let noise = Tensor::randn(&[c, h, w], spec.noise, &mut rng);
    let built = build_sample(&boxes, noise, spec.dataset_id)
        .map_err(|e| Error::DegenerateSample(format!("sample {index}: {e}")))?;
    let mut sample = built.sample;
    let plane = h * w;
    let semantic = sample.semantic.data.clone();
    let img = sample.image.data_mut();
    for ch in 0..c {
        for (p, &cls) in semantic.iter().enumerate() {
            if cls != IGNORE {
                img[ch * plane + p] += class_brightness(spec.dataset_id, cls as u32, ch);
            }
        }
    }
    Ok(sample)
}

pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<MultiTaskSample>> {
    (0..spec.samples).map(|i| synth_sample(spec, seed, i)).collect()
}
