use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::DEFAULT_LEAKY_SLOPE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Global attention over all tokens, untransformed.
    FullAttention,
    /// Rotated varied-size window attention.
    Rvsa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvsaConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub window_size: usize,
    /// 1-indexed layers that keep full attention.
    pub full_attention_layers: BTreeSet<usize>,
    /// 1-indexed layers whose outputs form the feature pyramid.
    pub pyramid_layers: BTreeSet<usize>,
    /// Input image side in pixels.
    pub image_size: usize,
    /// Patch-embedding stride; the token map side is `image_size / patch_size`.
    pub patch_size: usize,
    pub in_channels: usize,
    pub mlp_ratio: usize,
    pub leaky_slope: f64,
}

pub const PRESET_NAMES: [&str; 3] = ["vitb-rvsa", "vitl-rvsa", "toy"];

impl RvsaConfig {
    fn build(depth: usize, embed_dim: usize, heads: usize, full: &[usize], pyramid: &[usize]) -> Self {
        Self {
            depth,
            embed_dim,
            heads,
            window_size: 7,
            full_attention_layers: full.iter().copied().collect(),
            pyramid_layers: pyramid.iter().copied().collect(),
            image_size: 224,
            patch_size: 16,
            in_channels: 3,
            mlp_ratio: 4,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// ViT-B backbone with RVSA.
    pub fn vitb_rvsa() -> Self {
        Self::build(12, 768, 12, &[3, 6, 9, 12], &[4, 6, 8, 12])
    }

    /// ViT-L backbone with RVSA.
    pub fn vitl_rvsa() -> Self {
        Self::build(24, 1024, 16, &[6, 12, 18, 24], &[8, 12, 16, 24])
    }

    /// Desk-scale model used by the tests and the toy pretraining run:
    /// 32×32 images, 4×4 patches, 8×8 tokens, 2×2 windows of side 4.
    pub fn toy() -> Self {
        Self {
            depth: 4,
            embed_dim: 32,
            heads: 2,
            window_size: 4,
            full_attention_layers: [4].into_iter().collect(),
            pyramid_layers: [2, 4].into_iter().collect(),
            image_size: 32,
            patch_size: 4,
            in_channels: 3,
            mlp_ratio: 4,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vitb-rvsa" => Ok(Self::vitb_rvsa()),
            "vitl-rvsa" => Ok(Self::vitl_rvsa()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!(
                "unknown model preset `{other}` (expected one of {PRESET_NAMES:?})"
            ))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn feature_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.feature_side() * self.feature_side()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.embed_dim == 0 || self.heads == 0 || self.window_size == 0 {
            return fail("depth, embed_dim, heads and window_size must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        let in_range = |s: &BTreeSet<usize>| s.iter().all(|&l| (1..=self.depth).contains(&l));
        if !in_range(&self.full_attention_layers) {
            return fail(format!(
                "full_attention_layers {:?} outside 1..={}",
                self.full_attention_layers, self.depth
            ));
        }
        if self.pyramid_layers.is_empty() || !in_range(&self.pyramid_layers) {
            return fail(format!(
                "pyramid_layers {:?} empty or outside 1..={}",
                self.pyramid_layers, self.depth
            ));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if !self.feature_side().is_multiple_of(self.window_size) {
            return fail(format!(
                "token map side {} not divisible by window_size {}",
                self.feature_side(),
                self.window_size
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky_slope {} outside (0, 1)", self.leaky_slope));
        }
        if self.in_channels == 0 || self.mlp_ratio == 0 {
            return fail("in_channels and mlp_ratio must be positive".into());
        }
        Ok(())
    }

    /// Attention kind of 1-indexed layer `layer`.
    pub fn layer_kind(&self, layer: usize) -> LayerKind {
        if self.full_attention_layers.contains(&layer) {
            LayerKind::FullAttention
        } else {
            LayerKind::Rvsa
        }
    }

    pub fn rvsa_layers(&self) -> Vec<usize> {
        (1..=self.depth)
            .filter(|&l| self.layer_kind(l) == LayerKind::Rvsa)
            .collect()
    }
}
