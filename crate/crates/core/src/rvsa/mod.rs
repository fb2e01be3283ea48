//! Rotated varied-size window attention and the plain ViT backbone built
//! on it.

mod backbone;
mod config;
mod layer;
mod sample;
mod window;

pub use backbone::{
    backbone_forward, backbone_tokens, encode_image, init_backbone, layer_prefix, layer_spec, patch_embed,
};
pub use config::{LayerKind, RvsaConfig, PRESET_NAMES};
pub use layer::{
    attention_tokens, block_tokens, full_attention_layer, init_layer, rvsa_layer, window_layer, AttentionKind, LayerOp,
    LayerSpec, INIT_STD,
};
pub use sample::{bilinear, sample_window, WindowSampler};
pub use window::{
    merge_windows, partition_windows, predict_window_params, sample_points, transform_window, AffineWindowMap,
    TransformedWindow, WindowCorners, WindowGrid, WindowParams, PARAMS_PER_HEAD,
};
