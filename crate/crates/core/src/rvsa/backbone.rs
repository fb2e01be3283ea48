//! Plain ViT backbone whose non-global layers use RVSA.
//!
//! Parameters outside the blocks: `patch_embed.weight[in·P·P × C]`,
//! `patch_embed.bias[C]`, `pos_embed[N × C]`. Block `l` (1-indexed) lives
//! under the prefix `layerNN`.

use super::config::{LayerKind, RvsaConfig};
use super::layer::{block_tokens, init_layer, AttentionKind, LayerSpec, INIT_STD};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::Gather;
use crate::params::{ParamStore, VarMap};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn layer_prefix(layer: usize) -> String {
    format!("layer{layer:02}")
}

pub fn layer_spec(cfg: &RvsaConfig, layer: usize) -> LayerSpec {
    let side = cfg.feature_side();
    LayerSpec {
        dim: cfg.embed_dim,
        heads: cfg.heads,
        window_size: cfg.window_size,
        height: side,
        width: side,
        mlp_hidden: cfg.mlp_ratio * cfg.embed_dim,
        slope: cfg.leaky_slope,
        kind: match cfg.layer_kind(layer) {
            LayerKind::FullAttention => AttentionKind::Full,
            LayerKind::Rvsa => AttentionKind::Rvsa,
        },
    }
}

pub fn init_backbone(cfg: &RvsaConfig, rng: &mut Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let c = cfg.embed_dim;
    let patch = cfg.in_channels * cfg.patch_size * cfg.patch_size;
    let mut p = ParamStore::new();
    p.insert("patch_embed.weight", Tensor::randn(&[patch, c], INIT_STD, rng));
    p.insert("patch_embed.bias", Tensor::zeros(&[c]));
    p.insert("pos_embed", Tensor::randn(&[cfg.tokens(), c], INIT_STD, rng));
    for l in 1..=cfg.depth {
        p.extend(init_layer(&layer_prefix(l), &layer_spec(cfg, l), rng));
    }
    Ok(p)
}

/// Patch embedding of an image `[in × S × S]` into tokens `[N × C]`,
/// positional embedding included.
pub fn patch_embed(g: &mut Graph, image: Var, vars: &VarMap, cfg: &RvsaConfig) -> Result<Var> {
    let (ch, h, w) = g.value(image).dims3("patch_embed")?;
    if ch != cfg.in_channels || h != cfg.image_size || w != cfg.image_size {
        return Err(Error::shape(
            "patch_embed",
            g.value(image).shape(),
            &[cfg.in_channels, cfg.image_size, cfg.image_size],
        ));
    }
    let (ps, side) = (cfg.patch_size, cfg.feature_side());
    let mut index = Vec::with_capacity(ch * h * w);
    for py in 0..side {
        for px in 0..side {
            for c in 0..ch {
                for i in 0..ps {
                    for j in 0..ps {
                        index.push(c * h * w + (py * ps + i) * w + px * ps + j);
                    }
                }
            }
        }
    }
    let patches = g.gather(image, Gather::new(vec![side * side, ch * ps * ps], index)?)?;
    let tokens = g.linear(patches, vars.get("patch_embed.weight")?, vars.get("patch_embed.bias")?)?;
    g.add(tokens, vars.get("pos_embed")?)
}

/// Runs every block on tokens `[N × C]` and returns the pyramid-layer
/// outputs in ascending layer order, still token-major.
pub fn backbone_tokens(g: &mut Graph, tokens: Var, vars: &VarMap, cfg: &RvsaConfig) -> Result<Vec<Var>> {
    cfg.validate()?;
    let mut x = tokens;
    let mut pyramid = Vec::with_capacity(cfg.pyramid_layers.len());
    for l in 1..=cfg.depth {
        x = block_tokens(g, x, vars, &layer_prefix(l), &layer_spec(cfg, l))?;
        if cfg.pyramid_layers.contains(&l) {
            pyramid.push(x);
        }
    }
    Ok(pyramid)
}

/// Backbone on an embedded feature map `[C × H × W]` (`H = W =` token map
/// side). Returns one `C×H×W` map per pyramid layer, ascending.
pub fn backbone_forward(features: &Tensor, cfg: &RvsaConfig, params: &ParamStore) -> Result<Vec<Tensor>> {
    let side = cfg.feature_side();
    let (c, h, w) = features.dims3("backbone")?;
    if c != cfg.embed_dim || h != side || w != side {
        return Err(Error::shape("backbone", features.shape(), &[cfg.embed_dim, side, side]));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(features.clone());
    let tokens = g.gather(x, Gather::chw_to_tokens(c, h, w))?;
    let outs = backbone_tokens(&mut g, tokens, &vars, cfg)?;
    outs.into_iter()
        .map(|v| {
            let chw = g.gather(v, Gather::tokens_to_chw(c, h, w))?;
            Ok(g.value(chw).clone())
        })
        .collect()
}

/// Backbone on raw images: patch embedding followed by the blocks.
pub fn encode_image(image: &Tensor, cfg: &RvsaConfig, params: &ParamStore) -> Result<Vec<Tensor>> {
    let (c, side) = (cfg.embed_dim, cfg.feature_side());
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(image.clone());
    let tokens = patch_embed(&mut g, x, &vars, cfg)?;
    let outs = backbone_tokens(&mut g, tokens, &vars, cfg)?;
    outs.into_iter()
        .map(|v| {
            let chw = g.gather(v, Gather::tokens_to_chw(c, side, side))?;
            Ok(g.value(chw).clone())
        })
        .collect()
}
