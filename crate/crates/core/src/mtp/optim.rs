//! AdamW with layer-wise learning-rate decay and a warmup + cosine
//! schedule.

use serde::{Deserialize, Serialize};

use super::heads::is_head_key;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub layer_decay: f64,
    pub warmup_iters: usize,
    pub warmup_init_lr: f64,
    pub total_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 6e-5,
            weight_decay: 0.05,
            layer_decay: 0.9,
            warmup_iters: 100,
            warmup_init_lr: 1e-6,
            total_iters: 80_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Schedule(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) || !(self.warmup_init_lr >= 0.0) {
            return fail(format!(
                "learning rates {} / {} invalid",
                self.base_lr, self.warmup_init_lr
            ));
        }
        if !(self.weight_decay >= 0.0) || !(self.layer_decay > 0.0 && self.layer_decay <= 1.0) {
            return fail(format!(
                "weight_decay {} or layer_decay {} invalid",
                self.weight_decay, self.layer_decay
            ));
        }
        if self.total_iters > 0 && self.warmup_iters >= self.total_iters {
            return fail(format!(
                "warmup_iters {} must be below total_iters {}",
                self.warmup_iters, self.total_iters
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }
}

/// Linear warmup from `warmup_init_lr` to `base_lr`, then cosine decay to
/// 0 at `total_iters`.
pub fn lr_at(iter: usize, cfg: &OptimConfig) -> Result<f64> {
    if iter > cfg.total_iters {
        return Err(Error::Schedule(format!(
            "iteration {iter} beyond total {}",
            cfg.total_iters
        )));
    }
    if iter < cfg.warmup_iters {
        let frac = iter as f64 / cfg.warmup_iters as f64;
        return Ok(cfg.warmup_init_lr + (cfg.base_lr - cfg.warmup_init_lr) * frac);
    }
    let span = (cfg.total_iters - cfg.warmup_iters) as f64;
    let progress = (iter - cfg.warmup_iters) as f64 / span;
    Ok(cfg.base_lr * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

/// `rate^(depth + 1 − layer_index)` for `1 ≤ layer_index ≤ depth + 1`,
/// where the heads sit at `depth + 1`.
pub fn layer_lr_scale(layer_index: usize, depth: usize, rate: f64) -> Result<f64> {
    if layer_index == 0 || layer_index > depth + 1 {
        return Err(Error::Schedule(format!(
            "layer index {layer_index} outside 1..={}",
            depth + 1
        )));
    }
    // Repeated products drift from the rounded power by a few ulps.
    Ok(rate.powf((depth + 1 - layer_index) as f64))
}

/// Layer index of a parameter: embeddings share index 1 with the first
/// block, `layerNN.*` is `NN`, heads are `depth + 1`.
pub fn layer_index(name: &str, depth: usize) -> Result<usize> {
    if is_head_key(name) {
        return Ok(depth + 1);
    }
    if name.starts_with("patch_embed.") || name == "pos_embed" {
        return Ok(1);
    }
    name.strip_prefix("layer")
        .and_then(|rest| rest.split('.').next())
        .and_then(|n| n.parse().ok())
        .filter(|&n| (1..=depth).contains(&n))
        .ok_or_else(|| Error::Config(format!("cannot place parameter `{name}` in a layer")))
}

/// Biases and normalization gains are exempt from weight decay.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gain"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub cfg: OptimConfig,
    pub depth: usize,
    pub first: ParamStore,
    pub second: ParamStore,
    pub step: usize,
}

impl OptimState {
    pub fn new(cfg: OptimConfig, depth: usize, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let zeros = |p: &ParamStore| {
            let mut z = ParamStore::new();
            for (k, t) in p.iter() {
                z.insert(k, Tensor::zeros(t.shape()));
            }
            z
        };
        Ok(Self {
            first: zeros(params),
            second: zeros(params),
            cfg,
            depth,
            step: 0,
        })
    }
}

/// One AdamW update at iteration `state.step`:
/// `p ← p − η·λ·p − η·m̂/(√v̂ + ε)` with `η = lr_at(step)·layer_lr_scale`.
pub fn optimizer_step(params: &mut ParamStore, grads: &ParamStore, state: &mut OptimState) -> Result<()> {
    let iter = state.step;
    let lr = lr_at(iter, &state.cfg)?;
    let t = (iter + 1) as i32;
    let (b1, b2) = (state.cfg.beta1, state.cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::Training {
                iter,
                msg: format!("non-finite gradient for `{name}`"),
            });
        }
    }
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() {
            return Err(Error::shape("optimizer_step", p.shape(), g.shape()));
        }
        let eta = lr * layer_lr_scale(layer_index(name, state.depth)?, state.depth, state.cfg.layer_decay)?;
        let wd = if decays(name) { state.cfg.weight_decay } else { 0.0 };
        let m = state
            .first
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no optimizer state for `{name}`")))?;
        let v = state
            .second
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no optimizer state for `{name}`")))?;
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi = *pi - eta * wd * *pi - eta * m_hat / (v_hat.sqrt() + state.cfg.eps);
        }
    }
    state.step += 1;
    Ok(())
}
