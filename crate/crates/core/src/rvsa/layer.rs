//! Pre-norm transformer block with full, plain-window or rotated
//! varied-size window attention.
//!
//! Parameter names below a layer prefix such as `layer03`:
//!
//! | key                         | shape          |
//! |-----------------------------|----------------|
//! | `norm1.gain`, `norm1.bias`  | `[C]`          |
//! | `attn.qkv.weight`           | `[C, 3C]`      |
//! | `attn.qkv.bias`             | `[3C]`         |
//! | `attn.winparams.weight`     | `[C, 5·heads]` |
//! | `attn.winparams.bias`       | `[5·heads]`    |
//! | `attn.proj.weight`          | `[C, C]`       |
//! | `attn.proj.bias`            | `[C]`          |
//! | `norm2.gain`, `norm2.bias`  | `[C]`          |
//! | `mlp.fc1.weight`            | `[C, r·C]`     |
//! | `mlp.fc1.bias`              | `[r·C]`        |
//! | `mlp.fc2.weight`            | `[r·C, C]`     |
//! | `mlp.fc2.bias`              | `[C]`          |
//!
//! `attn.winparams.*` exists only for RVSA layers.

use super::sample::WindowSampler;
use super::window::{WindowGrid, PARAMS_PER_HEAD};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphFn, Var};
use crate::ops::{expect_arity, DifferentiableOp, Gap, Gather};
use crate::params::{ParamStore, VarMap};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Full,
    /// Fixed, untransformed windows.
    Window,
    Rvsa,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub dim: usize,
    pub heads: usize,
    pub window_size: usize,
    pub height: usize,
    pub width: usize,
    pub mlp_hidden: usize,
    pub slope: f64,
    pub kind: AttentionKind,
}

impl LayerSpec {
    pub fn with_kind(mut self, kind: AttentionKind) -> Self {
        self.kind = kind;
        self
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.kind != AttentionKind::Full {
            WindowGrid::new(self.dim, self.height, self.width, self.window_size)?;
        }
        Ok(())
    }
}

fn key(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

/// Fresh parameters for one block. Window-parameter predictors start at
/// zero, so an untrained RVSA layer samples the identity window.
pub fn init_layer(prefix: &str, spec: &LayerSpec, rng: &mut Rng) -> ParamStore {
    let c = spec.dim;
    let mut p = ParamStore::new();
    p.insert(key(prefix, "norm1.gain"), Tensor::full(&[c], 1.0));
    p.insert(key(prefix, "norm1.bias"), Tensor::zeros(&[c]));
    p.insert(
        key(prefix, "attn.qkv.weight"),
        Tensor::randn(&[c, 3 * c], INIT_STD, rng),
    );
    p.insert(key(prefix, "attn.qkv.bias"), Tensor::zeros(&[3 * c]));
    if spec.kind == AttentionKind::Rvsa {
        let out = PARAMS_PER_HEAD * spec.heads;
        p.insert(key(prefix, "attn.winparams.weight"), Tensor::zeros(&[c, out]));
        p.insert(key(prefix, "attn.winparams.bias"), Tensor::zeros(&[out]));
    }
    p.insert(key(prefix, "attn.proj.weight"), Tensor::randn(&[c, c], INIT_STD, rng));
    p.insert(key(prefix, "attn.proj.bias"), Tensor::zeros(&[c]));
    p.insert(key(prefix, "norm2.gain"), Tensor::full(&[c], 1.0));
    p.insert(key(prefix, "norm2.bias"), Tensor::zeros(&[c]));
    p.insert(
        key(prefix, "mlp.fc1.weight"),
        Tensor::randn(&[c, spec.mlp_hidden], INIT_STD, rng),
    );
    p.insert(key(prefix, "mlp.fc1.bias"), Tensor::zeros(&[spec.mlp_hidden]));
    p.insert(
        key(prefix, "mlp.fc2.weight"),
        Tensor::randn(&[spec.mlp_hidden, c], INIT_STD, rng),
    );
    p.insert(key(prefix, "mlp.fc2.bias"), Tensor::zeros(&[c]));
    p
}

/// Raw window parameters `[windows × 5·heads]` predicted from the
/// token-major map `x[(H·W)×C]`.
fn predict_params(
    g: &mut Graph,
    x: Var,
    vars: &VarMap,
    prefix: &str,
    spec: &LayerSpec,
    grid: &WindowGrid,
) -> Result<Var> {
    let c = spec.dim;
    let s = spec.window_size;
    let mut index = Vec::with_capacity(grid.len() * c * s * s);
    for w in 0..grid.len() {
        let toks = grid.token_indices(w);
        for ch in 0..c {
            index.extend(toks.iter().map(|&t| t * c + ch));
        }
    }
    let windows = g.gather(x, Gather::new(vec![grid.len(), c, s, s], index)?)?;
    let pooled = g.apply(Gap, &[windows])?;
    let act = g.leaky_relu(pooled, spec.slope)?;
    g.linear(
        act,
        vars.get(&key(prefix, "attn.winparams.weight"))?,
        vars.get(&key(prefix, "attn.winparams.bias"))?,
    )
}

/// Multi-head attention on a normalized token map `x[(H·W)×C]`, before
/// the output projection. Heads are concatenated on the channel axis.
pub fn attention_tokens(g: &mut Graph, x: Var, vars: &VarMap, prefix: &str, spec: &LayerSpec) -> Result<Var> {
    spec.validate()?;
    let (n, c) = g.value(x).dims2("attention")?;
    if c != spec.dim || n != spec.height * spec.width {
        return Err(Error::shape(
            "attention",
            g.value(x).shape(),
            &[spec.height * spec.width, spec.dim],
        ));
    }
    let d = spec.head_dim();
    let qkv = g.linear(
        x,
        vars.get(&key(prefix, "attn.qkv.weight"))?,
        vars.get(&key(prefix, "attn.qkv.bias"))?,
    )?;

    let grid = match spec.kind {
        AttentionKind::Full => None,
        _ => Some(WindowGrid::new(c, spec.height, spec.width, spec.window_size)?),
    };
    let raw_params = match (spec.kind, &grid) {
        (AttentionKind::Rvsa, Some(grid)) => Some(predict_params(g, x, vars, prefix, spec, grid)?),
        _ => None,
    };

    let mut heads = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let q = g.columns(qkv, h * d, d)?;
        let k = g.columns(qkv, c + h * d, d)?;
        let v = g.columns(qkv, 2 * c + h * d, d)?;
        let out = match (spec.kind, &grid) {
            (AttentionKind::Full, _) => g.block_attention(q, k, v, n)?,
            (kind, Some(grid)) => {
                let s2 = spec.window_size * spec.window_size;
                let order = grid.window_major_order();
                let qw = g.rows(q, &order)?;
                let (kw, vw) = if kind == AttentionKind::Rvsa {
                    let raw = raw_params.expect("rvsa layers predict window params");
                    let p = g.columns(raw, h * PARAMS_PER_HEAD, PARAMS_PER_HEAD)?;
                    let to_chw = || Gather::tokens_to_chw(d, spec.height, spec.width);
                    let kc = g.gather(k, to_chw())?;
                    let vc = g.gather(v, to_chw())?;
                    let corners: Vec<_> = (0..grid.len()).map(|w| grid.corners(w)).collect();
                    let ks = g.apply(WindowSampler::new(spec.window_size, corners.clone()), &[kc, p])?;
                    let vs = g.apply(WindowSampler::new(spec.window_size, corners), &[vc, p])?;
                    (ks, vs)
                } else {
                    (g.rows(k, &order)?, g.rows(v, &order)?)
                };
                let o = g.block_attention(qw, kw, vw, s2)?;
                g.rows(o, &grid.raster_order())?
            }
            (_, None) => unreachable!("windowed kinds always have a grid"),
        };
        heads.push(out);
    }
    g.concat_columns(&heads)
}

/// Full block on a token-major map: `y = x + proj(attn(norm1(x)))`,
/// `out = y + fc2(gelu(fc1(norm2(y))))`.
pub fn block_tokens(g: &mut Graph, x: Var, vars: &VarMap, prefix: &str, spec: &LayerSpec) -> Result<Var> {
    let xn = g.layer_norm(
        x,
        vars.get(&key(prefix, "norm1.gain"))?,
        vars.get(&key(prefix, "norm1.bias"))?,
    )?;
    let a = attention_tokens(g, xn, vars, prefix, spec)?;
    let a = g.linear(
        a,
        vars.get(&key(prefix, "attn.proj.weight"))?,
        vars.get(&key(prefix, "attn.proj.bias"))?,
    )?;
    let y = g.add(x, a)?;
    let yn = g.layer_norm(
        y,
        vars.get(&key(prefix, "norm2.gain"))?,
        vars.get(&key(prefix, "norm2.bias"))?,
    )?;
    let m = g.linear(
        yn,
        vars.get(&key(prefix, "mlp.fc1.weight"))?,
        vars.get(&key(prefix, "mlp.fc1.bias"))?,
    )?;
    let m = g.gelu(m)?;
    let m = g.linear(
        m,
        vars.get(&key(prefix, "mlp.fc2.weight"))?,
        vars.get(&key(prefix, "mlp.fc2.bias"))?,
    )?;
    g.add(y, m)
}

fn run_layer(x: &Tensor, params: &ParamStore, prefix: &str, spec: &LayerSpec) -> Result<Tensor> {
    let (c, h, w) = x.dims3("layer")?;
    if c != spec.dim || h != spec.height || w != spec.width {
        return Err(Error::shape("layer", x.shape(), &[spec.dim, spec.height, spec.width]));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let input = g.constant(x.clone());
    let tokens = g.gather(input, Gather::chw_to_tokens(c, h, w))?;
    let out = block_tokens(&mut g, tokens, &vars, prefix, spec)?;
    let out = g.gather(out, Gather::tokens_to_chw(c, h, w))?;
    Ok(g.value(out).clone())
}

/// One transformer block with rotated varied-size window attention on a
/// `C×H×W` map; output has the input's shape.
pub fn rvsa_layer(x: &Tensor, params: &ParamStore, prefix: &str, spec: &LayerSpec) -> Result<Tensor> {
    run_layer(x, params, prefix, &spec.with_kind(AttentionKind::Rvsa))
}

/// The same block with fixed, untransformed windows.
pub fn window_layer(x: &Tensor, params: &ParamStore, prefix: &str, spec: &LayerSpec) -> Result<Tensor> {
    run_layer(x, params, prefix, &spec.with_kind(AttentionKind::Window))
}

/// The same block with global attention.
pub fn full_attention_layer(x: &Tensor, params: &ParamStore, prefix: &str, spec: &LayerSpec) -> Result<Tensor> {
    run_layer(x, params, prefix, &spec.with_kind(AttentionKind::Full))
}

/// A block as a differentiable function of `[x, p_1, …, p_k]` where
/// `x[C×H×W]` and `p_i` are the layer's parameters in key order.
pub struct LayerOp {
    prefix: String,
    spec: LayerSpec,
    names: Vec<String>,
}

impl LayerOp {
    pub fn new(prefix: &str, spec: LayerSpec, params: &ParamStore) -> Self {
        let dotted = format!("{prefix}.");
        Self {
            prefix: prefix.to_string(),
            spec,
            names: params
                .names()
                .filter(|n| n.starts_with(&dotted))
                .map(String::from)
                .collect(),
        }
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Input list matching this op's arity.
    pub fn inputs<'a>(&self, x: &'a Tensor, params: &'a ParamStore) -> Result<Vec<&'a Tensor>> {
        let mut out = vec![x];
        for n in &self.names {
            out.push(params.get(n)?);
        }
        Ok(out)
    }

    fn graph_fn(&self) -> GraphFn<impl Fn(&mut Graph, &[Var]) -> Result<Var> + '_> {
        GraphFn::new("rvsa_layer", move |g: &mut Graph, vars: &[Var]| {
            let (c, h, w) = g.value(vars[0]).dims3("rvsa_layer")?;
            let mut map = VarMap::default();
            for (n, &v) in self.names.iter().zip(&vars[1..]) {
                map.insert(n.clone(), v);
            }
            let tokens = g.gather(vars[0], Gather::chw_to_tokens(c, h, w))?;
            let out = block_tokens(g, tokens, &map, &self.prefix, &self.spec)?;
            g.gather(out, Gather::tokens_to_chw(c, h, w))
        })
    }
}

impl DifferentiableOp for LayerOp {
    fn name(&self) -> &str {
        "rvsa_layer"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("rvsa_layer", inputs, self.names.len() + 1)?;
        self.graph_fn().forward(inputs)
    }

    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, cotangent: &Tensor) -> Result<Vec<Tensor>> {
        expect_arity("rvsa_layer", inputs, self.names.len() + 1)?;
        self.graph_fn().vjp(inputs, output, cotangent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> LayerSpec {
        LayerSpec {
            dim: 8,
            heads: 2,
            window_size: 2,
            height: 4,
            width: 4,
            mlp_hidden: 32,
            slope: 0.01,
            kind: AttentionKind::Rvsa,
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = Rng::new(1);
        let s = spec();
        let p = init_layer("layer01", &s, &mut rng);
        let x = Tensor::randn(&[8, 4, 4], 1.0, &mut rng);
        for f in [rvsa_layer, window_layer, full_attention_layer] {
            assert_eq!(f(&x, &p, "layer01", &s).unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn zero_predictor_reduces_to_window_attention() {
        let mut rng = Rng::new(2);
        let s = spec();
        let p = init_layer("layer01", &s, &mut rng);
        let x = Tensor::randn(&[8, 4, 4], 1.0, &mut rng);
        let a = rvsa_layer(&x, &p, "layer01", &s).unwrap();
        let b = window_layer(&x, &p, "layer01", &s).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn nonzero_predictor_changes_output() {
        let mut rng = Rng::new(3);
        let s = spec();
        let mut p = init_layer("layer01", &s, &mut rng);
        p.insert("layer01.attn.winparams.bias", Tensor::randn(&[10], 0.5, &mut rng));
        let x = Tensor::randn(&[8, 4, 4], 1.0, &mut rng);
        let a = rvsa_layer(&x, &p, "layer01", &s).unwrap();
        let b = window_layer(&x, &p, "layer01", &s).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn missing_param_is_reported() {
        let mut rng = Rng::new(4);
        let s = spec();
        let mut p = init_layer("layer01", &s, &mut rng);
        p.remove("layer01.attn.winparams.weight");
        let x = Tensor::randn(&[8, 4, 4], 1.0, &mut rng);
        let err = rvsa_layer(&x, &p, "layer01", &s).unwrap_err().to_string();
        assert!(err.contains("layer01.attn.winparams.weight"), "{err}");
    }
}
