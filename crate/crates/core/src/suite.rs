//! Named gradient-check cases: every primitive op, the full RVSA block and
//! the four loss families, each on seeded random inputs at toy sizes.

use std::f64::consts::PI;

use crate::annotation::{build_sample, RotatedBox, SemanticMap, IGNORE};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_seeded, GradCheckReport};
use crate::graph::{Graph, GraphFn, Var};
use crate::mtp::{loss_instance, loss_rotated, loss_semantic, CellGrid};
use crate::ops::{
    Add, BceWithLogits, BlockAttention, ConcatColumns, DifferentiableOp, Gap, Gather, Gelu, LayerNorm, LeakyRelu,
    Linear, MatMul, Scale, SmoothL1, SoftmaxCrossEntropy, SoftmaxRows, SumScalars, Transpose, UpsampleBilinear,
};
use crate::rng::Rng;
use crate::rvsa::{init_layer, AttentionKind, LayerOp, LayerSpec, WindowGrid, WindowSampler, PARAMS_PER_HEAD};
use crate::tensor::Tensor;

pub const OP_NAMES: [&str; 24] = [
    "matmul",
    "transpose",
    "linear",
    "add",
    "scale",
    "sum_scalars",
    "concat_columns",
    "gather",
    "softmax_rows",
    "gap",
    "leaky_relu",
    "gelu",
    "layer_norm",
    "block_attention",
    "upsample_bilinear",
    "sample_window",
    "cross_entropy",
    "bce_with_logits",
    "smooth_l1",
    "rvsa_layer",
    "loss_semantic",
    "loss_rotated",
    "loss_instance_box",
    "loss_instance_mask",
];

/// The four loss-family cases among [`OP_NAMES`].
pub const LOSS_FAMILIES: [&str; 4] = [
    "loss_semantic",
    "loss_rotated",
    "loss_instance_box",
    "loss_instance_mask",
];

pub struct Case {
    pub op: Box<dyn DifferentiableOp>,
    pub inputs: Vec<Tensor>,
}

impl Case {
    fn new(op: impl DifferentiableOp + 'static, inputs: Vec<Tensor>) -> Self {
        Self {
            op: Box::new(op),
            inputs,
        }
    }

    pub fn check(&self, h: f64, seed: u64) -> Result<GradCheckReport> {
        let refs: Vec<&Tensor> = self.inputs.iter().collect();
        grad_check_seeded(self.op.as_ref(), &refs, h, seed)
    }
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn random_boxes(rng: &mut Rng, side: f64, count: usize, classes: usize) -> Result<Vec<RotatedBox>> {
    (0..count)
        .map(|_| {
            RotatedBox::new(
                rng.uniform(0.0, side - 1.0),
                rng.uniform(0.0, side - 1.0),
                rng.uniform(2.0, side / 2.0),
                rng.uniform(2.0, side / 2.0),
                rng.uniform(-PI / 2.0, PI / 2.0),
                rng.int_inclusive(0, classes - 1) as u32,
            )
        })
        .collect()
}

fn loss_case(name: &'static str, rng: &mut Rng) -> Result<Case> {
    const K: usize = 3;
    let grid = CellGrid { side: 4, stride: 4 };
    let px = grid.pixels_per_side();
    let boxes = random_boxes(rng, px as f64, 3, K)?;
    match name {
        "loss_semantic" => {
            let data = (0..px * px)
                .map(|_| match rng.int_inclusive(0, K) {
                    k if k == K => IGNORE,
                    k => k as u8,
                })
                .collect();
            let sem = SemanticMap {
                height: px,
                width: px,
                data,
            };
            let f = move |g: &mut Graph, v: &[Var]| loss_semantic(g, v[0], &sem);
            Ok(Case::new(GraphFn::new(name, f), vec![randn(&[px * px, K], rng)]))
        }
        "loss_rotated" => {
            let f = move |g: &mut Graph, v: &[Var]| loss_rotated(g, v[0], &boxes, &grid, K);
            Ok(Case::new(
                GraphFn::new(name, f),
                vec![randn(&[grid.cells(), K + 6], rng)],
            ))
        }
        _ => {
            let sample = build_sample(&boxes, Tensor::zeros(&[1, px, px]), 0)?.sample;
            let mask_term = name == "loss_instance_mask";
            let f = move |g: &mut Graph, v: &[Var]| {
                let (b, m) = loss_instance(g, v[0], &sample.instances, &grid, K)?;
                Ok(if mask_term { m } else { b })
            };
            Ok(Case::new(
                GraphFn::new(name, f),
                vec![randn(&[grid.cells(), K + 6], rng)],
            ))
        }
    }
}

/// Builds the named case with inputs drawn from `seed`.
pub fn build_case(name: &str, seed: u64) -> Result<Case> {
    let mut rng = Rng::derive(seed, 0x5317e);
    let r = &mut rng;
    let case = match name {
        "matmul" => Case::new(MatMul, vec![randn(&[3, 4], r), randn(&[4, 2], r)]),
        "transpose" => Case::new(Transpose, vec![randn(&[3, 4], r)]),
        "linear" => Case::new(Linear, vec![randn(&[3, 4], r), randn(&[4, 5], r), randn(&[5], r)]),
        "add" => Case::new(Add, vec![randn(&[3, 4], r), randn(&[3, 4], r)]),
        "scale" => Case::new(Scale(-1.75), vec![randn(&[3, 4], r)]),
        "sum_scalars" => Case::new(SumScalars, (0..3).map(|_| Tensor::scalar(r.normal())).collect()),
        "concat_columns" => Case::new(ConcatColumns, vec![randn(&[3, 2], r), randn(&[3, 3], r)]),
        "gather" => {
            let index = (0..10).map(|_| r.int_inclusive(0, 11)).collect();
            Case::new(Gather::new(vec![2, 5], index)?, vec![randn(&[3, 4], r)])
        }
        "softmax_rows" => Case::new(SoftmaxRows, vec![randn(&[4, 5], r)]),
        "gap" => Case::new(Gap, vec![randn(&[2, 3, 3, 3], r)]),
        "leaky_relu" => Case::new(LeakyRelu::new(0.01)?, vec![randn(&[4, 5], r)]),
        "gelu" => Case::new(Gelu, vec![randn(&[4, 5], r)]),
        "layer_norm" => Case::new(
            LayerNorm::default(),
            vec![randn(&[4, 6], r), randn(&[6], r), randn(&[6], r)],
        ),
        "block_attention" => Case::new(
            BlockAttention::new(4),
            vec![randn(&[8, 3], r), randn(&[8, 3], r), randn(&[8, 3], r)],
        ),
        "upsample_bilinear" => Case::new(UpsampleBilinear::new((4, 4), (8, 8)), vec![randn(&[16, 2], r)]),
        "sample_window" => {
            let grid = WindowGrid::new(2, 6, 6, 3)?;
            let corners = (0..grid.len()).map(|w| grid.corners(w)).collect();
            let params = Tensor::randn(&[grid.len(), PARAMS_PER_HEAD], 0.3, r);
            Case::new(WindowSampler::new(3, corners), vec![randn(&[2, 6, 6], r), params])
        }
        "cross_entropy" => {
            let targets = (0..5).map(|i| (i != 2).then(|| r.int_inclusive(0, 3))).collect();
            Case::new(SoftmaxCrossEntropy::new(targets), vec![randn(&[5, 4], r)])
        }
        "bce_with_logits" => {
            let targets = (0..6).map(|_| r.unit()).collect();
            Case::new(BceWithLogits::new(targets), vec![randn(&[2, 3], r)])
        }
        "smooth_l1" => {
            let targets = (0..6).map(|_| r.normal()).collect();
            Case::new(SmoothL1::new(targets), vec![Tensor::randn(&[2, 3], 2.0, r)])
        }
        "rvsa_layer" => {
            let spec = LayerSpec {
                dim: 8,
                heads: 2,
                window_size: 2,
                height: 4,
                width: 4,
                mlp_hidden: 32,
                slope: 0.01,
                kind: AttentionKind::Rvsa,
            };
            let mut params = init_layer("layer01", &spec, r);
            // Off the identity lattice, where bilinear reads have kinks.
            params.insert("layer01.attn.winparams.weight", Tensor::randn(&[8, 10], 0.2, r));
            params.insert("layer01.attn.winparams.bias", Tensor::randn(&[10], 0.2, r));
            for (key, t) in params.iter_mut() {
                if key.ends_with("weight") && !key.contains("winparams") {
                    *t = t.map(|v| v * 10.0);
                }
            }
            let x = randn(&[8, 4, 4], r);
            let op = LayerOp::new("layer01", spec, &params);
            let inputs = op.inputs(&x, &params)?.into_iter().cloned().collect();
            Case::new(op, inputs)
        }
        "loss_semantic" => loss_case("loss_semantic", r)?,
        "loss_rotated" => loss_case("loss_rotated", r)?,
        "loss_instance_box" => loss_case("loss_instance_box", r)?,
        "loss_instance_mask" => loss_case("loss_instance_mask", r)?,
        other => {
            return Err(Error::Config(format!(
                "unknown op `{other}`; known ops: {}",
                OP_NAMES.join(", ")
            )))
        }
    };
    Ok(case)
}

/// Builds and checks one case with step `h`.
pub fn check_op(name: &str, seed: u64, h: f64) -> Result<GradCheckReport> {
    build_case(name, seed)?.check(h, seed)
}
