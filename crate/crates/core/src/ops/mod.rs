//! Differentiable operations.
//!
//! Every op implements [`DifferentiableOp`]: a pure forward pass and a
//! vector-Jacobian product. The tape in [`crate::graph`] only ever calls
//! these two methods, so the per-op VJP is the whole backward contract.

mod activation;
mod attention;
mod linalg;
mod loss;
mod resample;

pub use activation::{
    gap, leaky_relu, softmax_rows, Gap, Gelu, LayerNorm, LeakyRelu, SoftmaxRows, DEFAULT_LEAKY_SLOPE,
};
pub use attention::{window_attention, BlockAttention};
pub use linalg::{matmul, Add, ConcatColumns, Gather, Linear, MatMul, Scale, SumScalars, Transpose};
pub use loss::{BceWithLogits, SmoothL1, SoftmaxCrossEntropy};
pub use resample::UpsampleBilinear;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub trait DifferentiableOp {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Input cotangents given the forward inputs, the forward output and
    /// the output cotangent. One tensor per input, shaped like that input.
    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, cotangent: &Tensor) -> Result<Vec<Tensor>>;
}

pub(crate) fn expect_arity(op: &'static str, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::Config(format!("{op} expects {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}
