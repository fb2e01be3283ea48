//! Reverse-mode tape built on the per-op VJP contract.

use crate::error::{Error, Result};
use crate::ops::{
    Add, BlockAttention, ConcatColumns, DifferentiableOp, Gather, Gelu, LayerNorm, LeakyRelu, Linear, MatMul, Scale,
    SoftmaxRows, SumScalars, Transpose,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

struct Node {
    value: Tensor,
    op: Option<Box<dyn DifferentiableOp>>,
    inputs: Vec<Var>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), false)
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Option<Box<dyn DifferentiableOp>>,
        inputs: Vec<Var>,
        needs_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn apply(&mut self, op: impl DifferentiableOp + 'static, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = op.forward(&values)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(out, Some(Box::new(op)), inputs.to_vec(), needs_grad))
    }

    /// Gradients of a one-element `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let value = self.value(root);
        if value.len() != 1 {
            return Err(Error::shape("backward", value.shape(), &[]));
        }
        self.backward_with(root, Tensor::full(value.shape(), 1.0))
    }

    /// Pulls `cotangent` back from `root` through the tape.
    pub fn backward_with(&self, root: Var, cotangent: Tensor) -> Result<Grads> {
        if cotangent.shape() != self.value(root).shape() {
            return Err(Error::shape("backward", self.value(root).shape(), cotangent.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(cotangent);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.vjp(&inputs, &node.value, &g)?;
            for (v, dg) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&dg)?,
                    slot => *slot = Some(dg),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Transpose, &[a])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(Linear, &[x, w, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Add, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Scale(c), &[a])
    }

    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        self.apply(SumScalars, terms)
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean_of(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Config("mean of zero tensors".into()))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        if terms.len() == 1 {
            return Ok(acc);
        }
        self.scale(acc, 1.0 / terms.len() as f64)
    }

    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(ConcatColumns, parts)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(SoftmaxRows, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(Gelu, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.apply(LeakyRelu::new(slope)?, &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.apply(LayerNorm::default(), &[x, gain, bias])
    }

    pub fn gather(&mut self, x: Var, gather: Gather) -> Result<Var> {
        self.apply(gather, &[x])
    }

    pub fn columns(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2("columns")?;
        self.apply(Gather::columns(rows, cols, start, width)?, &[x])
    }

    pub fn rows(&mut self, x: Var, picks: &[usize]) -> Result<Var> {
        let (_, cols) = self.value(x).dims2("rows")?;
        self.apply(Gather::rows(cols, picks)?, &[x])
    }

    pub fn block_attention(&mut self, q: Var, k: Var, v: Var, block: usize) -> Result<Var> {
        self.apply(BlockAttention::new(block), &[q, k, v])
    }
}

/// Wraps a graph-building closure as a [`DifferentiableOp`], so composite
/// computations can be checked with the same harness as primitive ops.
pub struct GraphFn<F> {
    name: String,
    build: F,
}

impl<F> GraphFn<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    pub fn new(name: impl Into<String>, build: F) -> Self {
        Self {
            name: name.into(),
            build,
        }
    }

    fn run(&self, inputs: &[&Tensor]) -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param((*t).clone())).collect();
        let out = (self.build)(&mut g, &vars)?;
        Ok((g, vars, out))
    }
}

impl<F> DifferentiableOp for GraphFn<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (g, _, out) = self.run(inputs)?;
        Ok(g.value(out).clone())
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, cotangent: &Tensor) -> Result<Vec<Tensor>> {
        let (g, vars, out) = self.run(inputs)?;
        let grads = g.backward_with(out, cotangent.clone())?;
        Ok(vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect())
    }
}
