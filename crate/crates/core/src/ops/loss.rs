use super::activation::softmax_in_place;
use super::{expect_arity, DifferentiableOp};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over rows of `logits[M×K]` that carry a
/// target; rows with `None` are ignored. Zero when no row is labeled.
pub struct SoftmaxCrossEntropy {
    targets: Vec<Option<usize>>,
}

impl SoftmaxCrossEntropy {
    pub fn new(targets: Vec<Option<usize>>) -> Self {
        Self { targets }
    }

    fn check(&self, logits: &Tensor) -> Result<(usize, usize)> {
        let (m, k) = logits.dims2("cross_entropy")?;
        if m != self.targets.len() {
            return Err(Error::shape("cross_entropy", logits.shape(), &[self.targets.len()]));
        }
        if let Some(bad) = self.targets.iter().flatten().find(|&&t| t >= k) {
            return Err(Error::Label(format!("class id {bad} >= class count {k}")));
        }
        Ok((m, k))
    }

    fn labeled(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

impl DifferentiableOp for SoftmaxCrossEntropy {
    fn name(&self) -> &str {
        "cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("cross_entropy", inputs, 1)?;
        let (_, k) = self.check(inputs[0])?;
        let count = self.labeled();
        if count == 0 {
            return Ok(Tensor::scalar(0.0));
        }
        let mut total = 0.0;
        for (row, t) in inputs[0].data().chunks_exact(k).zip(&self.targets) {
            if let Some(t) = *t {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
            }
        }
        Ok(Tensor::scalar(total / count as f64))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (_, k) = self.check(inputs[0])?;
        let mut dx = Tensor::zeros(inputs[0].shape());
        let count = self.labeled();
        if count == 0 {
            return Ok(vec![dx]);
        }
        let scale = g.item() / count as f64;
        for ((row, drow), t) in inputs[0]
            .data()
            .chunks_exact(k)
            .zip(dx.data_mut().chunks_exact_mut(k))
            .zip(&self.targets)
        {
            if let Some(t) = *t {
                drow.copy_from_slice(row);
                softmax_in_place(drow);
                drow[t] -= 1.0;
                for v in drow.iter_mut() {
                    *v *= scale;
                }
            }
        }
        Ok(vec![dx])
    }
}

/// Mean binary cross-entropy on logits against targets in `[0, 1]`.
pub struct BceWithLogits {
    targets: Vec<f64>,
}

impl BceWithLogits {
    pub fn new(targets: Vec<f64>) -> Self {
        Self { targets }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DifferentiableOp for BceWithLogits {
    fn name(&self) -> &str {
        "bce_with_logits"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("bce_with_logits", inputs, 1)?;
        let x = inputs[0];
        if x.len() != self.targets.len() {
            return Err(Error::shape("bce_with_logits", x.shape(), &[self.targets.len()]));
        }
        let total: f64 = x
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(Tensor::scalar(total / x.len() as f64))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let scale = g.item() / inputs[0].len() as f64;
        let data = inputs[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&z, &t)| scale * (sigmoid(z) - t))
            .collect();
        Ok(vec![Tensor::new(inputs[0].shape().to_vec(), data)?])
    }
}

/// Mean smooth-L1 (Huber with `beta`) between predictions and targets.
pub struct SmoothL1 {
    targets: Vec<f64>,
    beta: f64,
}

impl SmoothL1 {
    pub fn new(targets: Vec<f64>) -> Self {
        Self { targets, beta: 1.0 }
    }

    fn elem(&self, d: f64) -> f64 {
        if d.abs() < self.beta {
            0.5 * d * d / self.beta
        } else {
            d.abs() - 0.5 * self.beta
        }
    }
}

impl DifferentiableOp for SmoothL1 {
    fn name(&self) -> &str {
        "smooth_l1"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("smooth_l1", inputs, 1)?;
        let x = inputs[0];
        if x.len() != self.targets.len() {
            return Err(Error::shape("smooth_l1", x.shape(), &[self.targets.len()]));
        }
        let total: f64 = x.data().iter().zip(&self.targets).map(|(p, t)| self.elem(p - t)).sum();
        Ok(Tensor::scalar(total / x.len() as f64))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let scale = g.item() / inputs[0].len() as f64;
        let data = inputs[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| {
                let d = p - t;
                let slope = if d.abs() < self.beta { d / self.beta } else { d.signum() };
                scale * slope
            })
            .collect();
        Ok(vec![Tensor::new(inputs[0].shape().to_vec(), data)?])
    }
}
