use super::{expect_arity, DifferentiableOp};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Negative slope used for the window-parameter predictor.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    SoftmaxRows.forward(&[x])
}

pub fn gap(x: &Tensor) -> Result<Tensor> {
    Gap.forward(&[x])
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    LeakyRelu::new(slope)?.forward(&[x])
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax VJP: `dx = y ⊙ (g − Σ g⊙y)`.
pub(crate) fn softmax_vjp_row(y: &[f64], g: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((d, yi), gi) in dx.iter_mut().zip(y).zip(g) {
        *d = yi * (gi - dot);
    }
}

pub struct SoftmaxRows;

impl DifferentiableOp for SoftmaxRows {
    fn name(&self) -> &str {
        "softmax_rows"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("softmax_rows", inputs, 1)?;
        let (_, n) = inputs[0].dims2("softmax_rows")?;
        let mut y = inputs[0].clone();
        for row in y.data_mut().chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        Ok(y)
    }

    fn vjp(&self, _inputs: &[&Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (_, n) = y.dims2("softmax_rows")?;
        let mut dx = Tensor::zeros(y.shape());
        for ((yr, gr), dr) in y
            .data()
            .chunks_exact(n)
            .zip(g.data().chunks_exact(n))
            .zip(dx.data_mut().chunks_exact_mut(n))
        {
            softmax_vjp_row(yr, gr, dr);
        }
        Ok(vec![dx])
    }
}

/// Global average pooling over the last two axes: `[.., H, W] -> [..]`.
pub struct Gap;

impl Gap {
    fn split(x: &Tensor) -> Result<(Vec<usize>, usize)> {
        let r = x.rank();
        if r < 2 {
            return Err(Error::shape("gap", x.shape(), &[0, 0]));
        }
        let lead = x.shape()[..r - 2].to_vec();
        Ok((lead, x.shape()[r - 2] * x.shape()[r - 1]))
    }
}

impl DifferentiableOp for Gap {
    fn name(&self) -> &str {
        "gap"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("gap", inputs, 1)?;
        let (lead, area) = Self::split(inputs[0])?;
        let data = inputs[0]
            .data()
            .chunks_exact(area)
            .map(|plane| plane.iter().sum::<f64>() / area as f64)
            .collect();
        Tensor::new(lead, data)
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (_, area) = Self::split(inputs[0])?;
        let data = g
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / area as f64, area))
            .collect();
        Ok(vec![Tensor::new(inputs[0].shape().to_vec(), data)?])
    }
}

pub struct LeakyRelu {
    slope: f64,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Config(format!("leaky relu slope {slope} outside (0, 1)")));
        }
        Ok(Self { slope })
    }
}

impl DifferentiableOp for LeakyRelu {
    fn name(&self) -> &str {
        "leaky_relu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("leaky_relu", inputs, 1)?;
        Ok(inputs[0].map(|v| if v >= 0.0 { v } else { self.slope * v }))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(g.data())
            .map(|(&x, &gv)| if x >= 0.0 { gv } else { self.slope * gv })
            .collect();
        Ok(vec![Tensor::new(g.shape().to_vec(), data)?])
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub struct Gelu;

impl DifferentiableOp for Gelu {
    fn name(&self) -> &str {
        "gelu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("gelu", inputs, 1)?;
        Ok(inputs[0].map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(g.data())
            .map(|(&x, &gv)| {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                gv * (0.5 * (1.0 + t) + 0.5 * x * dt)
            })
            .collect();
        Ok(vec![Tensor::new(g.shape().to_vec(), data)?])
    }
}

/// Row-wise layer normalization with gain and bias: inputs `x[m×n]`,
/// `gain[n]`, `bias[n]`.
pub struct LayerNorm {
    pub eps: f64,
}

impl Default for LayerNorm {
    fn default() -> Self {
        Self { eps: 1e-6 }
    }
}

impl LayerNorm {
    fn stats(&self, row: &[f64]) -> (f64, f64) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, 1.0 / (var + self.eps).sqrt())
    }
}

impl DifferentiableOp for LayerNorm {
    fn name(&self) -> &str {
        "layer_norm"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("layer_norm", inputs, 3)?;
        let (x, gain, bias) = (inputs[0], inputs[1], inputs[2]);
        let (_, n) = x.dims2("layer_norm")?;
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::shape("layer_norm", x.shape(), gain.shape()));
        }
        let mut y = x.clone();
        for row in y.data_mut().chunks_exact_mut(n) {
            let (mean, inv) = self.stats(row);
            for ((v, gm), b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
                *v = (*v - mean) * inv * gm + b;
            }
        }
        Ok(y)
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (x, gain) = (inputs[0], inputs[1]);
        let (m, n) = x.dims2("layer_norm")?;
        let mut dx = vec![0.0; m * n];
        let mut dgain = vec![0.0; n];
        let mut dbias = vec![0.0; n];
        let mut xhat = vec![0.0; n];
        let mut dxhat = vec![0.0; n];
        for r in 0..m {
            let row = &x.data()[r * n..(r + 1) * n];
            let grow = &g.data()[r * n..(r + 1) * n];
            let (mean, inv) = self.stats(row);
            for j in 0..n {
                xhat[j] = (row[j] - mean) * inv;
                dxhat[j] = grow[j] * gain.data()[j];
                dgain[j] += grow[j] * xhat[j];
                dbias[j] += grow[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / n as f64;
            let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            for j in 0..n {
                dx[r * n + j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
            }
        }
        Ok(vec![
            Tensor::new(vec![m, n], dx)?,
            Tensor::new(vec![n], dgain)?,
            Tensor::new(vec![n], dbias)?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn symmetric_row_is_uniform() {
        let x = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax_rows(&x).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let x = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] < 1e-300);
    }

    #[test]
    fn gap_cases() {
        let c = Tensor::full(&[1, 3, 3], 7.0);
        assert_eq!(gap(&c).unwrap().data(), &[7.0]);
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(gap(&x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn gap_matches_naive_sum() {
        let mut rng = Rng::new(5);
        let x = Tensor::randn(&[3, 5, 5], 1.0, &mut rng);
        let y = gap(&x).unwrap();
        for c in 0..3 {
            let mut s = 0.0;
            for i in 0..25 {
                s += x.data()[c * 25 + i];
            }
            assert!((y.data()[c] - s / 25.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn leaky_cases() {
        let x = Tensor::new(vec![3], vec![2.0, -3.0, 0.0]).unwrap();
        let y = leaky_relu(&x, 0.01).unwrap();
        assert_eq!(y.data()[0], 2.0);
        assert!((y.data()[1] + 0.03).abs() < 1e-15);
        assert_eq!(y.data()[2], 0.0);
        assert_eq!(leaky_relu(&x, 0.5).unwrap().data()[2], 0.0);
    }

    #[test]
    fn leaky_rejects_bad_slope() {
        let x = Tensor::zeros(&[1]);
        for s in [0.0, 1.0, -0.1, 2.0, f64::NAN] {
            assert!(matches!(leaky_relu(&x, s), Err(Error::Config(_))));
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut rng = Rng::new(2);
        let x = Tensor::randn(&[3, 8], 2.0, &mut rng);
        let y = LayerNorm::default()
            .forward(&[&x, &Tensor::full(&[8], 1.0), &Tensor::zeros(&[8])])
            .unwrap();
        for row in y.data().chunks_exact(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| v * v).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
