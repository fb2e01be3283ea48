use super::activation::{softmax_in_place, softmax_vjp_row};
use super::linalg::{mm, mm_at, mm_bt};
use super::{expect_arity, DifferentiableOp};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-window scaled dot-product attention:
/// `softmax_rows(q·kᵀ / √C′) · v` for `q, k, v` of shape `[tokens × C′]`.
pub fn window_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (tokens, _) = q.dims2("window_attention")?;
    BlockAttention::new(tokens).forward(&[q, k, v])
}

/// Block-diagonal attention: the token axis of `q`, `k`, `v` is cut into
/// consecutive blocks of `block` rows and each block attends only within
/// itself. One block per window gives windowed attention, a single block
/// spanning all tokens gives full attention.
pub struct BlockAttention {
    block: usize,
}

impl BlockAttention {
    pub fn new(block: usize) -> Self {
        Self { block }
    }

    fn check(&self, inputs: &[&Tensor]) -> Result<(usize, usize)> {
        expect_arity("block_attention", inputs, 3)?;
        let (n, d) = inputs[0].dims2("block_attention")?;
        for t in &inputs[1..] {
            if t.shape() != inputs[0].shape() {
                return Err(Error::shape("block_attention", inputs[0].shape(), t.shape()));
            }
        }
        if self.block == 0 || n % self.block != 0 {
            return Err(Error::shape("block_attention", inputs[0].shape(), &[self.block]));
        }
        Ok((n, d))
    }

    fn probs(&self, q: &[f64], k: &[f64], d: usize) -> Vec<f64> {
        let b = self.block;
        let scale = (d as f64).sqrt();
        let mut p = mm_bt(q, k, b, d, b);
        for row in p.chunks_exact_mut(b) {
            for v in row.iter_mut() {
                *v /= scale;
            }
            softmax_in_place(row);
        }
        p
    }
}

impl DifferentiableOp for BlockAttention {
    fn name(&self) -> &str {
        "block_attention"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (n, d) = self.check(inputs)?;
        let b = self.block;
        let mut out = Vec::with_capacity(n * d);
        for blk in 0..n / b {
            let r = blk * b * d..(blk + 1) * b * d;
            let p = self.probs(&inputs[0].data()[r.clone()], &inputs[1].data()[r.clone()], d);
            out.extend(mm(&p, &inputs[2].data()[r], b, b, d));
        }
        Tensor::new(vec![n, d], out)
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (n, d) = self.check(inputs)?;
        let b = self.block;
        let scale = (d as f64).sqrt();
        let (mut dq, mut dk, mut dv) = (
            Vec::with_capacity(n * d),
            Vec::with_capacity(n * d),
            Vec::with_capacity(n * d),
        );
        for blk in 0..n / b {
            let r = blk * b * d..(blk + 1) * b * d;
            let (q, k, v) = (
                &inputs[0].data()[r.clone()],
                &inputs[1].data()[r.clone()],
                &inputs[2].data()[r.clone()],
            );
            let go = &g.data()[r];
            let p = self.probs(q, k, d);
            dv.extend(mm_at(&p, go, b, b, d));
            let dp = mm_bt(go, v, b, d, b);
            let mut ds = vec![0.0; b * b];
            for ((pr, gr), dr) in p.chunks_exact(b).zip(dp.chunks_exact(b)).zip(ds.chunks_exact_mut(b)) {
                softmax_vjp_row(pr, gr, dr);
            }
            for v in ds.iter_mut() {
                *v /= scale;
            }
            dq.extend(mm(&ds, k, b, b, d));
            dk.extend(mm_at(&ds, q, b, b, d));
        }
        Ok(vec![
            Tensor::new(vec![n, d], dq)?,
            Tensor::new(vec![n, d], dk)?,
            Tensor::new(vec![n, d], dv)?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn single_token_returns_value() {
        let q = Tensor::new(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let k = Tensor::new(vec![1, 3], vec![5.0, 1.0, -2.0]).unwrap();
        let v = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.7]).unwrap();
        assert_eq!(window_attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = Rng::new(8);
        let q = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let k = Tensor::new(vec![4, 2], [0.4, -0.9].repeat(4)).unwrap();
        let v = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let out = window_attention(&q, &k, &v).unwrap();
        for c in 0..2 {
            let mean = (0..4).map(|r| v.data()[r * 2 + c]).sum::<f64>() / 4.0;
            for r in 0..4 {
                assert!((out.data()[r * 2 + c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blocks_are_independent() {
        let mut rng = Rng::new(9);
        let q = Tensor::randn(&[8, 3], 1.0, &mut rng);
        let k = Tensor::randn(&[8, 3], 1.0, &mut rng);
        let v = Tensor::randn(&[8, 3], 1.0, &mut rng);
        let out = BlockAttention::new(4).forward(&[&q, &k, &v]).unwrap();
        let half = |t: &Tensor, i: usize| Tensor::new(vec![4, 3], t.data()[i * 12..(i + 1) * 12].to_vec()).unwrap();
        for i in 0..2 {
            let single = window_attention(&half(&q, i), &half(&k, i), &half(&v, i)).unwrap();
            assert_eq!(single.data(), &out.data()[i * 12..(i + 1) * 12]);
        }
    }

    #[test]
    fn rejects_mismatched_width() {
        let a = Tensor::zeros(&[4, 2]);
        let b = Tensor::zeros(&[4, 3]);
        assert!(matches!(window_attention(&a, &b, &a), Err(Error::Shape { .. })));
    }
}
