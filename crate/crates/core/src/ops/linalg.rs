use super::{expect_arity, DifferentiableOp};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c[m×n] = a[m×k] · b[k×n]`, accumulating each row in `p` order.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`.
pub(crate) fn mm_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`.
pub(crate) fn mm_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    MatMul.forward(&[a, b])
}

pub struct MatMul;

impl DifferentiableOp for MatMul {
    fn name(&self) -> &str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("matmul", inputs, 2)?;
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        Tensor::new(vec![m, n], mm(a.data(), b.data(), m, k, n))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k) = a.dims2("matmul")?;
        let (_, n) = b.dims2("matmul")?;
        let da = mm_bt(g.data(), b.data(), m, n, k);
        let db = mm_at(a.data(), g.data(), m, k, n);
        Ok(vec![Tensor::new(vec![m, k], da)?, Tensor::new(vec![k, n], db)?])
    }
}

pub struct Transpose;

fn transpose_data(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

impl DifferentiableOp for Transpose {
    fn name(&self) -> &str {
        "transpose"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("transpose", inputs, 1)?;
        let (m, n) = inputs[0].dims2("transpose")?;
        Tensor::new(vec![n, m], transpose_data(inputs[0].data(), m, n))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (m, n) = inputs[0].dims2("transpose")?;
        Ok(vec![Tensor::new(vec![m, n], transpose_data(g.data(), n, m))?])
    }
}

/// `x[m×k] · w[k×n] + b[n]`.
pub struct Linear;

impl DifferentiableOp for Linear {
    fn name(&self) -> &str {
        "linear"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("linear", inputs, 3)?;
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (m, k) = x.dims2("linear")?;
        let (k2, n) = w.dims2("linear")?;
        if k != k2 {
            return Err(Error::shape("linear", x.shape(), w.shape()));
        }
        if b.shape() != [n] {
            return Err(Error::shape("linear bias", w.shape(), b.shape()));
        }
        let mut y = mm(x.data(), w.data(), m, k, n);
        for row in y.chunks_exact_mut(n) {
            for (v, bias) in row.iter_mut().zip(b.data()) {
                *v += bias;
            }
        }
        Tensor::new(vec![m, n], y)
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (m, k) = x.dims2("linear")?;
        let (_, n) = w.dims2("linear")?;
        let dx = mm_bt(g.data(), w.data(), m, n, k);
        let dw = mm_at(x.data(), g.data(), m, k, n);
        let mut db = vec![0.0; n];
        for row in g.data().chunks_exact(n) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        Ok(vec![
            Tensor::new(vec![m, k], dx)?,
            Tensor::new(vec![k, n], dw)?,
            Tensor::new(vec![n], db)?,
        ])
    }
}

/// Elementwise sum of two equally shaped tensors.
pub struct Add;

impl DifferentiableOp for Add {
    fn name(&self) -> &str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("add", inputs, 2)?;
        let mut out = inputs[0].clone();
        out.add_assign(inputs[1])?;
        Ok(out)
    }

    fn vjp(&self, _inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![g.clone(), g.clone()])
    }
}

pub struct Scale(pub f64);

impl DifferentiableOp for Scale {
    fn name(&self) -> &str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("scale", inputs, 1)?;
        Ok(inputs[0].map(|v| self.0 * v))
    }

    fn vjp(&self, _inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![g.map(|v| self.0 * v)])
    }
}

/// Sum of one-element tensors, accumulated left to right.
pub struct SumScalars;

impl DifferentiableOp for SumScalars {
    fn name(&self) -> &str {
        "sum_scalars"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let mut total = 0.0;
        for t in inputs {
            if t.len() != 1 {
                return Err(Error::shape("sum_scalars", t.shape(), &[]));
            }
            total += t.item();
        }
        Ok(Tensor::scalar(total))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(inputs.iter().map(|t| Tensor::full(t.shape(), g.item())).collect())
    }
}

/// Column-wise concatenation of matrices with equal row counts.
pub struct ConcatColumns;

impl DifferentiableOp for ConcatColumns {
    fn name(&self) -> &str {
        "concat_columns"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
        let (m, _) = first.dims2("concat_columns")?;
        let mut widths = Vec::with_capacity(inputs.len());
        for t in inputs {
            let (mi, ni) = t.dims2("concat_columns")?;
            if mi != m {
                return Err(Error::shape("concat_columns", first.shape(), t.shape()));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (t, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        Tensor::new(vec![m, total], out)
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (m, total) = g.dims2("concat_columns")?;
        let mut start = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for t in inputs {
            let (_, w) = t.dims2("concat_columns")?;
            let mut d = Vec::with_capacity(m * w);
            for r in 0..m {
                d.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
            }
            grads.push(Tensor::new(vec![m, w], d)?);
            start += w;
        }
        Ok(grads)
    }
}

/// `out.flat[i] = input.flat[index[i]]`. Covers reshapes, permutations,
/// slicing and window extraction; the VJP scatter-adds.
pub struct Gather {
    shape: Vec<usize>,
    index: Vec<usize>,
}

impl Gather {
    pub fn new(shape: Vec<usize>, index: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape("gather", &shape, &[index.len()]));
        }
        Ok(Self { shape, index })
    }

    /// Columns `start..start+width` of a `rows × cols` matrix.
    pub fn columns(rows: usize, cols: usize, start: usize, width: usize) -> Result<Self> {
        if start + width > cols {
            return Err(Error::shape("gather columns", &[rows, cols], &[start, width]));
        }
        let index = (0..rows)
            .flat_map(|r| (start..start + width).map(move |c| r * cols + c))
            .collect();
        Self::new(vec![rows, width], index)
    }

    /// Selected rows of a `rows × cols` matrix, in the given order.
    pub fn rows(cols: usize, picks: &[usize]) -> Result<Self> {
        let index = picks
            .iter()
            .flat_map(|&r| (0..cols).map(move |c| r * cols + c))
            .collect();
        Self::new(vec![picks.len(), cols], index)
    }

    /// Channel-major `C×H×W` to token-major `(H·W)×C`.
    pub fn chw_to_tokens(c: usize, h: usize, w: usize) -> Self {
        let n = h * w;
        let index = (0..n).flat_map(|t| (0..c).map(move |ch| ch * n + t)).collect();
        Self {
            shape: vec![n, c],
            index,
        }
    }

    /// Token-major `(H·W)×C` to channel-major `C×H×W`.
    pub fn tokens_to_chw(c: usize, h: usize, w: usize) -> Self {
        let n = h * w;
        let index = (0..c).flat_map(|ch| (0..n).map(move |t| t * c + ch)).collect();
        Self {
            shape: vec![c, h, w],
            index,
        }
    }

    pub fn index(&self) -> &[usize] {
        &self.index
    }
}

impl DifferentiableOp for Gather {
    fn name(&self) -> &str {
        "gather"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("gather", inputs, 1)?;
        let x = inputs[0].data();
        if let Some(&bad) = self.index.iter().find(|&&i| i >= x.len()) {
            return Err(Error::shape("gather", inputs[0].shape(), &[bad]));
        }
        Tensor::new(self.shape.clone(), self.index.iter().map(|&i| x[i]).collect())
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let mut dx = Tensor::zeros(inputs[0].shape());
        let d = dx.data_mut();
        for (&i, v) in self.index.iter().zip(g.data()) {
            d[i] += v;
        }
        Ok(vec![dx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_product() {
        let i = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&i, &b).unwrap(), b);
    }

    #[test]
    fn row_times_column() {
        let a = t(&[1, 2], &[1.0, 2.0]);
        let b = t(&[2, 1], &[3.0, 4.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn random_matches_triple_loop() {
        let mut rng = Rng::new(3);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bitwise_repeatable() {
        let mut rng = Rng::new(11);
        let a = Tensor::randn(&[7, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let first = matmul(&a, &b).unwrap();
        for _ in 0..5 {
            let again = matmul(&a, &b).unwrap();
            assert!(first
                .data()
                .iter()
                .zip(again.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn layout_gathers_invert() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let tokens = Gather::chw_to_tokens(2, 3, 4).forward(&[&x]).unwrap();
        assert_eq!(tokens.shape(), &[12, 2]);
        assert_eq!(&tokens.data()[..4], &[0.0, 12.0, 1.0, 13.0]);
        let back = Gather::tokens_to_chw(2, 3, 4).forward(&[&tokens]).unwrap();
        assert_eq!(back, x);
    }
}
