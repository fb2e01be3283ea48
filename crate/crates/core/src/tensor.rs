//! Dense row-major `f64` arrays and the `TNSR1` dump format.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const TNSR1_MAGIC: &[u8] = b"TNSR1\n";

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} elements]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Config(format!("zero-sized dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| std * rng.normal())
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| rng.uniform(lo, hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            other => Err(Error::shape(op, other, &[0, 0])),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(Error::shape(op, other, &[0, 0, 0])),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of `self[i] * other[i]`, accumulated in index order.
    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the `TNSR1` encoding: magic, rank line, dims line, then
    /// little-endian `f64` payload in row-major order.
    pub fn write_tnsr1<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TNSR1_MAGIC)?;
        writeln!(w, "{}", self.shape.len())?;
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{}", dims.join(" "))?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_tnsr1_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + 8 * self.data.len());
        self.write_tnsr1(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses one `TNSR1` block from the front of `bytes`, returning the
    /// tensor and the number of bytes consumed. `base` is added to offsets
    /// reported in errors.
    pub fn parse_tnsr1(bytes: &[u8], base: usize) -> Result<(Tensor, usize)> {
        let fail = |offset: usize, msg: String| Error::Format {
            offset: base + offset,
            msg,
        };
        if !bytes.starts_with(TNSR1_MAGIC) {
            return Err(fail(0, "missing TNSR1 magic".into()));
        }
        let mut pos = TNSR1_MAGIC.len();
        let (rank_line, next) = read_line(bytes, pos).ok_or_else(|| fail(pos, "unterminated rank line".into()))?;
        let rank: usize = rank_line
            .trim()
            .parse()
            .map_err(|_| fail(pos, format!("invalid rank {rank_line:?}")))?;
        pos = next;
        let (dims_line, next) = read_line(bytes, pos).ok_or_else(|| fail(pos, "unterminated dims line".into()))?;
        let shape: Vec<usize> = dims_line
            .split_ascii_whitespace()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail(pos, format!("invalid dims {dims_line:?}")))?;
        if shape.len() != rank || shape.contains(&0) {
            return Err(fail(pos, format!("dims {shape:?} inconsistent with rank {rank}")));
        }
        pos = next;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fail(pos, "element count overflows".into()))?;
        let payload = numel
            .checked_mul(8)
            .filter(|&n| pos + n <= bytes.len())
            .ok_or_else(|| fail(pos, format!("payload truncated: need {numel} f64 values")))?;
        let data = bytes[pos..pos + payload]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Tensor { shape, data }, pos + payload))
    }

    pub fn read_tnsr1<R: Read>(mut r: R) -> Result<Tensor> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let (t, used) = Self::parse_tnsr1(&buf, 0)?;
        if used != buf.len() {
            return Err(Error::Format {
                offset: used,
                msg: "trailing bytes after tensor payload".into(),
            });
        }
        Ok(t)
    }
}

/// Returns the ASCII line starting at `pos` (without newline) and the
/// position just past the newline.
pub(crate) fn read_line(bytes: &[u8], pos: usize) -> Option<(&str, usize)> {
    let rest = bytes.get(pos..)?;
    let nl = rest.iter().position(|&b| b == b'\n')?;
    let line = std::str::from_utf8(&rest[..nl]).ok()?;
    Some((line, pos + nl + 1))
}
