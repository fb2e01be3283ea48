//! Bilinear resampling of key/value windows at transformed positions.

use super::window::{sample_points, AffineWindowMap, WindowCorners, WindowParams, PARAMS_PER_HEAD};
use crate::error::{Error, Result};
use crate::ops::{expect_arity, DifferentiableOp};
use crate::tensor::Tensor;

/// Corner taps of a bilinear read at `(x, y)`: `(x index, y index, weight)`
/// in the order (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1).
fn taps(x: f64, y: f64) -> ([(i64, i64, f64); 4], f64, f64) {
    let (xf, yf) = (x.floor(), y.floor());
    let (fx, fy) = (x - xf, y - yf);
    let (ix, iy) = (xf as i64, yf as i64);
    (
        [
            (ix, iy, (1.0 - fx) * (1.0 - fy)),
            (ix + 1, iy, fx * (1.0 - fy)),
            (ix, iy + 1, (1.0 - fx) * fy),
            (ix + 1, iy + 1, fx * fy),
        ],
        fx,
        fy,
    )
}

fn in_bounds(ix: i64, iy: i64, h: usize, w: usize) -> Option<usize> {
    (ix >= 0 && iy >= 0 && (ix as usize) < w && (iy as usize) < h).then(|| iy as usize * w + ix as usize)
}

/// Bilinear read of one channel plane; reads outside the map return zero.
pub fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (t, _, _) = taps(x, y);
    let mut acc = 0.0;
    for (ix, iy, wt) in t {
        if let Some(i) = in_bounds(ix, iy, h, w) {
            acc += wt * plane[i];
        }
    }
    acc
}

/// Samples `windows.len()` transformed windows from a channel-major
/// feature map.
///
/// Inputs: `feature[C′×H×W]` and raw parameters `params[n × 5]` laid out
/// as `(Δs_x, Δs_y, o_x, o_y, θ)` per window. Output `[n·s² × C′]`,
/// window-major, row-major inside each window.
pub struct WindowSampler {
    s: usize,
    windows: Vec<WindowCorners>,
}

impl WindowSampler {
    pub fn new(s: usize, windows: Vec<WindowCorners>) -> Self {
        Self { s, windows }
    }

    fn check(&self, inputs: &[&Tensor]) -> Result<(usize, usize, usize)> {
        expect_arity("sample_window", inputs, 2)?;
        let (c, h, w) = inputs[0].dims3("sample_window")?;
        if inputs[1].shape() != [self.windows.len(), PARAMS_PER_HEAD] {
            return Err(Error::shape(
                "sample_window",
                inputs[1].shape(),
                &[self.windows.len(), PARAMS_PER_HEAD],
            ));
        }
        Ok((c, h, w))
    }
}

impl DifferentiableOp for WindowSampler {
    fn name(&self) -> &str {
        "sample_window"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (c, h, w) = self.check(inputs)?;
        let feat = inputs[0].data();
        let plane = h * w;
        let s2 = self.s * self.s;
        let mut out = Vec::with_capacity(self.windows.len() * s2 * c);
        for (corners, raw) in self.windows.iter().zip(inputs[1].data().chunks_exact(PARAMS_PER_HEAD)) {
            let p = WindowParams::from_raw(raw);
            for (x, y) in sample_points(corners, &p, self.s) {
                for ch in 0..c {
                    out.push(bilinear(&feat[ch * plane..(ch + 1) * plane], h, w, x, y));
                }
            }
        }
        Tensor::new(vec![self.windows.len() * s2, c], out)
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (c, h, w) = self.check(inputs)?;
        let feat = inputs[0].data();
        let plane = h * w;
        let mut dfeat = vec![0.0; c * plane];
        let mut dparams = vec![0.0; self.windows.len() * PARAMS_PER_HEAD];
        let mut row = 0;
        for (wi, (corners, raw)) in self
            .windows
            .iter()
            .zip(inputs[1].data().chunks_exact(PARAMS_PER_HEAD))
            .enumerate()
        {
            let p = WindowParams::from_raw(raw);
            let map = AffineWindowMap {
                center: corners.center(),
                params: p,
            };
            let (sin, cos) = p.theta.sin_cos();
            let dp = &mut dparams[wi * PARAMS_PER_HEAD..(wi + 1) * PARAMS_PER_HEAD];
            for (rx, ry) in corners.lattice_residuals(self.s) {
                let (x, y) = map.apply_residual(rx, ry);
                let (t, fx, fy) = taps(x, y);
                let val = |k: usize, ch: usize| -> f64 {
                    let (ix, iy, _) = t[k];
                    in_bounds(ix, iy, h, w).map_or(0.0, |i| feat[ch * plane + i])
                };
                let grow = &g.data()[row * c..(row + 1) * c];
                let (mut gx, mut gy) = (0.0, 0.0);
                for (ch, &gv) in grow.iter().enumerate() {
                    for &(ix, iy, wt) in &t {
                        if let Some(i) = in_bounds(ix, iy, h, w) {
                            dfeat[ch * plane + i] += gv * wt;
                        }
                    }
                    let (v00, v10, v01, v11) = (val(0, ch), val(1, ch), val(2, ch), val(3, ch));
                    gx += gv * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
                    gy += gv * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
                }
                let (ux, uy) = (rx * p.scale_x, ry * p.scale_y);
                dp[0] += gx * cos * rx - gy * sin * rx;
                dp[1] += gx * sin * ry + gy * cos * ry;
                dp[2] += gx;
                dp[3] += gy;
                dp[4] += gx * (-sin * ux + cos * uy) + gy * (-cos * ux - sin * uy);
                row += 1;
            }
        }
        Ok(vec![
            Tensor::new(inputs[0].shape().to_vec(), dfeat)?,
            Tensor::new(inputs[1].shape().to_vec(), dparams)?,
        ])
    }
}

/// Samples one transformed window of side `s` from `feature[C′×H×W]`,
/// returning `C′×s×s`.
pub fn sample_window(feature: &Tensor, corners: &WindowCorners, p: &WindowParams, s: usize) -> Result<Tensor> {
    if s == 0 {
        return Err(Error::Config("window size must be at least 1".into()));
    }
    let (c, _, _) = feature.dims3("sample_window")?;
    let raw = Tensor::new(
        vec![1, PARAMS_PER_HEAD],
        vec![p.scale_x - 1.0, p.scale_y - 1.0, p.offset_x, p.offset_y, p.theta],
    )?;
    let tokens = WindowSampler::new(s, vec![*corners]).forward(&[feature, &raw])?;
    let s2 = s * s;
    let data = (0..c)
        .flat_map(|ch| (0..s2).map(move |k| (ch, k)))
        .map(|(ch, k)| tokens.data()[k * c + ch]);
    Tensor::new(vec![c, s, s], data.collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_reads_lattice_exactly() {
        let mut rng = Rng::new(12);
        let f = Tensor::randn(&[2, 8, 8], 1.0, &mut rng);
        let corners = WindowCorners::from_pixel_block(4, 0, 4);
        let got = sample_window(&f, &corners, &WindowParams::IDENTITY, 4).unwrap();
        for ch in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let e = f.data()[ch * 64 + i * 8 + 4 + j];
                    assert_eq!(got.data()[ch * 16 + i * 4 + j].to_bits(), e.to_bits());
                }
            }
        }
    }

    #[test]
    fn constants_are_preserved_in_bounds() {
        let f = Tensor::full(&[1, 16, 16], 2.75);
        let corners = WindowCorners::from_pixel_block(4, 4, 4);
        let p = WindowParams {
            scale_x: 1.3,
            scale_y: 0.7,
            offset_x: 0.4,
            offset_y: -0.9,
            theta: 0.6,
        };
        let got = sample_window(&f, &corners, &p, 4).unwrap();
        assert!(got.data().iter().all(|v| (v - 2.75).abs() < 1e-14));
    }

    #[test]
    fn far_outside_reads_zero() {
        let f = Tensor::full(&[1, 4, 4], 1.0);
        let corners = WindowCorners::from_pixel_block(0, 0, 2);
        let p = WindowParams {
            offset_x: 100.0,
            ..WindowParams::IDENTITY
        };
        let got = sample_window(&f, &corners, &p, 2).unwrap();
        assert!(got.data().iter().all(|&v| v == 0.0));
    }
}
