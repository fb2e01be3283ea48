//! Window partitioning and the per-window affine transform.
//!
//! Coordinates: `x` is the column index, `y` the row index, and pixel
//! `(0, 0)` has its center at the origin. A window's corners are its outer
//! pixel edges, so the window starting at pixel `(x0, y0)` with side `s`
//! spans `[x0 − ½, x0 + s − ½] × [y0 − ½, y0 + s − ½]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{gap, leaky_relu, DifferentiableOp, Linear};
use crate::tensor::Tensor;

/// Number of values predicted per head per window:
/// `(Δs_x, Δs_y, o_x, o_y, θ)`.
pub const PARAMS_PER_HEAD: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub rows: usize,
    pub cols: usize,
    pub window_size: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl WindowGrid {
    pub fn new(channels: usize, height: usize, width: usize, window_size: usize) -> Result<Self> {
        if window_size == 0 || !height.is_multiple_of(window_size) || !width.is_multiple_of(window_size) {
            return Err(Error::shape(
                "partition_windows",
                &[channels, height, width],
                &[window_size, window_size],
            ));
        }
        Ok(Self {
            rows: height / window_size,
            cols: width / window_size,
            window_size,
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-left pixel `(x0, y0)` of window `w` (row-major window order).
    pub fn origin(&self, w: usize) -> (usize, usize) {
        ((w % self.cols) * self.window_size, (w / self.cols) * self.window_size)
    }

    pub fn corners(&self, w: usize) -> WindowCorners {
        let (x0, y0) = self.origin(w);
        WindowCorners::from_pixel_block(x0, y0, self.window_size)
    }

    /// Raster token indices (`y·W + x`) of window `w`, row-major inside the
    /// window.
    pub fn token_indices(&self, w: usize) -> Vec<usize> {
        let (x0, y0) = self.origin(w);
        let s = self.window_size;
        (0..s)
            .flat_map(|i| (0..s).map(move |j| (y0 + i) * self.width + x0 + j))
            .collect()
    }

    /// Raster token order of all windows concatenated, window-major.
    pub fn window_major_order(&self) -> Vec<usize> {
        (0..self.len()).flat_map(|w| self.token_indices(w)).collect()
    }

    /// Inverse of [`Self::window_major_order`].
    pub fn raster_order(&self) -> Vec<usize> {
        let order = self.window_major_order();
        let mut inv = vec![0; order.len()];
        for (pos, &tok) in order.iter().enumerate() {
            inv[tok] = pos;
        }
        inv
    }
}

pub fn partition_windows(x: &Tensor, s: usize) -> Result<(WindowGrid, Vec<Tensor>)> {
    let (c, h, w) = x.dims3("partition_windows")?;
    let grid = WindowGrid::new(c, h, w, s)?;
    let n = h * w;
    let windows = (0..grid.len())
        .map(|win| {
            let toks = grid.token_indices(win);
            let data = (0..c)
                .flat_map(|ch| toks.iter().map(move |&t| x.data()[ch * n + t]))
                .collect();
            Tensor::new(vec![c, s, s], data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, windows))
}

pub fn merge_windows(grid: &WindowGrid, windows: &[Tensor]) -> Result<Tensor> {
    let s = grid.window_size;
    if windows.len() != grid.len() {
        return Err(Error::shape("merge_windows", &[grid.len()], &[windows.len()]));
    }
    let n = grid.height * grid.width;
    let mut out = vec![0.0; grid.channels * n];
    for (win, t) in windows.iter().enumerate() {
        if t.shape() != [grid.channels, s, s] {
            return Err(Error::shape("merge_windows", &[grid.channels, s, s], t.shape()));
        }
        for (k, &tok) in grid.token_indices(win).iter().enumerate() {
            for ch in 0..grid.channels {
                out[ch * n + tok] = t.data()[ch * s * s + k];
            }
        }
    }
    Tensor::new(vec![grid.channels, grid.height, grid.width], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCorners {
    pub x_l: f64,
    pub y_l: f64,
    pub x_r: f64,
    pub y_r: f64,
}

impl WindowCorners {
    pub fn new(x_l: f64, y_l: f64, x_r: f64, y_r: f64) -> Self {
        Self { x_l, y_l, x_r, y_r }
    }

    pub fn from_pixel_block(x0: usize, y0: usize, s: usize) -> Self {
        Self {
            x_l: x0 as f64 - 0.5,
            y_l: y0 as f64 - 0.5,
            x_r: (x0 + s) as f64 - 0.5,
            y_r: (y0 + s) as f64 - 0.5,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_l + self.x_r) / 2.0, (self.y_l + self.y_r) / 2.0)
    }

    /// Corner-to-center residuals `((x_l^r, y_l^r), (x_r^r, y_r^r))`.
    pub fn residuals(&self) -> ((f64, f64), (f64, f64)) {
        let (xc, yc) = self.center();
        ((self.x_l - xc, self.y_l - yc), (self.x_r - xc, self.y_r - yc))
    }

    /// Residuals of the `s×s` cell centers of the window, row-major.
    pub fn lattice_residuals(&self, s: usize) -> Vec<(f64, f64)> {
        let (width, height) = (self.x_r - self.x_l, self.y_r - self.y_l);
        let (step_x, step_y) = (width / s as f64, height / s as f64);
        (0..s)
            .flat_map(|i| {
                (0..s).map(move |j| {
                    (
                        (j as f64 + 0.5) * step_x - width / 2.0,
                        (i as f64 + 0.5) * step_y - height / 2.0,
                    )
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub theta: f64,
}

impl WindowParams {
    pub const IDENTITY: Self = Self {
        scale_x: 1.0,
        scale_y: 1.0,
        offset_x: 0.0,
        offset_y: 0.0,
        theta: 0.0,
    };

    /// Interprets raw predictor outputs `(Δs_x, Δs_y, o_x, o_y, θ)`; the
    /// effective scale is `1 + Δs`.
    pub fn from_raw(raw: &[f64]) -> Self {
        Self {
            scale_x: 1.0 + raw[0],
            scale_y: 1.0 + raw[1],
            offset_x: raw[2],
            offset_y: raw[3],
            theta: raw[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.scale_x, self.scale_y, self.offset_x, self.offset_y, self.theta]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Window parameters for each head from the window feature `x_w[C×s×s]`:
/// `Linear(LeakyReLU(GAP(x_w)))` with `weight[C × 5·heads]`, `bias[5·heads]`.
pub fn predict_window_params(
    x_w: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    heads: usize,
    slope: f64,
) -> Result<Vec<WindowParams>> {
    let (c, _, _) = x_w.dims3("predict_window_params")?;
    let out = PARAMS_PER_HEAD * heads;
    if weight.shape() != [c, out] || bias.shape() != [out] {
        return Err(Error::shape("predict_window_params", weight.shape(), &[c, out]));
    }
    let pooled = gap(x_w)?.reshape(&[1, c])?;
    let act = leaky_relu(&pooled, slope)?;
    let raw = Linear.forward(&[&act, weight, bias])?;
    Ok(raw
        .data()
        .chunks_exact(PARAMS_PER_HEAD)
        .map(WindowParams::from_raw)
        .collect())
}

/// Affine map of one window: residual `r` goes to
/// `center + offset + R(θ)·(r ⊙ scale)` with
/// `R(θ) = [[cos θ, sin θ], [−sin θ, cos θ]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineWindowMap {
    pub center: (f64, f64),
    pub params: WindowParams,
}

impl AffineWindowMap {
    pub fn apply_residual(&self, rx: f64, ry: f64) -> (f64, f64) {
        let p = &self.params;
        let (sin, cos) = p.theta.sin_cos();
        let (ux, uy) = (rx * p.scale_x, ry * p.scale_y);
        (
            self.center.0 + p.offset_x + (cos * ux + sin * uy),
            self.center.1 + p.offset_y + (-sin * ux + cos * uy),
        )
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        self.apply_residual(x - self.center.0, y - self.center.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformedWindow {
    pub upper_left: (f64, f64),
    pub upper_right: (f64, f64),
    pub lower_right: (f64, f64),
    pub lower_left: (f64, f64),
    pub map: AffineWindowMap,
}

pub fn transform_window(corners: &WindowCorners, p: &WindowParams) -> TransformedWindow {
    let map = AffineWindowMap {
        center: corners.center(),
        params: *p,
    };
    let ((lx, ly), (rx, ry)) = corners.residuals();
    TransformedWindow {
        upper_left: map.apply_residual(lx, ly),
        upper_right: map.apply_residual(rx, ly),
        lower_right: map.apply_residual(rx, ry),
        lower_left: map.apply_residual(lx, ry),
        map,
    }
}

/// The `s×s` sample positions of a transformed window, row-major.
pub fn sample_points(corners: &WindowCorners, p: &WindowParams, s: usize) -> Vec<(f64, f64)> {
    let map = AffineWindowMap {
        center: corners.center(),
        params: *p,
    };
    corners
        .lattice_residuals(s)
        .into_iter()
        .map(|(rx, ry)| map.apply_residual(rx, ry))
        .collect()
}
