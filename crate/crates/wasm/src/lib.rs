//! Browser bindings for three interactive views: where a transformed
//! window samples, how a rotated box rasterizes, and the learning-rate
//! schedule. The plain functions are usable natively; the exported
//! wrappers flatten results into `Float64Array`/`Uint8Array` for JS.

use mtp_core::annotation::{min_hbox, rasterize_rbox, RotatedBox};
use mtp_core::mtp::{layer_lr_scale, lr_at, OptimConfig};
use mtp_core::rvsa::{sample_points, transform_window, WindowCorners, WindowParams};
use wasm_bindgen::prelude::*;

/// Corners (upper-left, upper-right, lower-right, lower-left) followed by
/// the `s×s` sample points, as interleaved `x, y` pairs.
pub fn window_geometry(x0: usize, y0: usize, s: usize, p: WindowParams) -> Result<Vec<f64>, String> {
    if s == 0 {
        return Err("window size must be positive".into());
    }
    if !p.is_finite() {
        return Err("window parameters must be finite".into());
    }
    let corners = WindowCorners::from_pixel_block(x0, y0, s);
    let t = transform_window(&corners, &p);
    let quad = [t.upper_left, t.upper_right, t.lower_right, t.lower_left];
    Ok(quad
        .into_iter()
        .chain(sample_points(&corners, &p, s))
        .flat_map(|(x, y)| [x, y])
        .collect())
}

/// Row-major 0/1 mask of a rotated box plus its tight pixel box, if any.
pub fn rasterize(b: &RotatedBox, height: usize, width: usize) -> (Vec<u8>, Option<[u32; 4]>) {
    let mask = rasterize_rbox(b, height, width);
    let hbox = min_hbox(&mask).ok().map(|h| [h.x_min, h.y_min, h.x_max, h.y_max]);
    (mask.bits().iter().map(|&on| on as u8).collect(), hbox)
}

/// Learning rate at `points` evenly spaced iterations from 0 to `total_iters`.
pub fn lr_curve(cfg: &OptimConfig, points: usize) -> Result<Vec<f64>, String> {
    cfg.validate().map_err(|e| e.to_string())?;
    if points < 2 {
        return Err("need at least two points".into());
    }
    (0..points)
        .map(|i| lr_at(i * cfg.total_iters / (points - 1), cfg).map_err(|e| e.to_string()))
        .collect()
}

/// Multiplier for layer indices `1..=depth + 1`; the last entry is the heads.
pub fn layer_scales(depth: usize, rate: f64) -> Result<Vec<f64>, String> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(format!("layer decay {rate} outside (0, 1]"));
    }
    (1..=depth + 1)
        .map(|l| layer_lr_scale(l, depth, rate).map_err(|e| e.to_string()))
        .collect()
}

#[wasm_bindgen(js_name = windowGeometry)]
#[allow(clippy::too_many_arguments)]
pub fn window_geometry_js(
    x0: usize,
    y0: usize,
    s: usize,
    scale_x: f64,
    scale_y: f64,
    offset_x: f64,
    offset_y: f64,
    theta: f64,
) -> Result<Vec<f64>, JsError> {
    let p = WindowParams {
        scale_x,
        scale_y,
        offset_x,
        offset_y,
        theta,
    };
    window_geometry(x0, y0, s, p).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Raster {
    mask: Vec<u8>,
    hbox: Option<[u32; 4]>,
}

#[wasm_bindgen]
impl Raster {
    pub fn mask(&self) -> Vec<u8> {
        self.mask.clone()
    }

    /// `[x_min, y_min, x_max, y_max]`, empty when no pixel is covered.
    pub fn hbox(&self) -> Vec<u32> {
        self.hbox.map(Vec::from).unwrap_or_default()
    }
}

#[wasm_bindgen(js_name = rasterizeBox)]
#[allow(clippy::too_many_arguments)]
pub fn rasterize_box_js(
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
    height: usize,
    width: usize,
) -> Result<Raster, JsError> {
    let b = RotatedBox::new(cx, cy, w, h, theta, 0).map_err(|e| JsError::new(&e.to_string()))?;
    let (mask, hbox) = rasterize(&b, height, width);
    Ok(Raster { mask, hbox })
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn lr_curve_js(
    base_lr: f64,
    warmup_iters: usize,
    warmup_init_lr: f64,
    total_iters: usize,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    let cfg = OptimConfig {
        base_lr,
        warmup_iters,
        warmup_init_lr,
        total_iters,
        ..OptimConfig::default()
    };
    lr_curve(&cfg, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = layerScales)]
pub fn layer_scales_js(depth: usize, rate: f64) -> Result<Vec<f64>, JsError> {
    layer_scales(depth, rate).map_err(|e| JsError::new(&e))
}
