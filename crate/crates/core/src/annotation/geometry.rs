//! Rotated boxes, binary masks and the box → mask → horizontal box chain.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on the boundary-inclusive containment test, absorbing the
/// rounding of `sin`/`cos` so that pixel centers lying exactly on an edge
/// (e.g. the corners of a 45° square with side `2√2`) are kept.
pub const CONTAINMENT_EPS: f64 = 1e-9;

/// Ignore value of semantic maps.
pub const IGNORE: u8 = 255;

/// Oriented rectangle in pixel coordinates (`x` column, `y` row, pixel
/// centers on integers). The box frame is related to the image by
/// `d = R(θ)·(u, v)` with `R(θ) = [[cos θ, sin θ], [−sin θ, cos θ]]`;
/// `w` runs along `u`, `h` along `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub class_id: u32,
}

/// Maps `theta` into `[−π/2, π/2)`; a rectangle is unchanged by a half
/// turn.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = (theta + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if t >= PI / 2.0 {
        t - PI
    } else {
        t
    }
}

impl RotatedBox {
    /// Validated box with `theta` normalized.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64, class_id: u32) -> Result<Self> {
        let b = Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
            class_id,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h, self.theta]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Label(format!("invalid rotated box {self:?}")));
        }
        if !(-PI / 2.0..PI / 2.0).contains(&self.theta) {
            return Err(Error::Label(format!("box angle {} outside [-pi/2, pi/2)", self.theta)));
        }
        Ok(())
    }

    /// Box-frame coordinates `(u, v)` of image point `(x, y)`.
    pub fn to_box_frame(&self, x: f64, y: f64) -> (f64, f64) {
        let (sin, cos) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (cos * dx - sin * dy, sin * dx + cos * dy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.to_box_frame(x, y);
        u.abs() <= self.w / 2.0 + CONTAINMENT_EPS && v.abs() <= self.h / 2.0 + CONTAINMENT_EPS
    }

    /// Corners in image coordinates, in box-frame order
    /// `(−,−), (+,−), (+,+), (−,+)`.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (sin, cos) = self.theta.sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .map(|(u, v)| (self.cx + cos * u + sin * v, self.cy - sin * u + cos * v))
    }
}

/// Row-major binary grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("mask", &[height, width], &[bits.len()]));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(x, y)`, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    /// Run lengths over the row-major scan, alternating unset/set and
    /// starting with an unset run (possibly of length 0).
    pub fn to_runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b != current {
                runs.push(len);
                current = b;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        runs
    }

    pub fn from_runs(height: usize, width: usize, runs: &[u32]) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        for (i, &r) in runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        if bits.len() != height * width {
            return Err(Error::Label(format!(
                "runs cover {} pixels, grid has {}",
                bits.len(),
                height * width
            )));
        }
        Ok(Self { height, width, bits })
    }
}

/// Inclusive pixel extent `(x_min, y_min, x_max, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl HBox {
    /// `(center_x, center_y, width, height)` in pixels, with sides counted
    /// inclusively.
    pub fn center_size(&self) -> (f64, f64, f64, f64) {
        (
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
            (self.x_max - self.x_min + 1) as f64,
            (self.y_max - self.y_min + 1) as f64,
        )
    }
}

/// Pixels whose centers lie inside or on the box.
pub fn rasterize_rbox(b: &RotatedBox, height: usize, width: usize) -> Mask {
    let mut m = Mask::new(height, width);
    if height == 0 || width == 0 {
        return m;
    }
    // Only scan the box's axis-aligned footprint.
    let corners = b.corners();
    let lo = |f: fn(&(f64, f64)) -> f64| corners.iter().map(f).fold(f64::INFINITY, f64::min);
    let hi = |f: fn(&(f64, f64)) -> f64| corners.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let clamp = |v: f64, n: usize| v.max(0.0).min((n - 1) as f64) as usize;
    let (x0, x1) = (lo(|c| c.0).floor() - 1.0, hi(|c| c.0).ceil() + 1.0);
    let (y0, y1) = (lo(|c| c.1).floor() - 1.0, hi(|c| c.1).ceil() + 1.0);
    if x1 < 0.0 || y1 < 0.0 || x0 > (width - 1) as f64 || y0 > (height - 1) as f64 {
        return m;
    }
    for y in clamp(y0, height)..=clamp(y1, height) {
        for x in clamp(x0, width)..=clamp(x1, width) {
            if b.contains(x as f64, y as f64) {
                m.set(x, y, true);
            }
        }
    }
    m
}

pub fn min_hbox(mask: &Mask) -> Result<HBox> {
    let mut it = mask.pixels();
    let (x, y) = it.next().ok_or(Error::EmptyAnnotation)?;
    let mut hb = HBox {
        x_min: x as u32,
        y_min: y as u32,
        x_max: x as u32,
        y_max: y as u32,
    };
    for (x, y) in it {
        let (x, y) = (x as u32, y as u32);
        hb.x_min = hb.x_min.min(x);
        hb.x_max = hb.x_max.max(x);
        hb.y_min = hb.y_min.min(y);
        hb.y_max = hb.y_max.max(y);
    }
    Ok(hb)
}

/// Row-major class map; [`IGNORE`] marks background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl SemanticMap {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Paints masks in list order onto an all-ignore map; later entries win
/// where masks overlap.
pub fn compose_semantic(masks: &[(&Mask, u32)], height: usize, width: usize) -> Result<SemanticMap> {
    let mut data = vec![IGNORE; height * width];
    for (m, class) in masks {
        if m.height() != height || m.width() != width {
            return Err(Error::shape(
                "compose_semantic",
                &[height, width],
                &[m.height(), m.width()],
            ));
        }
        if *class >= IGNORE as u32 {
            return Err(Error::Label(format!("class {class} collides with the ignore value")));
        }
        for (d, &b) in data.iter_mut().zip(m.bits()) {
            if b {
                *d = *class as u8;
            }
        }
    }
    Ok(SemanticMap { height, width, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn set(m: &Mask) -> Vec<(usize, usize)> {
        m.pixels().collect()
    }

    #[test]
    fn axis_aligned_box() {
        let b = RotatedBox::new(2.0, 2.0, 3.0, 1.0, 0.0, 0).unwrap();
        assert_eq!(set(&rasterize_rbox(&b, 5, 5)), vec![(1, 2), (2, 2), (3, 2)]);
    }

    #[test]
    fn quarter_turn_swaps_footprint() {
        let b = RotatedBox::new(2.0, 2.0, 3.0, 1.0, FRAC_PI_2, 0).unwrap();
        let mut got = set(&rasterize_rbox(&b, 5, 5));
        got.sort();
        assert_eq!(got, vec![(2, 1), (2, 2), (2, 3)]);
    }

    #[test]
    fn diagonal_square_is_a_diamond() {
        let b = RotatedBox::new(3.0, 3.0, 2.0 * SQRT_2, 2.0 * SQRT_2, FRAC_PI_4, 0).unwrap();
        let m = rasterize_rbox(&b, 7, 7);
        for y in 0..7i64 {
            for x in 0..7i64 {
                assert_eq!(
                    m.get(x as usize, y as usize),
                    (x - 3).abs() + (y - 3).abs() <= 2,
                    "({x},{y})"
                );
            }
        }
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle(FRAC_PI_2), -FRAC_PI_2);
        assert_eq!(normalize_angle(0.25), 0.25);
        assert!((normalize_angle(PI + 0.25) - 0.25).abs() < 1e-15);
        assert!((-FRAC_PI_2..FRAC_PI_2).contains(&normalize_angle(-FRAC_PI_2 - 1e-3)));
    }

    #[test]
    fn hbox_examples() {
        let b = RotatedBox::new(2.0, 2.0, 3.0, 1.0, 0.0, 0).unwrap();
        let hb = min_hbox(&rasterize_rbox(&b, 5, 5)).unwrap();
        assert_eq!((hb.x_min, hb.y_min, hb.x_max, hb.y_max), (1, 2, 3, 2));
        let mut m = Mask::new(8, 8);
        m.set(4, 5, true);
        let hb = min_hbox(&m).unwrap();
        assert_eq!((hb.x_min, hb.y_min, hb.x_max, hb.y_max), (4, 5, 4, 5));
        assert!(matches!(min_hbox(&Mask::new(3, 3)), Err(Error::EmptyAnnotation)));
    }

    #[test]
    fn semantic_overwrite_order() {
        assert!(compose_semantic(&[], 2, 2).unwrap().data.iter().all(|&v| v == IGNORE));
        let mut a = Mask::new(1, 3);
        a.set(0, 0, true);
        a.set(1, 0, true);
        let mut b = Mask::new(1, 3);
        b.set(1, 0, true);
        b.set(2, 0, true);
        let s = compose_semantic(&[(&a, 1), (&b, 2)], 1, 3).unwrap();
        assert_eq!(s.data, vec![1, 2, 2]);
        assert!(compose_semantic(&[(&a, 255)], 1, 3).is_err());
    }

    #[test]
    fn runs_round_trip() {
        let m = Mask::from_bits(2, 3, vec![true, true, false, false, true, true]).unwrap();
        assert_eq!(m.to_runs(), vec![0, 2, 2, 2]);
        assert_eq!(Mask::from_runs(2, 3, &m.to_runs()).unwrap(), m);
        assert!(Mask::from_runs(2, 3, &[1, 2]).is_err());
    }
}
