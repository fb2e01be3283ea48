//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use mtp_core::annotation::{min_hbox, rasterize_rbox, Mask, RotatedBox, CONTAINMENT_EPS};
use mtp_core::rvsa::{
    init_layer, rvsa_layer, sample_window, window_layer, AttentionKind, LayerKind, LayerSpec, RvsaConfig,
    WindowCorners, WindowParams,
};
use mtp_core::{Rng, Tensor};
use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive};

pub fn small_spec() -> LayerSpec {
    LayerSpec {
        dim: 8,
        heads: 2,
        window_size: 2,
        height: 4,
        width: 4,
        mlp_hidden: 32,
        slope: 0.01,
        kind: AttentionKind::Rvsa,
    }
}

/// Bilinear interpolation as a sum of tent weights over every pixel.
pub fn tent_oracle(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let wx = (1.0 - (x - j as f64).abs()).max(0.0);
            let wy = (1.0 - (y - i as f64).abs()).max(0.0);
            acc += wx * wy * plane[i * w + j];
        }
    }
    acc
}

/// Largest deviation of `sample_window` from the tent oracle over
/// `cases` random windows, transforms and feature maps.
pub fn sample_window_worst(seed: u64, cases: usize) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = rng.int_inclusive(1, 3);
        let h = rng.int_inclusive(2, 12);
        let w = rng.int_inclusive(2, 12);
        let s = rng.int_inclusive(1, h.min(w));
        let x0 = rng.int_inclusive(0, w - s);
        let y0 = rng.int_inclusive(0, h - s);
        let feat = Tensor::randn(&[c, h, w], 1.0, &mut rng);
        let p = WindowParams {
            scale_x: rng.uniform(0.3, 2.0),
            scale_y: rng.uniform(0.3, 2.0),
            offset_x: rng.uniform(-3.0, 3.0),
            offset_y: rng.uniform(-3.0, 3.0),
            theta: rng.uniform(-3.2, 3.2),
        };
        let got = sample_window(&feat, &WindowCorners::from_pixel_block(x0, y0, s), &p, s).unwrap();

        let (xc, yc) = (x0 as f64 + s as f64 / 2.0 - 0.5, y0 as f64 + s as f64 / 2.0 - 0.5);
        for i in 0..s {
            for j in 0..s {
                let rx = j as f64 + 0.5 - s as f64 / 2.0;
                let ry = i as f64 + 0.5 - s as f64 / 2.0;
                let (ux, uy) = (rx * p.scale_x, ry * p.scale_y);
                let x = xc + p.offset_x + p.theta.cos() * ux + p.theta.sin() * uy;
                let y = yc + p.offset_y - p.theta.sin() * ux + p.theta.cos() * uy;
                for ch in 0..c {
                    let want = tent_oracle(&feat.data()[ch * h * w..(ch + 1) * h * w], h, w, x, y);
                    worst = worst.max((got.data()[ch * s * s + i * s + j] - want).abs());
                }
            }
        }
    }
    worst
}

/// Point-in-convex-polygon via edge cross products against the box
/// corners, with the same boundary slack measured along the edge normal.
pub fn polygon_contains(b: &RotatedBox, x: f64, y: f64) -> bool {
    let c = b.corners();
    (0..4).all(|k| {
        let (ax, ay) = c[k];
        let (bx, by) = c[(k + 1) % 4];
        let (ex, ey) = (bx - ax, by - ay);
        let len = (ex * ex + ey * ey).sqrt();
        let cross = ex * (y - ay) - ey * (x - ax);
        // Corners run clockwise on screen (y down) for the box-frame order.
        cross / len >= -CONTAINMENT_EPS
    })
}

pub fn random_box(rng: &mut Rng, side: usize) -> RotatedBox {
    RotatedBox::new(
        rng.uniform(-4.0, side as f64 + 4.0),
        rng.uniform(-4.0, side as f64 + 4.0),
        rng.uniform(0.5, side as f64 / 2.0),
        rng.uniform(0.5, side as f64 / 2.0),
        rng.uniform(-PI, PI),
        0,
    )
    .unwrap()
}

/// Pixels where `rasterize_rbox` disagrees with the polygon oracle, over
/// `cases` random boxes on random square grids.
pub fn rasterize_mismatches(seed: u64, cases: usize) -> Vec<String> {
    let mut rng = Rng::new(seed);
    let mut bad = Vec::new();
    for trial in 0..cases {
        let side = rng.int_inclusive(1, 64);
        let b = random_box(&mut rng, side);
        let m = rasterize_rbox(&b, side, side);
        for y in 0..side {
            for x in 0..side {
                if m.get(x, y) != polygon_contains(&b, x as f64, y as f64) {
                    bad.push(format!("trial {trial} {b:?} ({x},{y})"));
                }
            }
        }
    }
    bad
}

/// Inclusive extent of the set pixels by scanning every pixel.
pub fn full_scan_extent(m: &Mask) -> Option<(u32, u32, u32, u32)> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                x0 = x0.min(x as u32);
                y0 = y0.min(y as u32);
                x1 = x1.max(x as u32);
                y1 = y1.max(y as u32);
            }
        }
    }
    (x0 != u32::MAX).then_some((x0, y0, x1, y1))
}

/// Random masks on which `min_hbox` disagrees with the full scan.
pub fn min_hbox_mismatches(seed: u64, cases: usize) -> usize {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let density = rng.uniform(0.001, 0.2);
        let bits: Vec<bool> = (0..64 * 64).map(|_| rng.unit() < density).collect();
        let m = Mask::from_bits(64, 64, bits).unwrap();
        let got = min_hbox(&m).ok().map(|h| (h.x_min, h.y_min, h.x_max, h.y_max));
        if got != full_scan_extent(&m) {
            bad += 1;
        }
    }
    bad
}

/// Trials where a zero-predictor RVSA layer differs in any bit from plain
/// window attention with the same weights.
pub fn identity_mismatches(trials: u64) -> usize {
    let spec = small_spec();
    (0..trials)
        .filter(|&trial| {
            let mut rng = Rng::derive(99, trial);
            let params = init_layer("layer01", &spec, &mut rng);
            let x = Tensor::randn(&[8, 4, 4], 1.0, &mut rng);
            let a = rvsa_layer(&x, &params, "layer01", &spec).unwrap();
            let b = window_layer(&x, &params, "layer01", &spec).unwrap();
            a.data().iter().zip(b.data()).any(|(u, v)| u.to_bits() != v.to_bits())
        })
        .count()
}

/// Deviations of the two presets from their published layer placement.
pub fn placement_errors() -> Vec<String> {
    let mut bad = Vec::new();
    let cases = [
        (RvsaConfig::vitb_rvsa(), "vitb-rvsa", 12, [3, 6, 9, 12], [4, 6, 8, 12]),
        (
            RvsaConfig::vitl_rvsa(),
            "vitl-rvsa",
            24,
            [6, 12, 18, 24],
            [8, 12, 16, 24],
        ),
    ];
    for (cfg, name, depth, full, taps) in cases {
        if cfg.depth != depth {
            bad.push(format!("{name}: depth {}", cfg.depth));
        }
        for l in 1..=depth {
            if (cfg.layer_kind(l) == LayerKind::FullAttention) != full.contains(&l) {
                bad.push(format!("{name}: attention kind at layer {l}"));
            }
            if cfg.pyramid_layers.contains(&l) != taps.contains(&l) {
                bad.push(format!("{name}: pyramid tap at layer {l}"));
            }
        }
    }
    bad
}

/// `rate^n` computed exactly in rationals, then rounded once to f64.
pub fn exact_power(rate: f64, n: usize) -> f64 {
    let r = BigRational::from_f64(rate).unwrap();
    let mut acc = BigRational::from_integer(1.into());
    for _ in 0..n {
        acc *= &r;
    }
    acc.to_f64().unwrap()
}
