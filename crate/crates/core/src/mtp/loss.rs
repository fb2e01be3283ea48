//! The four loss families and their aggregation over three streams.
//!
//! Detection-style terms (rotated boxes and horizontal boxes) share one
//! scheme: the cell containing a box center is positive, ties go to the
//! earlier box. The term is
//! `BCE(objectness, positive) + CE(class | positives) + smoothL1(box | positives)`,
//! each a mean (BCE over all cells, CE over positive cells, smooth-L1 over
//! all regressed values of positive cells); the last two are 0 without
//! positives. Box targets relative to the positive cell are
//! `((cx − x_c)/stride, (cy − y_c)/stride, ln(w/stride), ln(h/stride)[, θ])`.

use serde::{Deserialize, Serialize};

use super::heads::{CellGrid, STREAMS};
use crate::annotation::{InstanceAnnotation, RotatedBox, SemanticMap, IGNORE};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{BceWithLogits, SmoothL1, SoftmaxCrossEntropy, UpsampleBilinear};

/// Mean per-pixel cross-entropy of `logits[(H·W) × K]` over non-ignore
/// pixels.
pub fn loss_semantic(g: &mut Graph, logits: Var, sem: &SemanticMap) -> Result<Var> {
    let targets = sem.data.iter().map(|&v| (v != IGNORE).then_some(v as usize)).collect();
    g.apply(SoftmaxCrossEntropy::new(targets), &[logits])
}

/// Positive cell owner per cell; the earliest box wins a shared cell.
pub fn assign_cells(centers: &[(f64, f64)], grid: &CellGrid) -> Result<Vec<Option<usize>>> {
    let mut owners = vec![None; grid.cells()];
    for (i, &(x, y)) in centers.iter().enumerate() {
        let cell = grid.cell_of(x, y)?;
        owners[cell].get_or_insert(i);
    }
    Ok(owners)
}

struct Positive {
    cell: usize,
    class: usize,
    regression: Vec<f64>,
}

fn detection_loss(
    g: &mut Graph,
    out: Var,
    classes: usize,
    reg_width: usize,
    cells: usize,
    positives: &[Positive],
) -> Result<Var> {
    let (rows, cols) = g.value(out).dims2("detection_loss")?;
    if rows != cells || cols < 1 + classes + reg_width {
        return Err(Error::shape(
            "detection_loss",
            g.value(out).shape(),
            &[cells, 1 + classes + reg_width],
        ));
    }
    let mut obj_t = vec![0.0; cells];
    for p in positives {
        obj_t[p.cell] = 1.0;
    }
    let obj = g.columns(out, 0, 1)?;
    let l_obj = g.apply(BceWithLogits::new(obj_t), &[obj])?;
    if positives.is_empty() {
        return Ok(l_obj);
    }
    let picks: Vec<usize> = positives.iter().map(|p| p.cell).collect();
    let cls = g.columns(out, 1, classes)?;
    let cls = g.rows(cls, &picks)?;
    let l_cls = g.apply(
        SoftmaxCrossEntropy::new(positives.iter().map(|p| Some(p.class)).collect()),
        &[cls],
    )?;
    let reg = g.columns(out, 1 + classes, reg_width)?;
    let reg = g.rows(reg, &picks)?;
    let targets = positives.iter().flat_map(|p| p.regression.iter().copied()).collect();
    let l_reg = g.apply(SmoothL1::new(targets), &[reg])?;
    g.sum_scalars(&[l_obj, l_cls, l_reg])
}

fn check_class(class: u32, classes: usize) -> Result<usize> {
    let c = class as usize;
    if c >= classes {
        return Err(Error::Label(format!("class id {c} >= class count {classes}")));
    }
    Ok(c)
}

fn relative(grid: &CellGrid, cell: usize, cx: f64, cy: f64, w: f64, h: f64) -> Vec<f64> {
    let (xc, yc) = grid.center(cell);
    let s = grid.stride as f64;
    vec![(cx - xc) / s, (cy - yc) / s, (w / s).ln(), (h / s).ln()]
}

/// Rotated-box term on `out[cells × (K + 6)]`.
pub fn loss_rotated(g: &mut Graph, out: Var, rboxes: &[RotatedBox], grid: &CellGrid, classes: usize) -> Result<Var> {
    let centers: Vec<_> = rboxes.iter().map(|b| (b.cx, b.cy)).collect();
    let owners = assign_cells(&centers, grid)?;
    let mut positives = Vec::new();
    for (cell, owner) in owners.iter().enumerate() {
        if let Some(i) = *owner {
            let b = &rboxes[i];
            let mut regression = relative(grid, cell, b.cx, b.cy, b.w, b.h);
            regression.push(b.theta);
            positives.push(Positive {
                cell,
                class: check_class(b.class_id, classes)?,
                regression,
            });
        }
    }
    for b in rboxes {
        check_class(b.class_id, classes)?;
    }
    detection_loss(g, out, classes, 5, grid.cells(), &positives)
}

/// Horizontal-box and foreground-mask terms on `out[cells × (K + 6)]`.
/// The mask term is the mean BCE between the last column, upsampled to
/// pixels, and the union of instance masks.
pub fn loss_instance(
    g: &mut Graph,
    out: Var,
    instances: &[InstanceAnnotation],
    grid: &CellGrid,
    classes: usize,
) -> Result<(Var, Var)> {
    let boxes: Vec<_> = instances.iter().map(|i| i.hbox.center_size()).collect();
    let centers: Vec<_> = boxes.iter().map(|&(x, y, _, _)| (x, y)).collect();
    let owners = assign_cells(&centers, grid)?;
    let mut positives = Vec::new();
    for (cell, owner) in owners.iter().enumerate() {
        if let Some(i) = *owner {
            let (cx, cy, w, h) = boxes[i];
            positives.push(Positive {
                cell,
                class: check_class(instances[i].class_id, classes)?,
                regression: relative(grid, cell, cx, cy, w, h),
            });
        }
    }
    for inst in instances {
        check_class(inst.class_id, classes)?;
    }
    let l_box = detection_loss(g, out, classes, 4, grid.cells(), &positives)?;

    let px = grid.pixels_per_side();
    let mut union = vec![0.0; px * px];
    for inst in instances {
        if inst.mask.height() != px || inst.mask.width() != px {
            return Err(Error::shape(
                "loss_instance",
                &[px, px],
                &[inst.mask.height(), inst.mask.width()],
            ));
        }
        for (u, &b) in union.iter_mut().zip(inst.mask.bits()) {
            if b {
                *u = 1.0;
            }
        }
    }
    let fg = g.columns(out, classes + 5, 1)?;
    let fg = g.apply(UpsampleBilinear::new((grid.side, grid.side), (px, px)), &[fg])?;
    let l_mask = g.apply(BceWithLogits::new(union), &[fg])?;
    Ok((l_box, l_mask))
}

/// The four terms of one stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamLosses {
    pub l_rod: f64,
    pub l_ins_b: f64,
    pub l_ins_m: f64,
    pub l_sem: f64,
}

impl StreamLosses {
    /// Terms in aggregation order.
    pub fn terms(&self) -> [f64; 4] {
        [self.l_rod, self.l_ins_b, self.l_ins_m, self.l_sem]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtpLossReport {
    pub l_rod: [f64; STREAMS],
    pub l_ins_b: [f64; STREAMS],
    pub l_ins_m: [f64; STREAMS],
    pub l_sem: [f64; STREAMS],
    pub total: f64,
}

/// Unweighted sum of all twelve terms, accumulated left to right starting
/// from 0: stream 1 (rod, ins_b, ins_m, sem), then stream 2, then stream 3.
pub fn aggregate_mtp(streams: &[StreamLosses]) -> Result<MtpLossReport> {
    if streams.len() != STREAMS {
        return Err(Error::Config(format!(
            "expected {STREAMS} stream reports, got {}",
            streams.len()
        )));
    }
    let mut total = 0.0;
    for s in streams {
        for t in s.terms() {
            total += t;
        }
    }
    let pick = |f: fn(&StreamLosses) -> f64| [f(&streams[0]), f(&streams[1]), f(&streams[2])];
    Ok(MtpLossReport {
        l_rod: pick(|s| s.l_rod),
        l_ins_b: pick(|s| s.l_ins_b),
        l_ins_m: pick(|s| s.l_ins_m),
        l_sem: pick(|s| s.l_sem),
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn aggregate_examples() {
        let zero = StreamLosses::default();
        assert_eq!(aggregate_mtp(&[zero; 3]).unwrap().total, 0.0);
        let one = StreamLosses {
            l_rod: 1.0,
            l_ins_b: 2.0,
            l_ins_m: 3.0,
            l_sem: 4.0,
        };
        let r = aggregate_mtp(&[one, zero, zero]).unwrap();
        assert_eq!(r.total, 10.0);
        assert_eq!(r.l_sem, [4.0, 0.0, 0.0]);
        assert!(matches!(aggregate_mtp(&[one, zero]), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_semantic_logits_give_ln_k() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::zeros(&[4, 3]));
        let sem = SemanticMap {
            height: 2,
            width: 2,
            data: vec![0, 1, 255, 2],
        };
        let l = loss_semantic(&mut g, logits, &sem).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-15);
        let all_ignored = SemanticMap {
            height: 2,
            width: 2,
            data: vec![255; 4],
        };
        let l = loss_semantic(&mut g, logits, &all_ignored).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let bad = SemanticMap {
            height: 2,
            width: 2,
            data: vec![3; 4],
        };
        assert!(matches!(loss_semantic(&mut g, logits, &bad), Err(Error::Label(_))));
    }

    #[test]
    fn saturated_negatives_give_near_zero() {
        let grid = CellGrid { side: 4, stride: 2 };
        let mut data = vec![0.0; 16 * 9];
        for row in data.chunks_exact_mut(9) {
            row[0] = -20.0;
        }
        let mut g = Graph::new();
        let out = g.param(Tensor::new(vec![16, 9], data).unwrap());
        let l = loss_rotated(&mut g, out, &[], &grid, 3).unwrap();
        assert!(g.value(l).item() <= 1e-6);
    }

    #[test]
    fn earlier_box_wins_shared_cell() {
        let grid = CellGrid { side: 4, stride: 4 };
        let owners = assign_cells(&[(5.0, 5.0), (6.0, 6.0), (1.0, 1.0)], &grid).unwrap();
        assert_eq!(owners[5], Some(0));
        assert_eq!(owners[0], Some(2));
        assert_eq!(owners.iter().flatten().count(), 2);
    }
}
