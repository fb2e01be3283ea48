//! Dense task heads over the backbone pyramid.
//!
//! Each stream `i ∈ {1, 2, 3}` owns its own heads, so the three label
//! spaces never share output units. Every head is a per-level linear map on
//! tokens, averaged over pyramid levels:
//!
//! | key                          | output columns per token             |
//! |------------------------------|--------------------------------------|
//! | `head.s<i>.sem.l<L>.*`       | `K` class logits                     |
//! | `head.s<i>.ins.l<L>.*`       | objectness, `K` classes, 4 box, fg   |
//! | `head.s<i>.rot.l<L>.*`       | objectness, `K` classes, 5 box       |
//!
//! `<L>` is the backbone layer the pyramid level is tapped from.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::UpsampleBilinear;
use crate::params::{ParamStore, VarMap};
use crate::rng::Rng;
use crate::rvsa::{RvsaConfig, INIT_STD};
use crate::tensor::Tensor;

pub const STREAMS: usize = 3;
/// Config keys of the three streams, in aggregation order.
pub const STREAM_NAMES: [&str; STREAMS] = ["sota", "sior", "fast"];

pub const HEAD_PREFIX: &str = "head.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Semantic,
    Instance,
    Rotated,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Semantic, Task::Instance, Task::Rotated];

    fn tag(self) -> &'static str {
        match self {
            Task::Semantic => "sem",
            Task::Instance => "ins",
            Task::Rotated => "rot",
        }
    }

    /// Output width for `classes` classes.
    pub fn width(self, classes: usize) -> usize {
        match self {
            Task::Semantic => classes,
            Task::Instance | Task::Rotated => classes + 6,
        }
    }
}

/// `stream` is 1-based.
pub fn head_key(stream: usize, task: Task, layer: usize, what: &str) -> String {
    format!("{HEAD_PREFIX}s{stream}.{}.l{layer:02}.{what}", task.tag())
}

pub fn is_head_key(name: &str) -> bool {
    name.starts_with(HEAD_PREFIX)
}

pub fn init_stream_heads(stream: usize, classes: usize, cfg: &RvsaConfig, rng: &mut Rng) -> ParamStore {
    let c = cfg.embed_dim;
    let mut p = ParamStore::new();
    for task in Task::ALL {
        let out = task.width(classes);
        for &layer in &cfg.pyramid_layers {
            p.insert(
                head_key(stream, task, layer, "weight"),
                Tensor::randn(&[c, out], INIT_STD, rng),
            );
            p.insert(head_key(stream, task, layer, "bias"), Tensor::zeros(&[out]));
        }
    }
    p
}

/// Cell layout of the dense heads: one cell per token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellGrid {
    /// Cells per side.
    pub side: usize,
    /// Pixels per cell side.
    pub stride: usize,
}

impl CellGrid {
    pub fn of(cfg: &RvsaConfig) -> Self {
        Self {
            side: cfg.feature_side(),
            stride: cfg.patch_size,
        }
    }

    pub fn cells(&self) -> usize {
        self.side * self.side
    }

    pub fn pixels_per_side(&self) -> usize {
        self.side * self.stride
    }

    /// Cell index holding pixel-space point `(x, y)`; cell `j` covers
    /// `[j·stride − ½, (j+1)·stride − ½)` on each axis.
    pub fn cell_of(&self, x: f64, y: f64) -> Result<usize> {
        let locate = |c: f64| {
            let j = ((c + 0.5) / self.stride as f64).floor();
            (j >= 0.0 && j < self.side as f64).then_some(j as usize)
        };
        match (locate(x), locate(y)) {
            (Some(cx), Some(cy)) => Ok(cy * self.side + cx),
            _ => Err(Error::Label(format!(
                "box center ({x}, {y}) lies outside the cell grid"
            ))),
        }
    }

    /// Pixel-space center of cell `cell`.
    pub fn center(&self, cell: usize) -> (f64, f64) {
        let half = (self.stride as f64 - 1.0) / 2.0;
        (
            ((cell % self.side) * self.stride) as f64 + half,
            ((cell / self.side) * self.stride) as f64 + half,
        )
    }
}

pub struct HeadOutputs {
    /// `[(H·W) × K]`, pixel-major.
    pub semantic: Var,
    /// `[cells × (K + 6)]`.
    pub instance: Var,
    /// `[cells × (K + 6)]`.
    pub rotated: Var,
}

fn level_average(g: &mut Graph, pyramid: &[(usize, Var)], vars: &VarMap, stream: usize, task: Task) -> Result<Var> {
    let mut outs = Vec::with_capacity(pyramid.len());
    for &(layer, x) in pyramid {
        let w = vars.get(&head_key(stream, task, layer, "weight"))?;
        let b = vars.get(&head_key(stream, task, layer, "bias"))?;
        outs.push(g.linear(x, w, b)?);
    }
    g.mean_of(&outs)
}

/// Runs stream `stream`'s heads on token-major pyramid levels tagged with
/// their layer numbers. Semantic logits are averaged on the token grid and
/// then upsampled bilinearly to pixels.
pub fn head_outputs(
    g: &mut Graph,
    pyramid: &[(usize, Var)],
    vars: &VarMap,
    stream: usize,
    grid: &CellGrid,
) -> Result<HeadOutputs> {
    let sem_tokens = level_average(g, pyramid, vars, stream, Task::Semantic)?;
    let px = grid.pixels_per_side();
    let semantic = g.apply(UpsampleBilinear::new((grid.side, grid.side), (px, px)), &[sem_tokens])?;
    Ok(HeadOutputs {
        semantic,
        instance: level_average(g, pyramid, vars, stream, Task::Instance)?,
        rotated: level_average(g, pyramid, vars, stream, Task::Rotated)?,
    })
}
