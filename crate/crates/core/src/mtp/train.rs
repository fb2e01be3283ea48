//! The multi-task pretraining loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::heads::{head_outputs, init_stream_heads, CellGrid, STREAMS, STREAM_NAMES};
use super::loss::{aggregate_mtp, loss_instance, loss_rotated, loss_semantic, MtpLossReport, StreamLosses};
use super::optim::{lr_at, optimizer_step, OptimConfig, OptimState};
use crate::annotation::{synth_dataset, Dataset, MultiTaskSample, SynthSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamStore, VarMap};
use crate::rng::Rng;
use crate::rvsa::{backbone_tokens, init_backbone, patch_embed, RvsaConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum StreamSource {
    /// An `MTSD1` file; relative paths resolve against the config file.
    Path(PathBuf),
    /// Generated in memory. The stream's position (0, 1, 2) replaces the
    /// synth `dataset_id` and its generation seed is `seed + position + 1`.
    Synth(SynthSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamsConfig {
    pub sota: StreamSource,
    pub sior: StreamSource,
    pub fast: StreamSource,
}

impl StreamsConfig {
    pub fn in_order(&self) -> [&StreamSource; STREAMS] {
        [&self.sota, &self.sior, &self.fast]
    }
}

fn default_model() -> String {
    "toy".into()
}
fn default_base_lr() -> f64 {
    OptimConfig::default().base_lr
}
fn default_weight_decay() -> f64 {
    OptimConfig::default().weight_decay
}
fn default_layer_decay() -> f64 {
    OptimConfig::default().layer_decay
}
fn default_warmup() -> usize {
    OptimConfig::default().warmup_iters
}
fn default_warmup_init_lr() -> f64 {
    OptimConfig::default().warmup_init_lr
}
fn default_batch() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Backbone preset name.
    #[serde(default = "default_model")]
    pub model: String,
    /// Overrides the preset's window size.
    #[serde(default)]
    pub window_size: Option<usize>,
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_layer_decay")]
    pub layer_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup_iters: usize,
    #[serde(default = "default_warmup_init_lr")]
    pub warmup_init_lr: f64,
    /// Samples drawn from each stream per iteration.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub streams: StreamsConfig,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn rvsa(&self) -> Result<RvsaConfig> {
        let mut cfg = RvsaConfig::preset(&self.model)?;
        if let Some(s) = self.window_size {
            cfg.window_size = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            base_lr: self.base_lr,
            weight_decay: self.weight_decay,
            layer_decay: self.layer_decay,
            warmup_iters: self.warmup_iters,
            warmup_init_lr: self.warmup_init_lr,
            total_iters: self.iters,
            ..OptimConfig::default()
        }
    }

    /// Materializes the three streams; `base` anchors relative paths.
    pub fn load_streams(&self, base: &Path) -> Result<Vec<Dataset>> {
        self.streams
            .in_order()
            .iter()
            .enumerate()
            .map(|(i, src)| match src {
                StreamSource::Path(p) => Dataset::load(base.join(p)),
                StreamSource::Synth(spec) => {
                    let spec = SynthSpec {
                        dataset_id: i as u32,
                        ..spec.clone()
                    };
                    Ok(Dataset {
                        height: spec.height,
                        width: spec.width,
                        classes: spec.classes,
                        dataset_id: spec.dataset_id,
                        samples: synth_dataset(&spec, self.seed.wrapping_add(i as u64 + 1))?,
                    })
                }
            })
            .collect()
    }
}

/// Fresh backbone and per-stream heads for the given class counts.
pub fn init_model(cfg: &RvsaConfig, classes: &[usize], seed: u64) -> Result<ParamStore> {
    let mut params = init_backbone(cfg, &mut Rng::derive(seed, 0))?;
    for (i, &k) in classes.iter().enumerate() {
        params.extend(init_stream_heads(i + 1, k, cfg, &mut Rng::derive(seed, 10 + i as u64)));
    }
    Ok(params)
}

/// Per-sample loss graph for stream `stream` (1-based). Returns the four
/// terms in aggregation order.
pub fn sample_losses(
    g: &mut Graph,
    vars: &VarMap,
    cfg: &RvsaConfig,
    stream: usize,
    classes: usize,
    sample: &MultiTaskSample,
) -> Result<[Var; 4]> {
    let grid = CellGrid::of(cfg);
    let image = g.constant(sample.image.clone());
    let tokens = patch_embed(g, image, vars, cfg)?;
    let levels = backbone_tokens(g, tokens, vars, cfg)?;
    let tagged: Vec<(usize, Var)> = cfg.pyramid_layers.iter().copied().zip(levels).collect();
    let out = head_outputs(g, &tagged, vars, stream, &grid)?;
    let rod = loss_rotated(g, out.rotated, &sample.rboxes, &grid, classes)?;
    let (ins_b, ins_m) = loss_instance(g, out.instance, &sample.instances, &grid, classes)?;
    let sem = loss_semantic(g, out.semantic, &sample.semantic)?;
    Ok([rod, ins_b, ins_m, sem])
}

/// Epoch-wise shuffled, round-robin index source for one stream.
struct StreamSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl StreamSampler {
    fn new(len: usize, rng: Rng) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: 0,
            rng,
        };
        s.rng.shuffle(&mut s.order);
        s
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub lr: f64,
    pub report: MtpLossReport,
}

pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub params: ParamStore,
}

fn check_streams(cfg: &RvsaConfig, streams: &[Dataset]) -> Result<()> {
    if streams.len() != STREAMS {
        return Err(Error::Config(format!(
            "expected {STREAMS} streams, got {}",
            streams.len()
        )));
    }
    for (name, ds) in STREAM_NAMES.iter().zip(streams) {
        if ds.samples.is_empty() {
            return Err(Error::Config(format!("stream `{name}` is empty")));
        }
        if ds.height != cfg.image_size || ds.width != cfg.image_size {
            return Err(Error::Config(format!(
                "stream `{name}` grid {}x{} does not match model image size {}",
                ds.height, ds.width, cfg.image_size
            )));
        }
        if let Some(s) = ds.samples.iter().find(|s| s.image.shape()[0] != cfg.in_channels) {
            return Err(Error::Config(format!(
                "stream `{name}` has {}-channel images, model expects {}",
                s.image.shape()[0],
                cfg.in_channels
            )));
        }
    }
    Ok(())
}

/// Trains for `cfg.iters` iterations starting from `init` (or a fresh
/// model). Each iteration draws `batch_size` samples from every stream,
/// averages each loss term over the stream's batch, sums the twelve terms
/// and takes one optimizer step. `observe` sees every trace row.
pub fn train_mtp(
    cfg: &TrainConfig,
    streams: &[Dataset],
    init: Option<ParamStore>,
    mut observe: impl FnMut(&TraceRow),
) -> Result<TrainOutcome> {
    let model = cfg.rvsa()?;
    check_streams(&model, streams)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let classes: Vec<usize> = streams.iter().map(|d| d.classes as usize).collect();
    let mut params = match init {
        Some(p) => p,
        None => init_model(&model, &classes, cfg.seed)?,
    };
    let mut trace = Vec::with_capacity(cfg.iters);
    if cfg.iters == 0 {
        return Ok(TrainOutcome { trace, params });
    }
    let mut state = OptimState::new(cfg.optim(), model.depth, &params)?;
    let mut samplers: Vec<StreamSampler> = streams
        .iter()
        .enumerate()
        .map(|(i, d)| StreamSampler::new(d.samples.len(), Rng::derive(cfg.seed, 100 + i as u64)))
        .collect();

    for iter in 0..cfg.iters {
        let lr = lr_at(iter, &state.cfg)?;
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let mut terms = Vec::with_capacity(4 * STREAMS);
        for (i, ds) in streams.iter().enumerate() {
            let mut per_term: [Vec<Var>; 4] = Default::default();
            for _ in 0..cfg.batch_size {
                let sample = &ds.samples[samplers[i].next()];
                let losses =
                    sample_losses(&mut g, &vars, &model, i + 1, classes[i], sample).map_err(|e| Error::Training {
                        iter,
                        msg: e.to_string(),
                    })?;
                for (acc, v) in per_term.iter_mut().zip(losses) {
                    acc.push(v);
                }
            }
            for acc in &per_term {
                terms.push(g.mean_of(acc)?);
            }
        }
        let total = g.sum_scalars(&terms)?;
        let values: Vec<StreamLosses> = terms
            .chunks_exact(4)
            .map(|t| StreamLosses {
                l_rod: g.value(t[0]).item(),
                l_ins_b: g.value(t[1]).item(),
                l_ins_m: g.value(t[2]).item(),
                l_sem: g.value(t[3]).item(),
            })
            .collect();
        let report = aggregate_mtp(&values)?;
        debug_assert_eq!(report.total.to_bits(), g.value(total).item().to_bits());
        if !report.total.is_finite() {
            return Err(Error::Training {
                iter,
                msg: format!("total loss is {}", report.total),
            });
        }
        let row = TraceRow { iter, lr, report };
        observe(&row);
        trace.push(row);

        let mut grads = g.backward(total)?;
        let grads = vars.collect_grads(&g, &mut grads);
        optimizer_step(&mut params, &grads, &mut state)?;
    }
    Ok(TrainOutcome { trace, params })
}

pub const TRACE_HEADER: &str = "iter,lr,\
l_rod_1,l_rod_2,l_rod_3,\
l_ins_b_1,l_ins_b_2,l_ins_b_3,\
l_ins_m_1,l_ins_m_2,l_ins_m_3,\
l_sem_1,l_sem_2,l_sem_3,total";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let p = &r.report;
        let _ = write!(out, "{},{}", r.iter, r.lr);
        for group in [p.l_rod, p.l_ins_b, p.l_ins_m, p.l_sem] {
            for v in group {
                let _ = write!(out, ",{v}");
            }
        }
        let _ = writeln!(out, ",{}", p.total);
    }
    out
}
