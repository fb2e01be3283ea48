use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use mtp_core::analytics::{emit_report, load_fixture, reconcile_table};
use mtp_core::annotation::{build_sample, class_brightness, synth_dataset, Dataset, RotatedBox, SynthSpec, IGNORE};
use mtp_core::mtp::{
    init_model, load_checkpoint, parse_checkpoint, save_checkpoint, trace_csv, train_mtp, LoadMode, TraceRow,
    TrainConfig, PACK_MAGIC,
};
use mtp_core::suite::{check_op, OP_NAMES};
use mtp_core::{Error, Tensor};

use crate::{AnalyzeArgs, GradcheckArgs, InspectArgs, LabelgenArgs, LoadArg, PretrainArgs, SynthArgs};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

/// Bad flags, configs and fixtures are usage errors; everything the
/// inputs fail to satisfy once read is a validation failure.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Schedule(_) | Error::Fixture(_) | Error::Json(_) | Error::Io(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Invalid(other.to_string()),
        }
    }
}

/// Writes to stdout; a closed pipe ends the process quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: cannot write to stdout: {e}");
        std::process::exit(1);
    }
}

macro_rules! outln {
    ($($t:tt)*) => {
        emit(&format!("{}\n", format_args!($($t)*)))
    };
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    if a.list {
        for name in OP_NAMES {
            outln!("{name}");
        }
        return Ok(());
    }
    let names: Vec<&str> = if a.ops.iter().any(|o| o == "all") {
        OP_NAMES.to_vec()
    } else {
        a.ops.iter().map(String::as_str).collect()
    };
    if let Some(bad) = names.iter().find(|n| !OP_NAMES.contains(n)) {
        return Err(Failure::Usage(format!(
            "unknown op `{bad}`; known ops: {}",
            OP_NAMES.join(", ")
        )));
    }
    if a.seeds == 0 || !(a.tolerance >= 0.0) {
        return Err(Failure::Usage(
            "--seeds must be positive and --tolerance non-negative".into(),
        ));
    }
    outln!("op,seeds,max_rel_error,worst_seed,status");
    let mut failed = Vec::new();
    for name in names {
        let mut worst = (0.0f64, a.seed);
        for seed in a.seed..a.seed + a.seeds {
            let err = check_op(name, seed, a.step)?.max_rel_error;
            if !(err <= worst.0) {
                worst = (err, seed);
            }
        }
        let ok = worst.0 <= a.tolerance;
        outln!(
            "{name},{},{:e},{},{}",
            a.seeds,
            worst.0,
            worst.1,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!(
            "{} op(s) above tolerance {:e}: {}",
            failed.len(),
            a.tolerance,
            failed.join(", ")
        )))
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        samples: a.samples,
        height: a.size,
        width: a.size,
        channels: a.channels,
        classes: a.classes,
        min_boxes: a.min_boxes,
        max_boxes: a.max_boxes,
        min_side: a.min_side,
        max_side: a.max_side,
        dataset_id: a.dataset_id,
        noise: a.noise,
    };
    let ds = Dataset {
        height: a.size,
        width: a.size,
        classes: a.classes,
        dataset_id: a.dataset_id,
        samples: synth_dataset(&spec, a.seed)?,
    };
    write_file(&a.out, ds.to_bytes()?)?;
    let instances: usize = ds.samples.iter().map(|s| s.instances.len()).sum();
    outln!(
        "wrote {} samples ({instances} instances) to {}",
        ds.samples.len(),
        a.out.display()
    );
    Ok(())
}

pub fn labelgen(a: &LabelgenArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.boxes)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", a.boxes.display())))?;
    let raw: Vec<RotatedBox> = serde_json::from_str(&text).map_err(Error::from)?;
    let boxes = raw
        .iter()
        .map(|b| RotatedBox::new(b.cx, b.cy, b.w, b.h, b.theta, b.class_id))
        .collect::<Result<Vec<_>, _>>()?;
    if a.height == 0 || a.width == 0 || a.channels == 0 {
        return Err(Failure::Usage(
            "--height, --width and --channels must be positive".into(),
        ));
    }
    let built = build_sample(&boxes, Tensor::zeros(&[a.channels, a.height, a.width]), a.dataset_id)?;
    let mut sample = built.sample;
    let plane = a.height * a.width;
    let labels = sample.semantic.data.clone();
    let img = sample.image.data_mut();
    for ch in 0..a.channels {
        for (p, &cls) in labels.iter().enumerate() {
            if cls != IGNORE {
                img[ch * plane + p] = class_brightness(a.dataset_id, cls as u32, ch);
            }
        }
    }
    let classes = a
        .classes
        .unwrap_or_else(|| boxes.iter().map(|b| b.class_id + 1).max().unwrap_or(1));
    sample.audit(classes)?;

    outln!("instance,source,class,x_min,y_min,x_max,y_max,pixels");
    for (i, inst) in sample.instances.iter().enumerate() {
        let h = inst.hbox;
        outln!(
            "{i},{},{},{},{},{},{},{}",
            inst.source,
            inst.class_id,
            h.x_min,
            h.y_min,
            h.x_max,
            h.y_max,
            inst.mask.count()
        );
    }
    let labeled = labels.iter().filter(|&&v| v != IGNORE).count();
    eprintln!(
        "{} instance(s), {} empty box(es) dropped, {labeled} of {plane} pixels labeled",
        sample.instances.len(),
        built.dropped
    );
    if let Some(out) = &a.out {
        let ds = Dataset {
            height: a.height,
            width: a.width,
            classes,
            dataset_id: a.dataset_id,
            samples: vec![sample],
        };
        write_file(out, ds.to_bytes()?)?;
    }
    Ok(())
}

fn progress(row: &TraceRow, every: usize, total: usize) {
    if every > 0 && (row.iter.is_multiple_of(every) || row.iter + 1 == total) {
        eprintln!("iter {:>6}  lr {:.3e}  total {:.6}", row.iter, row.lr, row.report.total);
    }
}

pub fn pretrain(a: &PretrainArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", a.config.display())))?;
    let mut cfg = TrainConfig::from_json(&text)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(iters) = a.iters {
        cfg.iters = iters;
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let streams = cfg.load_streams(base)?;
    let init = match &a.init {
        Some(path) => {
            let classes: Vec<usize> = streams.iter().map(|d| d.classes as usize).collect();
            let fresh = init_model(&cfg.rvsa()?, &classes, cfg.seed)?;
            let mode = match a.load {
                LoadArg::Backbone => LoadMode::BackboneOnly,
                LoadArg::Decoders => LoadMode::WithDecoders,
            };
            let report = load_checkpoint(path, fresh, mode)?;
            eprintln!(
                "loaded {}: {} restored, {} reinitialized, {} unused",
                path.display(),
                report.restored.len(),
                report.reinitialized.len(),
                report.unmatched.len()
            );
            Some(report.params)
        }
        None => None,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", a.out.display())))?;
    let trace_path = a.out.join("trace.csv");
    let mut rows = Vec::with_capacity(cfg.iters);
    let result = train_mtp(&cfg, &streams, init, |row| {
        progress(row, a.log_every, cfg.iters);
        rows.push(*row);
    });
    // The trace is written even when training stops early.
    write_file(&trace_path, trace_csv(&rows))?;
    let outcome = result?;
    save_checkpoint(a.out.join("model.ckpt"), &outcome.params)?;
    if let Some(last) = outcome.trace.last() {
        let report = serde_json::to_string(&last.report).map_err(Error::from)?;
        outln!("{report}");
    }
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let fixture = load_fixture(&a.fixture)?;
    let rec = reconcile_table(&fixture)?;
    let report = emit_report(&rec.rows);
    match &a.out {
        Some(path) => write_file(path, &report)?,
        None => emit(&report),
    }
    for c in rec.mismatches() {
        eprintln!(
            "mismatch: {} {}: fixture {} derived {}",
            c.dataset, c.column, c.expected, c.derived
        );
    }
    eprintln!("{}/{} cells match", rec.matched(), rec.cells.len());
    if rec.all_match() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!(
            "{} derived cell(s) differ from the fixture",
            rec.cells.len() - rec.matched()
        )))
    }
}

fn stats(t: &Tensor) -> String {
    if t.is_empty() {
        return "empty".into();
    }
    let d = t.data();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    format!("min {min:.4e} max {max:.4e} mean {mean:.4e}")
}

pub fn inspect(a: &InspectArgs) -> Result<(), Failure> {
    let bytes = std::fs::read(&a.path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", a.path.display())))?;
    let mut out = String::new();
    if bytes.starts_with(PACK_MAGIC) {
        let params = parse_checkpoint(&bytes)?;
        let _ = writeln!(
            out,
            "TNSR1-PACK checkpoint: {} tensors, {} values",
            params.len(),
            params.numel()
        );
        let heads: usize = params.names().filter(|n| n.starts_with("head.")).count();
        let _ = writeln!(out, "backbone tensors {}, head tensors {heads}", params.len() - heads);
        for (i, (name, t)) in params.iter().enumerate() {
            if !a.all && i >= 20 {
                let _ = writeln!(out, "... {} more (use --all)", params.len() - 20);
                break;
            }
            let _ = writeln!(out, "{name} {:?} {}", t.shape(), stats(t));
        }
    } else if bytes.starts_with(b"TNSR1\n") {
        let (t, used) = Tensor::parse_tnsr1(&bytes, 0)?;
        if used != bytes.len() {
            return Err(Failure::Invalid(format!(
                "trailing bytes after tensor at offset {used}"
            )));
        }
        let _ = writeln!(out, "TNSR1 tensor {:?}, {}", t.shape(), stats(&t));
    } else if bytes.starts_with(b"MTSD1 ") {
        let ds = Dataset::from_bytes(&bytes)?;
        let _ = writeln!(
            out,
            "MTSD1 dataset {}: {} samples, grid {}x{}, {} classes",
            ds.dataset_id,
            ds.samples.len(),
            ds.height,
            ds.width,
            ds.classes
        );
        for (i, s) in ds.samples.iter().enumerate() {
            if !a.all && i >= 20 {
                let _ = writeln!(out, "... {} more (use --all)", ds.samples.len() - 20);
                break;
            }
            let labeled = s.semantic.data.iter().filter(|&&v| v != IGNORE).count();
            let _ = writeln!(
                out,
                "sample {i}: image {:?}, {} rboxes, {} instances, {labeled} labeled pixels",
                s.image.shape(),
                s.rboxes.len(),
                s.instances.len()
            );
        }
    } else {
        return Err(Failure::Invalid(format!(
            "{}: not a TNSR1, TNSR1-PACK or MTSD1 file",
            a.path.display()
        )));
    }
    emit(&out);
    Ok(())
}
