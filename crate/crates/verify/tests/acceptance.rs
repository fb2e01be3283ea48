//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use mtp_core::analytics::{load_fixture, reconcile_table};
use mtp_core::gradcheck::DEFAULT_STEP;
use mtp_core::mtp::{
    init_model, is_head_key, layer_lr_scale, load_checkpoint, lr_at, save_checkpoint, trace_csv, train_mtp, LoadMode,
    OptimConfig, TrainConfig,
};
use mtp_core::suite::{check_op, OP_NAMES};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (
        elapsed < limit,
        format!("{:.2} s of {} s", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

fn schedule_table() -> Verdict {
    let start = Instant::now();
    let fixture = load_fixture(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/data/finetune_schedules.json"
    ))
    .unwrap();
    let rec = reconcile_table(&fixture).unwrap();
    let (fast, time) = within(start.elapsed(), Duration::from_secs(1));
    let it = |name: &str| rec.rows.iter().find(|(c, _)| c.name == name).map(|(_, r)| r.n_to_it);
    let halves = it("EuroSAT") == Some(25_312) && it("RESISC-45") == Some(19_688) && it("WHU") == Some(33_338);
    let mut detail = format!(
        "{}/{} cells match, half cases ok: {halves}, {time}",
        rec.matched(),
        rec.cells.len()
    );
    for c in rec.mismatches() {
        detail += &format!(
            "; {} {}: table {} vs derived {}",
            c.dataset, c.column, c.expected, c.derived
        );
    }
    verdict(rec.all_match() && rec.cells.len() == 56 && halves && fast, detail)
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    for name in OP_NAMES {
        for seed in 0..10 {
            let err = check_op(name, seed, DEFAULT_STEP)
                .map(|r| r.max_rel_error)
                .unwrap_or(f64::INFINITY);
            if err > worst.0 {
                worst = (err, name);
            }
            if !(err <= 1e-4) {
                failures.push(format!("{name}@{seed}={err:.2e}"));
            }
        }
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(120));
    verdict(
        failures.is_empty() && fast,
        format!(
            "{} cases x 10 seeds, worst {:.2e} ({}), failures [{}], {time}",
            OP_NAMES.len(),
            worst.0,
            worst.1,
            failures.join(" ")
        ),
    )
}

fn identity_reduction() -> Verdict {
    let bad = common::identity_mismatches(100);
    verdict(bad == 0, format!("{bad}/100 inputs differ"))
}

fn geometry_oracles() -> Verdict {
    let raster = common::rasterize_mismatches(31, 1000).len();
    let hbox = common::min_hbox_mismatches(32, 1000);
    let sample = common::sample_window_worst(2024, 1000);
    verdict(
        raster == 0 && hbox == 0 && sample <= 1e-12,
        format!("raster pixel mismatches {raster}, hbox mismatches {hbox}, sampling max error {sample:.1e}"),
    )
}

fn layer_placement() -> Verdict {
    let bad = common::placement_errors();
    verdict(bad.is_empty(), format!("deviations [{}]", bad.join("; ")))
}

fn toy_config() -> TrainConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json");
    TrainConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn toy_convergence() -> (Verdict, mtp_core::ParamStore) {
    let cfg = toy_config();
    let streams = cfg.load_streams(Path::new(".")).unwrap();
    let start = Instant::now();
    let a = train_mtp(&cfg, &streams, None, |_| {}).unwrap();
    let (fast, time) = within(start.elapsed(), Duration::from_secs(300));
    let b = train_mtp(&cfg, &streams, None, |_| {}).unwrap();
    let totals: Vec<f64> = a.trace.iter().map(|r| r.report.total).collect();
    let early = mean(&totals[10..=30]);
    let late = mean(&totals[totals.len() - 20..]);
    let identical = trace_csv(&a.trace) == trace_csv(&b.trace);
    let ratio = late / early;
    (
        verdict(
            ratio <= 0.5 && identical && fast && totals.len() == 300,
            format!("iters 10-30 mean {early:.4}, last 20 mean {late:.4}, ratio {ratio:.3}, reruns identical: {identical}, {time}"),
        ),
        a.params,
    )
}

fn schedule_checks() -> Verdict {
    let cfg = OptimConfig::default();
    let mid = cfg.warmup_iters + (cfg.total_iters - cfg.warmup_iters) / 2;
    let start = lr_at(0, &cfg).unwrap();
    let end = lr_at(cfg.total_iters, &cfg).unwrap();
    let half = lr_at(mid, &cfg).unwrap();
    let ends_ok = start == 1e-6 && end == 0.0 && (half - cfg.base_lr / 2.0).abs() <= 1e-12;
    let mut off = Vec::new();
    for rate in [0.9, 0.94] {
        for depth in [4, 12, 24] {
            for idx in 1..=depth + 1 {
                let want = common::exact_power(rate, depth + 1 - idx);
                if layer_lr_scale(idx, depth, rate).unwrap() != want {
                    off.push(format!("{rate}^{}", depth + 1 - idx));
                }
            }
        }
    }
    verdict(
        ends_ok && off.is_empty(),
        format!(
            "lr(0)={start:e}, lr(total)={end:e}, lr({mid})-base/2={:.1e}, layer scales off [{}]",
            half - cfg.base_lr / 2.0,
            off.join(" ")
        ),
    )
}

fn checkpoint_reuse(trained: &mtp_core::ParamStore) -> Verdict {
    let model = toy_config().rvsa().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.ckpt");
    save_checkpoint(&path, trained).unwrap();
    let fresh = init_model(&model, &[4, 3, 5], 8).unwrap();
    let bits = |t: &mtp_core::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();

    let backbone = load_checkpoint(&path, fresh.clone(), LoadMode::BackboneOnly).unwrap();
    let backbone_ok = backbone.params.iter().all(|(name, t)| {
        let want = if is_head_key(name) {
            fresh.get(name)
        } else {
            trained.get(name)
        };
        bits(t) == bits(want.unwrap())
    });
    let heads_fresh = backbone.reinitialized.iter().all(|n| is_head_key(n))
        && backbone.reinitialized.len() == fresh.names().filter(|n| is_head_key(n)).count();
    let full = load_checkpoint(&path, fresh, LoadMode::WithDecoders).unwrap();
    let full_ok = full.params.len() == trained.len()
        && full
            .params
            .iter()
            .all(|(name, t)| bits(t) == bits(trained.get(name).unwrap()));
    verdict(
        backbone_ok && heads_fresh && full_ok,
        format!(
            "backbone-only: {} restored, {} heads reinitialized, exact {}; with decoders exact {full_ok}",
            backbone.restored.len(),
            backbone.reinitialized.len(),
            backbone_ok && heads_fresh
        ),
    )
}

fn main() {
    let mut results = vec![
        ("schedule table reproduction", schedule_table()),
        ("gradient suite", gradient_suite()),
        ("rvsa identity reduction", identity_reduction()),
        ("geometry oracles", geometry_oracles()),
        ("preset layer placement", layer_placement()),
    ];
    let (toy, trained) = toy_convergence();
    results.push(("toy multi-task convergence", toy));
    results.push(("learning-rate schedule", schedule_checks()));
    results.push(("checkpoint reuse", checkpoint_reuse(&trained)));

    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {}/{} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
