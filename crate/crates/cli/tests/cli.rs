use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mtp(args: &[&str]) -> Output {
    mtp_env(args, &[])
}

fn mtp_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mtp"));
    cmd.args(args).env_remove("MTP_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn version_names_file_formats() {
    let o = mtp(&["--version"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("TNSR1") && stdout(&o).contains("MTSD1"));
}

#[test]
fn gradcheck_exit_codes() {
    let o = mtp(&["gradcheck", "--ops", "softmax_rows", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("softmax_rows,1,"));

    let o = mtp(&["gradcheck", "--ops", "nosuch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nosuch"));

    let o = mtp(&["gradcheck", "--ops", "all", "--tolerance", "1e-12"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().filter(|l| l.ends_with(",FAIL")).count() > 1);
}

#[test]
fn analyze_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = repo("crates/core/data/finetune_schedules.json");
    let golden = std::fs::read_to_string(repo("crates/core/data/finetune_schedules.golden.csv")).unwrap();

    // The shipped table disagrees with its own formula in one cell.
    let o = mtp(&["analyze", "--fixture", s(&fixture)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o), golden);
    assert!(stderr(&o).contains("Xview ap_c"));
    assert!(stderr(&o).contains("55/56"));

    let text = std::fs::read_to_string(&fixture).unwrap();
    let perturbed = dir.path().join("perturbed.json");
    std::fs::write(&perturbed, text.replacen("\"s_b\": 64", "\"s_b\": 63", 1)).unwrap();
    let o = mtp(&["analyze", "--fixture", s(&perturbed)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("EuroSAT n_to_it"));

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let o = mtp(&["analyze", "--fixture", s(&empty)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "[{").unwrap();
    assert_eq!(mtp(&["analyze", "--fixture", s(&bad)]).status.code(), Some(2));
}

#[test]
fn synth_is_seeded_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n);
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let o = mtp(&["synth", "--out", s(&path(name)), "--samples", "3", "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = mtp_env(
        &["synth", "--out", s(&path("d")), "--samples", "3", "--seed", "5"],
        &[("MTP_SEED", "6")],
    );
    assert!(o.status.success());
    let read = |n: &str| std::fs::read(path(n)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(read("c"), read("d"));

    let o = mtp(&["inspect", s(&path("a"))]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("MTSD1 dataset 0: 3 samples, grid 32x32"));

    let o = mtp_env(&["synth", "--out", s(&path("e"))], &[("MTP_SEED", "x")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn labelgen_table_and_degenerate_input() {
    let dir = tempfile::tempdir().unwrap();
    let boxes = dir.path().join("boxes.json");
    std::fs::write(
        &boxes,
        r#"[{"cx": 5, "cy": 4, "w": 5, "h": 3, "theta": 0, "class_id": 2},
            {"cx": -40, "cy": 0, "w": 2, "h": 2, "theta": 0, "class_id": 0}]"#,
    )
    .unwrap();
    let out = dir.path().join("one.mtsd");
    let o = mtp(&[
        "labelgen",
        "--boxes",
        s(&boxes),
        "--height",
        "10",
        "--width",
        "12",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Axis-aligned 5×3 box at (5, 4): pixel centers x 3..=7, y 3..=5.
    assert_eq!(
        stdout(&o),
        "instance,source,class,x_min,y_min,x_max,y_max,pixels\n0,0,2,3,3,7,5,15\n"
    );
    assert!(stderr(&o).contains("1 empty box(es) dropped"));
    assert!(stdout(&mtp(&["inspect", s(&out)])).contains("1 instances, 15 labeled pixels"));

    std::fs::write(
        &boxes,
        r#"[{"cx": -40, "cy": 0, "w": 2, "h": 2, "theta": 0, "class_id": 0}]"#,
    )
    .unwrap();
    let o = mtp(&["labelgen", "--boxes", s(&boxes), "--height", "10", "--width", "12"]);
    assert_eq!(o.status.code(), Some(1));
}

fn toy_variant(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo("configs/toy.json")).unwrap()).unwrap();
    edit(&mut cfg);
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn pretrain_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_variant(dir.path(), "short.json", |c| c["warmup_iters"] = 2.into());
    let run = |out: &str| {
        let out = dir.path().join(out);
        let o = mtp(&["pretrain", "--config", s(&config), "--out", s(&out), "--iters", "6"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("\"total\":"));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace, std::fs::read_to_string(b.join("trace.csv")).unwrap());
    assert_eq!(trace.lines().count(), 7);
    assert!(trace.starts_with("iter,lr,l_rod_1,"));
    assert_eq!(
        std::fs::read(a.join("model.ckpt")).unwrap(),
        std::fs::read(b.join("model.ckpt")).unwrap()
    );

    let o = mtp(&["inspect", s(&a.join("model.ckpt"))]);
    assert!(stdout(&o).starts_with("TNSR1-PACK checkpoint: "));

    let resumed = dir.path().join("resumed");
    let ckpt = a.join("model.ckpt");
    let o = mtp(&[
        "pretrain",
        "--config",
        s(&config),
        "--out",
        s(&resumed),
        "--iters",
        "3",
        "--init",
        s(&ckpt),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("reinitialized"));

    let missing = toy_variant(dir.path(), "missing.json", |c| {
        c["streams"].as_object_mut().unwrap().remove("fast");
    });
    let o = mtp(&["pretrain", "--config", s(&missing), "--out", s(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fast"), "{}", stderr(&o));

    let diverging = toy_variant(dir.path(), "nan.json", |c| {
        c["base_lr"] = 1e300.into();
        c["warmup_iters"] = 1.into();
    });
    let o = mtp(&[
        "pretrain",
        "--config",
        s(&diverging),
        "--out",
        s(&dir.path().join("n")),
        "--iters",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("iteration"), "{}", stderr(&o));
}

#[test]
fn inspect_rejects_unknown_files() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"hello").unwrap();
    assert_eq!(mtp(&["inspect", s(&junk)]).status.code(), Some(1));
    assert_eq!(mtp(&["inspect", "/nonexistent/file"]).status.code(), Some(2));

    // Right magic, truncated body.
    std::fs::write(&junk, b"TNSR1-PACK\n2\na\n").unwrap();
    assert_eq!(mtp(&["inspect", s(&junk)]).status.code(), Some(1));
}
