use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use warpadam::tensor::Tensor;
use warpadam::warp::load_warps;

fn warpadam(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_warpadam"));
    cmd.args(args).env_remove("WARP_SEED");
    if let Some(s) = env_seed {
        cmd.env("WARP_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    warpadam(args, None).status.code().unwrap()
}

fn out_arg(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(code(&["run", "--frobnicate", "--out", out]), 2);
    assert_eq!(code(&["run", "--set", "no_equals_sign", "--out", out]), 2);
    assert_eq!(code(&["run", "--set", "opt.etaa=0.1", "--out", out]), 2);
    assert_eq!(code(&["run", "--config", "/no/such/file", "--out", out]), 2);
    assert_eq!(code(&["compare", "--set", "optimizers=adam", "--out", out]), 2);
    assert_eq!(code(&["import", "--out", out]), 2);
    assert_eq!(code(&["check", "--corrupt-rule", "no_such_op"]), 2);
}

#[test]
fn check_passes_and_a_corrupted_rule_fails() {
    let ok = warpadam(&["check"], None);
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 20);
    assert!(text.contains("max_rel_err="));

    let bad = warpadam(&["check", "--corrupt-rule", "tanh"], None);
    assert_eq!(bad.status.code(), Some(1));
    let text = String::from_utf8_lossy(&bad.stdout);
    assert!(text.contains("FAIL grad/tanh"));
    assert!(text.contains("worst"));
}

#[test]
fn divergence_exits_3_and_keeps_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let res = warpadam(
        &["run", "--set", "optimizer=sgd", "--set", "opt.eta=1e308", "--out", out_arg(dir.path())],
        None,
    );
    assert_eq!(res.status.code(), Some(3));
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(curve.trim_end().ends_with(",1"));
    assert!(dir.path().join("manifest.txt").exists());
}

#[test]
fn zero_outer_steps_saves_the_identity_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let res = warpadam(&["meta-train", "--set", "meta.outer_steps=0", "--out", out_arg(dir.path())], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let warps = load_warps(&dir.path().join("warps.bin")).unwrap();
    assert_eq!(warps.len(), 4);
    for w in &warps {
        assert_eq!(w.materialize(), Tensor::eye(w.dim()), "{:?} warp", w.form());
    }
    let curve = fs::read_to_string(dir.path().join("meta_curve.csv")).unwrap();
    assert_eq!(curve, "outer_step,query_loss,tod_penalty\n");
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = |d: &Path| vec!["meta-train".to_string(), "--set".into(), "meta.outer_steps=5".into(), "--out".into(), d.to_str().unwrap().into()];
    let run = |d: &Path, seed: Option<&str>| {
        let argv = args(d);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        assert_eq!(warpadam(&argv, seed).status.code(), Some(0));
        fs::read(d.join("warps.bin")).unwrap()
    };
    assert_eq!(run(a.path(), Some("11")), run(b.path(), Some("11")));
    assert_ne!(run(a.path(), Some("11")), run(c.path(), Some("12")));
}

#[test]
fn env_seed_is_last_resort_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let manifest = || fs::read_to_string(dir.path().join("manifest.txt")).unwrap();

    warpadam(&["run", "--set", "run.n_tasks=1", "--out", out], Some("42"));
    let m = manifest();
    assert!(m.contains("\nseed=42\n") && m.contains("manifest.seed_source=env"), "{m}");

    warpadam(&["run", "--set", "run.n_tasks=1", "--seed", "7", "--out", out], Some("42"));
    let m = manifest();
    assert!(m.contains("\nseed=7\n") && m.contains("manifest.seed_source=flag"), "{m}");

    assert_eq!(code(&["run", "--out", out]), 0);
    assert!(manifest().contains("manifest.seed_source=default"));
    let bad = warpadam(&["run", "--out", out], Some("not-a-number"));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn compare_twins_produce_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let res = warpadam(
        &["compare", "--set", "optimizers=one:adam,two:adam,sgd", "--out", out_arg(dir.path())],
        None,
    );
    assert_eq!(res.status.code(), Some(0));
    let table = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .filter(|l| l.starts_with("one,") || l.starts_with("two,"))
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2..], rows[1][2..]);
    for name in ["synth_one.csv", "synth_two.csv", "synth_SGD.csv"] {
        assert!(dir.path().join("curves").join(name).exists(), "{name}");
    }
}

#[test]
fn import_writes_a_loadable_table() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree");
    for a in ["x", "y"] {
        let class = tree.join(a).join("c0");
        fs::create_dir_all(&class).unwrap();
        fs::write(class.join("0.pgm"), b"P5\n2 2\n255\n\x00\xff\xff\x00").unwrap();
    }
    let out = dir.path().join("out");
    let res = warpadam(
        &["import", "--root", tree.to_str().unwrap(), "--side", "2", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = warpadam::tasks::load_table(&out.join("table.ctbl")).unwrap();
    assert_eq!(table.alphabets.len(), 2);
    assert_eq!(table.alphabets[1].classes[0].instances[0], vec![0.0, 1.0, 1.0, 0.0]);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("import.side=2"));
}
