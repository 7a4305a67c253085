use std::path::Path;
use std::process::Command;

use unlearnq::cli::{run, EXIT_CONFIG, EXIT_OK, EXIT_RUN};

const SMALL: &str = "data.kind = moons\ndata.samples = 200\nnet.hidden = 16\ntrain.epochs = 10\nunlearn.epochs = 3\n";

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn unlearnq(args: &[&str]) -> Outcome {
    let mut all = vec!["unlearnq"];
    all.extend(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(all, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn setup(config: &str) -> (tempfile::TempDir, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("runs");
    (
        dir,
        cfg.to_str().unwrap().to_string(),
        out.to_str().unwrap().to_string(),
    )
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn train_then_unlearn_writes_checkpoints_traces_and_reports() {
    let (_dir, cfg, out) = setup(SMALL);
    let r = unlearnq(&["train", "--config", &cfg, "--out", &out, "--seed", "3"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let seed_dir = Path::new(&out).join("seed-3");
    for f in ["original.ckpt", "train.jsonl", "config.txt"] {
        assert!(seed_dir.join(f).exists(), "{f}");
    }

    let r = unlearnq(&[
        "unlearn", "--config", &cfg, "--out", &out, "--seed", "3", "--method", "oeu",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.trim().ends_with("oeu.report.json"));
    let report: serde_json::Value =
        serde_json::from_slice(&read(seed_dir.join("oeu.report.json"))).unwrap();
    for key in [
        "config_hash",
        "metrics",
        "retrain",
        "mia_convention",
        "forget_entropy",
        "steps",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }
    let csv = String::from_utf8(read(seed_dir.join("oeu.csv"))).unwrap();
    assert_eq!(csv.lines().next().unwrap(), unlearnq::runner::CSV_HEADER);
    let trace = String::from_utf8(read(seed_dir.join("oeu.jsonl"))).unwrap();
    assert_eq!(
        trace.lines().count() as u64,
        report["steps"].as_u64().unwrap()
    );

    let r = unlearnq(&[
        "evaluate",
        "--config",
        &cfg,
        "--out",
        &out,
        "--seed",
        "3",
        "--checkpoint",
    ]);
    assert_eq!(r.code, EXIT_CONFIG, "--checkpoint without a value");
    let ckpt = seed_dir.join("oeu.ckpt");
    let r = unlearnq(&[
        "evaluate",
        "--config",
        &cfg,
        "--out",
        &out,
        "--seed",
        "3",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let evaluated: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(evaluated["ag"], report["metrics"]["ag"]);
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let (_dir, cfg, out) = setup(SMALL);
    let path = Path::new(&out).join("seed-0/original.ckpt");
    assert_eq!(
        unlearnq(&["train", "--config", &cfg, "--out", &out]).code,
        EXIT_OK
    );
    let first = read(&path);
    assert_eq!(
        unlearnq(&["train", "--config", &cfg, "--out", &out]).code,
        EXIT_OK
    );
    assert_eq!(first, read(&path));
}

#[test]
fn unknown_method_is_a_config_error_listing_the_valid_ones() {
    let (_dir, cfg, out) = setup(SMALL);
    let r = unlearnq(&[
        "unlearn", "--config", &cfg, "--out", &out, "--method", "scrub",
    ]);
    assert_eq!(r.code, EXIT_CONFIG);
    for m in ["oeu", "ft", "ga", "rl", "retrain"] {
        assert!(r.stderr.contains(m), "{}", r.stderr);
    }
}

#[test]
fn malformed_config_reports_its_line() {
    let (_dir, cfg, out) = setup("data.kind = moons\nnet.hidden 16\n");
    let r = unlearnq(&["train", "--config", &cfg, "--out", &out]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("line 2"), "{}", r.stderr);

    let (_dir, cfg, out) = setup("data.kind = moons\nunlearn.alpha = 1.5\n");
    assert_eq!(
        unlearnq(&["train", "--config", &cfg, "--out", &out]).code,
        EXIT_CONFIG
    );
}

#[test]
fn unlearning_without_a_checkpoint_fails_as_a_run_error() {
    let (_dir, cfg, out) = setup(SMALL);
    let r = unlearnq(&[
        "unlearn", "--config", &cfg, "--out", &out, "--method", "oeu",
    ]);
    assert_eq!(r.code, EXIT_RUN);
    assert!(r.stderr.contains("original.ckpt"), "{}", r.stderr);
}

#[test]
fn compare_writes_tables_and_retrain_has_zero_gap() {
    let (_dir, cfg, out) = setup(SMALL);
    let r = unlearnq(&[
        "compare",
        "--config",
        &cfg,
        "--out",
        &out,
        "--seeds",
        "0,1",
        "--method",
        "oeu,ga,retrain",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let table: unlearnq::runner::CompareTable =
        serde_json::from_slice(&read(Path::new(&out).join("compare.json"))).unwrap();
    assert_eq!(table.seeds, vec![0, 1]);
    let retrain = table.row(unlearnq::unlearner::Method::Retrain).unwrap();
    assert_eq!(retrain.ag.mean, 0.0);
    assert_eq!(retrain.runs, 2);
    let csv = String::from_utf8(read(Path::new(&out).join("compare.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(r.stdout.contains("oeu"));
}

#[test]
fn flag_overrides_change_the_config_hash() {
    let (_dir, cfg, out) = setup(SMALL);
    let base = unlearnq(&[
        "compare", "--config", &cfg, "--out", &out, "--method", "oeu",
    ]);
    assert_eq!(base.code, EXIT_OK, "{}", base.stderr);
    let hash = |out: &str| {
        let t: unlearnq::runner::CompareTable =
            serde_json::from_slice(&read(Path::new(out).join("compare.json"))).unwrap();
        t.config_hash
    };
    let h0 = hash(&out);
    let r = unlearnq(&[
        "compare", "--config", &cfg, "--out", &out, "--method", "oeu", "--alpha", "0.5", "--bits",
        "8",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_ne!(h0, hash(&out));
    let r = unlearnq(&[
        "compare",
        "--config",
        &cfg,
        "--out",
        &out,
        "--method",
        "oeu",
        "--set",
        "bogus.key=1",
    ]);
    assert_eq!(r.code, EXIT_CONFIG);
}

#[test]
fn binary_runs_and_validates_thread_count() {
    let exe = env!("CARGO_BIN_EXE_unlearnq");
    let help = Command::new(exe).arg("--help").output().unwrap();
    assert!(help.status.success());
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in ["train", "unlearn", "evaluate", "compare", "ablate"] {
        assert!(text.contains(cmd), "{text}");
    }

    let (_dir, cfg, out) = setup(SMALL);
    let bad = Command::new(exe)
        .args(["ablate", "--config", &cfg, "--out", &out])
        .env("UNLEARNQ_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_CONFIG));

    let ok = Command::new(exe)
        .args(["ablate", "--config", &cfg, "--out", &out])
        .env("UNLEARNQ_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(
        ok.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(Path::new(&out).join("ablate.csv").exists());
}

#[test]
fn a_reports_embedded_config_reproduces_its_metrics() {
    let (_dir, cfg, out) = setup(SMALL);
    assert_eq!(
        unlearnq(&["train", "--config", &cfg, "--out", &out, "--seed", "5"]).code,
        EXIT_OK
    );
    let r = unlearnq(&[
        "unlearn", "--config", &cfg, "--out", &out, "--seed", "5", "--method", "ga",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let report: unlearnq::runner::RunReport =
        serde_json::from_slice(&read(Path::new(&out).join("seed-5/ga.report.json"))).unwrap();

    let embedded = unlearnq::config::ExperimentConfig::parse(&report.config).unwrap();
    assert_eq!(embedded.hash(), report.config_hash);
    let rerun =
        unlearnq::runner::run_seed(&embedded, report.seed, &[unlearnq::unlearner::Method::Ga])
            .unwrap();
    assert_eq!(rerun[0].report.metrics, report.metrics);
    assert_eq!(
        rerun[0].report.forget_entropy.to_bits(),
        report.forget_entropy.to_bits()
    );
}
