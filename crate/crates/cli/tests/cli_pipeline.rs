use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csilab_cli::report::read_csv;

fn csilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csilab"))
        .args(args)
        .env_remove("CSILAB_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL_STATIC: &str = r#"
kind = "static"
seed = 11
[features]
codebook_size = 20
[model]
hidden = [16]
[training]
epochs = 2
[evaluation]
train_points = 120
test_points = 40
"#;

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    read_csv(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run.log")
        .collect();
    v.sort();
    v
}

#[test]
fn test_rerun_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SMALL_STATIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = csilab(&["run", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (report_files(&a), report_files(&b));
    assert_eq!(fa.len(), 5);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?}");
    }
    assert!(a.join("run.log").exists());
}

#[test]
fn test_reports_carry_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SMALL_STATIC);
    let out = dir.path().join("o");
    assert!(csilab(&["run", s(&cfg), "--out", s(&out), "--seed", "12"]).status.success());
    for f in report_files(&out) {
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.contains("config_hash "), "{f:?}");
        assert!(text.contains("seed 12"), "{f:?}");
    }
}

#[test]
fn test_stepwise_subcommands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SMALL_STATIC);
    let (whole, steps) = (dir.path().join("whole"), dir.path().join("steps"));
    assert!(csilab(&["run", s(&cfg), "--out", s(&whole)]).status.success());
    for cmd in [&["dataset", "build"][..], &["train"][..], &["eval"][..]] {
        let mut args = cmd.to_vec();
        args.extend(["--config", s(&cfg), "--out", s(&steps)]);
        let o = csilab(&args);
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["static_cdf.csv", "static_summary.csv", "model.ckpt", "test.dataset"] {
        assert_eq!(std::fs::read(whole.join(name)).unwrap(), std::fs::read(steps.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn test_static_oracle_cdf_steps_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "o.toml", &format!("{SMALL_STATIC}\n[model]\noracle = true\n").replace("[model]\nhidden = [16]\n", ""));
    let out = dir.path().join("o");
    let o = csilab(&["run", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(&out.join("static_cdf.csv"));
    assert_eq!(h, vec!["error", "model_top1", "model_top2", "random"]);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 1.0);
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn test_dependence_report_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "d.toml",
        "kind = \"dependence\"\nseed = 1\n[features]\ncodebook_size = 20\n[evaluation]\nsample_counts = [50, 200]\n",
    );
    let out = dir.path().join("d");
    assert!(csilab(&["analyze", "dependence", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let (h, rows) = table(&out.join("dependence.csv"));
    assert_eq!(h, vec!["samples", "H_sbs_bits", "MI_bits", "avg_cca"]);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let (hb, mi): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!(mi <= hb + 1e-12 && mi >= 0.0);
    }
}

#[test]
fn test_sequence_grouping_scaling_and_scene_pipelines() {
    let dir = tempfile::tempdir().unwrap();
    let seq = write_config(
        dir.path(),
        "q.toml",
        "kind = \"sequence\"\nseed = 2\n[features]\ncodebook_size = 20\n[model]\nhidden = [8]\ngru_hidden = 4\n[training]\nepochs = 1\n[evaluation]\ntrajectories = 8\ntrain_trajectories = 6\n",
    );
    let out = dir.path().join("q");
    let o = csilab(&["run", s(&seq), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(&out.join("sequence.csv"));
    assert_eq!(h, vec!["delay", "count", "sequence_model", "static_model", "location"]);
    assert_eq!(rows.last().unwrap()[0], "all");
    assert!(out.join("gru.ckpt").exists() && out.join("sequence_paired.csv").exists());

    let grp = write_config(
        dir.path(),
        "g.toml",
        "kind = \"grouping\"\nseed = 3\n[features]\ncodebook_size = 32\nsnapshots = 2\n[model]\nhidden = [8]\n[training]\nepochs = 1\n[evaluation]\nuser_counts = [2, 4]\ndrops = 2\nsinr_min = 0.2\ntaus = [0.3, 0.5]\naps_train_points = 20\n",
    );
    let out = dir.path().join("g");
    let o = csilab(&["run", s(&grp), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(&out.join("grouping.csv"));
    assert_eq!(h, vec!["user_count", "mode", "tau", "mean_sum_rate", "ci95"]);
    assert_eq!(rows.len(), 2 * 2 * 4);
    let o = csilab(&["group", "eval", "--config", s(&grp), "--out", s(&dir.path().join("g2"))]);
    assert!(o.status.success());
    let (_, rows) = table(&dir.path().join("g2").join("grouping.csv"));
    assert!(rows.iter().all(|r| r[1] != "inferred-aps"));

    let sc = write_config(dir.path(), "c.toml", "kind = \"scaling\"\nseed = 4\n[evaluation]\nelement_counts = [8, 16]\ntrials = 20\n");
    let out = dir.path().join("c");
    assert!(csilab(&["analyze", "scaling", "--config", s(&sc), "--out", s(&out)]).status.success());
    let (_, rows) = table(&out.join("scaling.csv"));
    assert_eq!(rows.len(), 4);

    let out = dir.path().join("scene");
    assert!(csilab(&["scene", "sample", "--config", s(&grp), "--out", s(&out)]).status.success());
    let (_, rows) = table(&out.join("scene.csv"));
    assert_eq!(rows.iter().filter(|r| r[0] == "site").count(), 2);
}

#[test]
fn test_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "kind = \"static\"\nseed = 1\n[features]\ncodebook_size = 20\nwhat = 1\n");
    let o = csilab(&["run", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("features.what"));

    let missing = csilab(&["run", s(&dir.path().join("nope.toml"))]);
    assert_eq!(missing.status.code(), Some(2));

    let cfg = write_config(dir.path(), "s.toml", SMALL_STATIC);
    let o = csilab(&["eval", "--config", s(&cfg), "--out", s(&dir.path().join("empty"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset failed"));
}

#[test]
fn test_example_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        csilab_cli::parse_config(&p).unwrap_or_else(|err| panic!("{p:?}: {err}"));
        n += 1;
    }
    assert!(n >= 5);
}
