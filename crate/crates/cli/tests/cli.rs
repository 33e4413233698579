use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roadpatch_core::image::ImageBuffer;
use serde_json::Value;

/// Small, fast config: tiny raster, two iterations, two trials.
const SMALL: &str = r#"
schema_version = 1
scenario = "crosswalk"
resolution = [160, 90]

[nes]
population_n = 2
iterations = 2
checkpoint_every = 1
seed = 5

[objective]
k_eot = 1

[evaluation]
trials = 2
resamples = 200
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_roadpatch"));
    c.env_remove("ROADPATCH_ENDPOINT").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn roadpatch")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn optimize(tmp: &Path, cfg: &Path, out: &str) -> PathBuf {
    let out = tmp.join(out);
    let o = run(&["optimize", "--config", s(cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn optimize_then_evaluate_and_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL);
    let out = optimize(tmp.path(), &cfg, "opt");
    for f in ["best_patch.png", "loss_history.csv", "optimization.json", "config.json", "index.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("checkpoints/patch_iter_0001.png").is_file());
    let summary = json(&out.join("optimization.json"));
    assert_eq!(summary["candidate_evals"], 8);
    assert_eq!(summary["oracle_queries"], 8);
    assert_eq!(fs::read_to_string(out.join("loss_history.csv")).unwrap().lines().count(), 3);

    let ev = tmp.path().join("eval");
    let patch = out.join("best_patch.png");
    let o = run(&["evaluate", "--config", s(&cfg), "--patch", s(&patch), "--out", s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, json(&ev.join("metrics.json")));
    assert!(printed["asr_overall"].is_number());
    assert!(printed["baseline_rate"].is_number());
    for f in ["trials.json", "tables.csv", "asr_by_distance.svg"] {
        assert!(ev.join(f).is_file(), "missing {f}");
    }

    let o = run(&["verify", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(out.join("loss_history.csv"), "tampered\n").unwrap();
    let o = run(&["verify", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mismatch   loss_history.csv"));
}

#[test]
fn malformed_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &SMALL.replace("population_n = 2", "population_n = 0"));
    let o = run(&["optimize", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nes.population_n"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "typo.toml", &SMALL.replace("k_eot", "k_eott"));
    let o = run(&["optimize", "--config", s(&cfg), "--out", s(&tmp.path().join("o2"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k_eott"), "{}", stderr(&o));
}

#[test]
fn schema_mismatch_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "v9.toml", &SMALL.replace("schema_version = 1", "schema_version = 9"));
    let o = run(&["optimize", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains('9'), "{}", stderr(&o));
}

#[test]
fn unreachable_oracle_exits_3_and_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}\n[oracle]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:9\"\ntimeout_s = 2\nretries = 0\n");
    let cfg = write_config(tmp.path(), "http.toml", &body);
    let out = tmp.path().join("o");
    let o = run(&["optimize", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("checkpoints/patch_iter_0000.png").is_file());
    assert!(out.join("best_patch.png").is_file());
    let summary = json(&out.join("optimization.json"));
    assert_eq!(summary["status"]["kind"], "aborted");
}

#[test]
fn wrong_patch_size_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL);
    let patch = tmp.path().join("small.png");
    ImageBuffer::filled(256, 256, [200, 10, 10]).unwrap().save_png(&patch).unwrap();
    let o = run(&["evaluate", "--config", s(&cfg), "--patch", s(&patch), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("256x256"), "{}", stderr(&o));
}

#[test]
fn benign_only_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL);
    let ev = tmp.path().join("benign");
    let o = run(&["evaluate", "--config", s(&cfg), "--benign", "--out", s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&ev.join("metrics.json"));
    assert!(m.get("asr_overall").is_none());
    assert!(m.get("p_value").is_none());
    assert_eq!(m["counters"]["trials_adversarial"], 0);
    assert_eq!(m["counters"]["trials_benign"], 2);
    assert!(m["baseline_rate"].is_number());
}

#[test]
fn ten_trials_per_arm_report_a_p_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL);
    let patch = tmp.path().join("red.png");
    ImageBuffer::filled(512, 512, [255, 0, 0]).unwrap().save_png(&patch).unwrap();
    let ev = tmp.path().join("e");
    let o = run(&["evaluate", "--config", s(&cfg), "--patch", s(&patch), "--trials", "10", "--out", s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&ev.join("metrics.json"));
    let p = m["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(m["counters"]["trials_adversarial"], 10);
    assert!(m["asr_overall"].as_f64().unwrap() > m["baseline_rate"].as_f64().unwrap());
}

#[test]
fn evaluation_replays_from_its_config_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL);
    let patch = tmp.path().join("red.png");
    ImageBuffer::filled(512, 512, [255, 0, 0]).unwrap().save_png(&patch).unwrap();
    let first = tmp.path().join("first");
    let o = run(&["evaluate", "--config", s(&cfg), "--patch", s(&patch), "--out", s(&first)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = tmp.path().join("second");
    let snapshot = first.join("config.json");
    let o = run(&["evaluate", "--config", s(&snapshot), "--patch", s(&patch), "--out", s(&second)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(first.join("metrics.json")).unwrap(), fs::read(second.join("metrics.json")).unwrap());
    assert_eq!(fs::read(first.join("trials.json")).unwrap(), fs::read(second.join("trials.json")).unwrap());
}

#[test]
fn report_merges_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL);
    let patch = tmp.path().join("red.png");
    ImageBuffer::filled(512, 512, [255, 0, 0]).unwrap().save_png(&patch).unwrap();
    let runs: Vec<PathBuf> = ["run_a", "run_b"]
        .iter()
        .map(|n| {
            let d = tmp.path().join(n);
            let o = run(&["evaluate", "--config", s(&cfg), "--patch", s(&patch), "--out", s(&d)]);
            assert!(o.status.success(), "{}", stderr(&o));
            d
        })
        .collect();

    let single = tmp.path().join("single");
    let o = run(&["report", "--out", s(&single), s(&runs[0])]);
    assert!(o.status.success(), "{}", stderr(&o));
    let single_rows = fs::read_to_string(single.join("tables.csv")).unwrap().lines().count() - 1;
    assert_eq!(fs::read_to_string(single.join("tables.csv")).unwrap(), fs::read_to_string(runs[0].join("tables.csv")).unwrap());

    let merged = tmp.path().join("merged");
    let o = run(&["report", "--out", s(&merged), s(&runs[0]), s(&runs[1])]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(merged.join("tables.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 2 * single_rows);
    assert!(csv.contains("run_a") && csv.contains("run_b"));
    let svg = fs::read_to_string(merged.join("asr_by_distance.svg")).unwrap();
    assert!(svg.contains(">run_a<") && svg.contains(">run_b<"), "{svg}");

    let o = run(&["report", "--out", s(&tmp.path().join("none"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn init_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    for (fmt, ext) in [("toml", "toml"), ("json", "json")] {
        let o = run(&["init-config", "--scenario", "highway", "--format", fmt]);
        assert!(o.status.success(), "{}", stderr(&o));
        let p = write_config(tmp.path(), &format!("highway.{ext}"), &String::from_utf8(o.stdout).unwrap());
        let cfg = roadpatch_core::run::RunConfig::load(&p).unwrap();
        assert_eq!(cfg.scenario, "highway");
        assert_eq!(cfg.scenario().patch_pixels, [1024, 512]);
    }
    let o = run(&["init-config", "--scenario", "parking-lot"]);
    assert_eq!(o.status.code(), Some(2));
}
