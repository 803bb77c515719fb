use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
scenario.dgp = "iid-gaussian"
scenario.t = 160
scenario.p = 3
window.l = 12
window.h = 3
backbone.conv_filters = 4
backbone.embed_dim = 8
backbone.heads = 2
backbone.ff_width = 8
backbone.lstm_hidden = 3
backbone.latent_dim = 4
backbone.refine_hidden = 8
backbone.epochs = 2
scoring.knn_k = 5
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_regen-tad"));
    c.env("REGEN_TAD_WORKERS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn simulate_writes_the_panel_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(files(&a), vec!["manifest.json", "panel.csv", "truth.json"]);
    let panel = std::fs::read_to_string(a.join("panel.csv")).unwrap();
    let lines: Vec<&str> = panel.lines().collect();
    assert_eq!(lines.len(), 1 + 160);
    assert_eq!(lines[0].split(',').count(), 3);
    assert_eq!(std::fs::read(a.join("panel.csv")).unwrap(), std::fs::read(b.join("panel.csv")).unwrap());
}

#[test]
fn unknown_key_exits_with_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}\nbackbone.widht = 3\n"));
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("backbone.widht"));
    assert!(files(&out).is_empty(), "partial output left behind: {:?}", files(&out));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&["detect"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn split_violation_has_its_own_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("scenario.t = 160", "scenario.t = 20"));
    let out = tmp.path().join("out");
    let o = run(&["detect", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(files(&out).iter().all(|f| f != "scores.csv"));
}

#[test]
fn detect_emits_all_artifacts_and_reproduces_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = run(&["detect", "--config", s(&cfg), "--out", s(out), "--mode", "rank"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["scores.csv", "detections.csv", "attribution.json", "manifest.json", "model.ckpt"] {
        assert!(a.join(f).is_file(), "{f} missing");
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let det = std::fs::read_to_string(a.join("detections.csv")).unwrap();
    let rows: Vec<&str> = det.lines().skip(1).collect();
    let flagged = rows.iter().filter(|r| r.ends_with(",1")).count();
    assert_eq!(flagged, (0.05 * rows.len() as f64).ceil() as usize);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    for key in ["calibration_hash", "seed", "config", "purify"] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
}

#[test]
fn detect_on_a_saved_panel_then_reattribute() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let sim = tmp.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let panel = sim.join("panel.csv");
    let det = tmp.path().join("det");
    let o = run(&["detect", "--config", s(&cfg), "--out", s(&det), "--panel", s(&panel)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let att = tmp.path().join("att");
    let o = run(&["attribute", "--run", s(&det), "--out", s(&att), "--panel", s(&panel)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(det.join("attribution.json")).unwrap(),
        std::fs::read(att.join("attribution.json")).unwrap()
    );
    // A panel other than the one the run saw is refused.
    let other = tmp.path().join("other.csv");
    let text = std::fs::read_to_string(&panel).unwrap().replacen(",", ",1", 4);
    std::fs::write(&other, text).unwrap();
    let att2 = tmp.path().join("att2");
    let o = run(&["attribute", "--run", s(&det), "--out", s(&att2), "--panel", s(&other)]);
    assert!(!o.status.success());
    assert!(!att2.join("attribution.json").exists());
}

#[test]
fn benchmark_writes_one_directory_per_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL}\nbenchmark.suites = [\"clean_fpr\", \"horizon_sweep\"]\nbenchmark.replications = 1\nbenchmark.t = 160\nbenchmark.p = 3\nbenchmark.dgps = [\"iid-gaussian\"]\nbenchmark.horizons = [1, 3]\n"
    );
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("bench");
    let o = run(&["benchmark", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out), vec!["clean_fpr", "horizon_sweep"]);
    let horizon = std::fs::read_to_string(out.join("horizon_sweep").join("horizon.csv")).unwrap();
    assert_eq!(horizon.lines().count(), 1 + 2);
    assert!(out.join("clean_fpr").join("clean_fpr.csv").is_file());
}
