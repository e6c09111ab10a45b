use std::fs;
use std::process::Command;

use cla_cli::{cmd_run, cmd_synth, cmd_trace, load_data, read_trace, sidecar_path, Config, GroundTruth};
use cla_core::data::RegimeSpec;
use cla_core::engine::{RunResult, StepTrace};
use cla_core::recall::Balancing;

const CONFIG: &str = r#"
[run]
runs = 2
seed = 11
jobs = 1

[engine]
mode = "simweight"
horizon = 2
stride = 2
train_window = 2
burn_in = 4

[engine.train]
hidden = [3]
max_epochs = 40

[backtest]
periods_per_year = 12.0

[regime]
n_regimes = 2
regime_length = 5
regime_sequence = [0, 1, 0]
maps = [[0.6, -0.3, 0.2], [-0.5, 0.4, 0.7]]
noise_sd = 0.05
n_securities = 20
n_features = 3
lag_correlation = [-0.8, 0.8]
seed = 3
"#;

fn config() -> Config {
    Config::from_toml(CONFIG).unwrap()
}

#[test]
fn synth_writes_panel_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("panel.csv");
    let side = cmd_synth(&config(), &out).unwrap();
    assert_eq!(side, sidecar_path(&out));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 15 * 20);
    let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(&side).unwrap()).unwrap();
    assert_eq!(truth.boundaries, vec![5, 10]);
    assert_eq!(truth.regimes.len(), 15);

    let again = dir.path().join("again.csv");
    cmd_synth(&config(), &again).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    assert_eq!(fs::read(&side).unwrap(), fs::read(sidecar_path(&again)).unwrap());
}

#[test]
fn missing_seed_is_named() {
    let text = CONFIG.replace("seed = 3\n", "");
    let err = Config::from_toml(&text).unwrap_err();
    assert!(format!("{err:#}").contains("seed"), "{err:#}");
}

#[test]
fn invalid_regime_names_the_key() {
    let text = CONFIG.replace("n_features = 3", "n_features = 4");
    let err = Config::from_toml(&text).unwrap_err();
    assert!(format!("{err:#}").contains("regime.maps"), "{err:#}");
}

#[test]
fn base_only_single_run_has_zero_relative_return() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let mut cfg = config();
    cmd_synth(&cfg, &panel).unwrap();
    cfg.run.runs = 1;
    cfg.engine.mode = Balancing::Base;
    let data = load_data(&cfg, &panel).unwrap();
    let s = cmd_run(&cfg, &data, &dir.path().join("out")).unwrap();
    assert_eq!(s.runs.len(), 1);
    assert_eq!(s.runs[0].stats.relative_return, 0.0);
    let stats = fs::read_to_string(dir.path().join("out/stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 1 + 1 + 4);

    let report = dir.path().join("report");
    let r = cmd_trace(&cfg, &dir.path().join("out/run_000/trace.json"), &report).unwrap();
    let weights = fs::read_to_string(report.join("weights.csv")).unwrap();
    let mut lines = weights.lines();
    assert_eq!(lines.next().unwrap(), "period,winner,base");
    assert!(lines.all(|l| l.split(',').nth(1) == Some("base")));
    assert_eq!(weights.lines().count(), 1 + r.steps.len());
}

#[test]
fn runs_get_distinct_seeds_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let cfg = config();
    cmd_synth(&cfg, &panel).unwrap();
    let data = load_data(&cfg, &panel).unwrap();
    let a = cmd_run(&cfg, &data, &dir.path().join("a")).unwrap();
    assert_eq!(a.runs.len(), 2);
    assert_ne!(a.runs[0].seed, a.runs[1].seed);
    let t0 = read_trace(&fs::read_to_string(dir.path().join("a/run_000/trace.json")).unwrap()).unwrap();
    let t1 = read_trace(&fs::read_to_string(dir.path().join("a/run_001/trace.json")).unwrap()).unwrap();
    let d0: Vec<f64> = t0.steps.iter().flat_map(|s| s.columns.iter().map(|c| c.distance)).collect();
    let d1: Vec<f64> = t1.steps.iter().flat_map(|s| s.columns.iter().map(|c| c.distance)).collect();
    assert_ne!(d0, d1);

    cmd_run(&cfg, &data, &dir.path().join("b")).unwrap();
    for f in ["stats.csv", "summary.json", "run_000/trace.json", "run_001/forecasts.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn report_has_a_column_per_memory() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let mut cfg = config();
    cmd_synth(&cfg, &panel).unwrap();
    cfg.run.runs = 1;
    cfg.engine.fixed_jcrit = Some(0.0);
    cfg.engine.capacity = Some(4);
    let data = load_data(&cfg, &panel).unwrap();
    cmd_run(&cfg, &data, &dir.path().join("out")).unwrap();
    let report = dir.path().join("report");
    let r = cmd_trace(&cfg, &dir.path().join("out/run_000/trace.json"), &report).unwrap();
    let last = r.steps.last().unwrap();
    assert_eq!(last.columns.len(), 5);
    let weights = fs::read_to_string(report.join("weights.csv")).unwrap();
    let header: Vec<&str> = weights.lines().next().unwrap().split(',').collect();
    let ever: std::collections::BTreeSet<usize> =
        r.steps.iter().flat_map(|s| s.columns.iter().filter(|c| !c.is_base).map(|c| c.id)).collect();
    assert_eq!(header.len(), 3 + ever.len());
    let value = fs::read_to_string(report.join("value.csv")).unwrap();
    assert!(value.starts_with("period,cla,base\n"));
}

#[test]
fn malformed_trace_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let mut cfg = config();
    cmd_synth(&cfg, &panel).unwrap();
    cfg.run.runs = 1;
    let data = load_data(&cfg, &panel).unwrap();
    cmd_run(&cfg, &data, &dir.path().join("out")).unwrap();
    let text = fs::read_to_string(dir.path().join("out/run_000/trace.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["steps"][3]["weight_typo"] = serde_json::json!(1);
    v["steps"][3].as_object_mut().unwrap().remove("columns");
    let err = read_trace(&v.to_string()).unwrap_err();
    assert!(format!("{err:#}").contains("trace record 3"), "{err:#}");
    assert!(read_trace("{not json").is_err());
}

#[test]
fn binary_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cla.toml");
    fs::write(&cfg_path, CONFIG).unwrap();
    let bin = env!("CARGO_BIN_EXE_cla");
    let panel = dir.path().join("panel.csv");
    let ok = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let c = cfg_path.to_str().unwrap();
    ok(&["synth", "--config", c, "--out", panel.to_str().unwrap()]);
    let out = dir.path().join("out");
    ok(&["run", "--config", c, "--data", panel.to_str().unwrap(), "--out", out.to_str().unwrap(), "--runs", "1", "--mode", "equal"]);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"mode\": \"equal\""));
    let trace = out.join("run_000/trace.json");
    ok(&["trace", "--config", c, "--data", trace.to_str().unwrap(), "--out", dir.path().join("rep").to_str().unwrap()]);
    assert!(dir.path().join("rep/weights.csv").exists());

    let printed = ok(&["--config", c, "--seed", "77", "--print-config"]);
    let back = Config::from_toml(&printed).unwrap();
    assert_eq!(back.run.seed, 77);
    assert_eq!(back.engine.horizon, 2);

    let bad = Command::new(bin).args(["run", "--config", c, "--data", "/nonexistent.csv", "--out", out.to_str().unwrap()]).output().unwrap();
    assert!(!bad.status.success());
}

/// Regime of the winning column's training context (the live base included).
fn winner_regime(step: &StepTrace<f64>, truth: &GroundTruth) -> usize {
    let c = step.columns.iter().find(|c| c.id == step.winner).unwrap();
    truth.regimes[truth.periods.iter().position(|p| *p == c.context_period).unwrap()]
}

fn recurring_regime_trace(seed: u64) -> (RunResult<f64>, GroundTruth) {
    let maps = vec![
        vec![0.41, -0.22, 0.35, 0.10, -0.47, 0.28, -0.05, 0.31],
        vec![-0.38, 0.44, -0.12, 0.29, 0.21, -0.33, 0.40, -0.18],
    ];
    let mut cfg = Config::default();
    cfg.regime = Some(RegimeSpec {
        n_regimes: 2,
        regime_length: 10,
        regime_sequence: vec![0, 1, 0],
        maps,
        noise_sd: 0.05,
        n_securities: 100,
        n_features: 8,
        lag_correlation: Some(vec![0.0, -0.9]),
        seed,
    });
    cfg.run.runs = 1;
    cfg.engine.horizon = 1;
    cfg.engine.stride = 1;
    cfg.engine.train_window = 2;
    cfg.engine.burn_in = Some(0);
    cfg.engine.dtw.samples = 1000;
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let side = cmd_synth(&cfg, &panel).unwrap();
    let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(side).unwrap()).unwrap();
    let data = load_data(&cfg, &panel).unwrap();
    cmd_run(&cfg, &data, &dir.path().join("out")).unwrap();
    let res = cmd_trace(&cfg, &dir.path().join("out/run_000/trace.json"), &dir.path().join("report")).unwrap();
    (res, truth)
}

// Into regime 1 the switch comes from the retrained base; back into regime 0
// it has to come from a remembered column, since the base still carries
// regime 1 context for `horizon` periods.
#[test]
fn winner_switches_track_regime_boundaries() {
    for seed in 0..20 {
        let (res, truth) = recurring_regime_trace(seed);
        let steps: Vec<(usize, usize, bool)> = res
            .steps
            .iter()
            .map(|s| (s.period.parse().unwrap(), winner_regime(s, &truth), s.winner == s.columns[0].id))
            .collect();
        let mut start = steps[0].0;
        for &b in &truth.boundaries {
            let (old, new) = (truth.regimes[b - 1], truth.regimes[b]);
            let settled = steps.iter().filter(|(t, ..)| *t + 2 >= start + 4 && *t + 2 < b);
            assert!(settled.clone().all(|(_, r, _)| *r == old), "seed {seed}: regime {old} not held before {b}");
            let (t, _, base) = *steps.iter().find(|(t, r, _)| *t + 2 >= b && *r == new).unwrap();
            assert!(t.abs_diff(b) <= 2, "seed {seed}: switch to regime {new} at {t}, boundary {b}");
            if b == *truth.boundaries.last().unwrap() {
                assert!(!base, "seed {seed}: return to regime {new} not led by a memory");
            }
            start = b;
        }
    }
}
