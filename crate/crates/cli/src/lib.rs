//! Configuration and the three commands behind the `cla` binary: synthesize a
//! regime-switching panel, run Monte Carlo simulations, and turn a run trace
//! into plot-ready report tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use cla_core::backtest::{perf_stats, strategy_returns, PerfStats};
use cla_core::data::{generate_synthetic_regimes, load_panel, Dataset, PanelSchema, RegimeSpec};
use cla_core::engine::{run, EngineConfig, RunResult, StepTrace};
use cla_core::recall::Balancing;
use cla_core::rng::run_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Everything a command can be configured with. Every section is optional
/// in the file; missing keys take the defaults printed by `--print-config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub data: PanelSchema,
    pub engine: EngineConfig,
    pub backtest: BacktestConfig,
    /// Only needed by `synth`.
    pub regime: Option<RegimeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub runs: usize,
    /// Master seed; run `k` uses `seed + k`.
    pub seed: u64,
    /// Worker threads for parallel runs; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { runs: 50, seed: 0, jobs: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub decile: f64,
    /// Panel periods per calendar year (12 for monthly data).
    pub periods_per_year: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { decile: 0.1, periods_per_year: 12.0 }
    }
}

/// Command-line settings that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub runs: Option<usize>,
    pub mode: Option<Balancing>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate().context("engine")?;
        if let Some(r) = &self.regime {
            r.validate()?;
        }
        if !(self.backtest.decile > 0.0 && self.backtest.decile <= 0.5) {
            bail!("backtest.decile: must lie in (0, 0.5]");
        }
        if !(self.backtest.periods_per_year > 0.0) {
            bail!("backtest.periods_per_year: must be positive");
        }
        if self.run.runs == 0 {
            bail!("run.runs: must be >= 1");
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(r) = o.runs {
            self.run.runs = r;
        }
        if let Some(m) = o.mode {
            self.engine.mode = m;
        }
        if let Some(j) = o.jobs {
            self.run.jobs = j;
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        self.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Writes through a sibling temp file and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Ground truth written next to a synthesized panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub periods: Vec<String>,
    pub regimes: Vec<usize>,
    pub boundaries: Vec<usize>,
}

/// `<panel>.truth.json` beside the panel CSV.
pub fn sidecar_path(panel: &Path) -> PathBuf {
    panel.with_extension("truth.json")
}

/// Writes the synthetic panel CSV and its ground-truth sidecar; returns the
/// sidecar path.
pub fn cmd_synth(cfg: &Config, out: &Path) -> Result<PathBuf> {
    let spec = cfg.regime.as_ref().context("config has no [regime] section")?;
    let panel = generate_synthetic_regimes::<f64>(spec)?;
    let mut csv = Vec::new();
    panel.dataset.write_csv(&mut csv)?;
    write_atomic(out, &csv)?;
    let truth = GroundTruth { periods: panel.dataset.periods.clone(), regimes: panel.regimes, boundaries: panel.boundaries };
    let side = sidecar_path(out);
    write_atomic(&side, serde_json::to_string_pretty(&truth)?.as_bytes())?;
    Ok(side)
}

/// One simulation of a Monte Carlo batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub mae_cla: Option<f64>,
    pub mae_base: Option<f64>,
    pub memories: usize,
    pub stats: PerfStats<f64>,
}

/// Min, max, mean and median of one statistic across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl Spread {
    /// `None` when no run defines the statistic.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Self { min: v[0], max: v[n - 1], mean: v.iter().sum::<f64>() / n as f64, median })
    }
}

/// Statistic columns of `stats.csv`, in order.
pub const STAT_COLUMNS: [&str; 13] = [
    "mae_cla",
    "mae_base",
    "total_return",
    "sd",
    "sharpe",
    "relative_return",
    "tracking_sd",
    "information_ratio",
    "hit_rate",
    "sign_test_p",
    "sharpe_t_p",
    "ir_t_p",
    "observations",
];

fn stat_values(r: &RunSummary) -> [Option<f64>; 13] {
    let s = &r.stats;
    [
        r.mae_cla,
        r.mae_base,
        Some(s.total_return),
        Some(s.sd),
        s.sharpe,
        Some(s.relative_return),
        Some(s.tracking_sd),
        s.information_ratio,
        Some(s.hit_rate),
        Some(s.sign_test_p),
        s.sharpe_t_p,
        s.ir_t_p,
        Some(s.observations as f64),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Balancing,
    pub master_seed: u64,
    pub runs: Vec<RunSummary>,
    /// Keyed like the `stats.csv` columns; absent when no run defines it.
    pub aggregate: Vec<(String, Option<Spread>)>,
}

fn summarize(cfg: &Config, k: usize, result: &RunResult<f64>) -> Result<RunSummary> {
    let series = strategy_returns(result, cfg.backtest.decile)?;
    let per_year = cfg.backtest.periods_per_year / cfg.engine.stride as f64;
    let stats = perf_stats(&series.cla, &series.base, per_year).context("backtest")?;
    let mae = result.mae();
    Ok(RunSummary {
        run: k,
        seed: result.seed,
        mae_cla: mae.map(|m| m.0),
        mae_base: mae.map(|m| m.1),
        memories: result.store.len(),
        stats,
    })
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stats_csv(summary: &Summary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run", "seed"];
    header.extend(STAT_COLUMNS);
    w.write_record(&header)?;
    for r in &summary.runs {
        let mut rec = vec![r.run.to_string(), r.seed.to_string()];
        rec.extend(stat_values(r).into_iter().map(fmt_cell));
        w.write_record(&rec)?;
    }
    for (label, pick) in [("min", 0), ("max", 1), ("mean", 2), ("median", 3)] {
        let mut rec = vec![label.to_string(), String::new()];
        for (_, spread) in &summary.aggregate {
            rec.push(fmt_cell(spread.map(|s| [s.min, s.max, s.mean, s.median][pick])));
        }
        w.write_record(&rec)?;
    }
    Ok(w.into_inner()?)
}

/// Runs `cfg.run.runs` simulations in parallel and writes, under `out`:
/// `run_NNN/trace.json`, `run_NNN/forecasts.csv`, `stats.csv` (one row per
/// run plus min/max/mean/median rows) and `summary.json`.
pub fn cmd_run(cfg: &Config, data: &Dataset<f64>, out: &Path) -> Result<Summary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.jobs).build()?;
    let results: Vec<Result<RunResult<f64>>> = pool.install(|| {
        (0..cfg.run.runs)
            .into_par_iter()
            .map(|k| {
                let engine = EngineConfig { seed: run_seed(cfg.run.seed, k as u64), ..cfg.engine.clone() };
                run(data, &engine).with_context(|| format!("run {k}"))
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    for (k, res) in results.into_iter().enumerate() {
        let res = res?;
        let dir = out.join(format!("run_{k:03}"));
        write_atomic(&dir.join("trace.json"), res.to_json()?.as_bytes())?;
        let mut fc = Vec::new();
        res.write_forecast_csv(&mut fc)?;
        write_atomic(&dir.join("forecasts.csv"), &fc)?;
        runs.push(summarize(cfg, k, &res).with_context(|| format!("run {k}"))?);
    }
    let aggregate = STAT_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), Spread::of(runs.iter().map(|r| stat_values(r)[i]))))
        .collect();
    let summary = Summary { mode: cfg.engine.mode, master_seed: cfg.run.seed, runs, aggregate };
    write_atomic(&out.join("stats.csv"), &stats_csv(&summary)?)?;
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

/// Loads the panel named by `path` with the configured schema.
pub fn load_data(cfg: &Config, path: &Path) -> Result<Dataset<f64>> {
    load_panel(path, &cfg.data).with_context(|| format!("loading panel {}", path.display()))
}

/// Parses a trace file, naming the first step that fails to decode.
pub fn read_trace(text: &str) -> Result<RunResult<f64>> {
    let value: serde_json::Value = serde_json::from_str(text).context("trace is not valid JSON")?;
    let steps = value.get("steps").and_then(|s| s.as_array()).context("trace has no `steps` array")?;
    for (i, s) in steps.iter().enumerate() {
        StepTrace::<f64>::deserialize(s).with_context(|| format!("trace record {i}"))?;
    }
    Ok(RunResult::deserialize(&value).context("trace header")?)
}

fn column_label(id: usize, is_base: bool) -> String {
    if is_base {
        "base".into()
    } else {
        format!("m{id}")
    }
}

/// Per-period weights of the base column and of every memory that ever
/// appears, plus the winning column. Memories absent in a period get an
/// empty cell.
pub fn weights_table(result: &RunResult<f64>) -> Result<Vec<u8>> {
    let mut ids: Vec<usize> = result.steps.iter().flat_map(|s| s.columns.iter().filter(|c| !c.is_base).map(|c| c.id)).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["period".to_string(), "winner".to_string(), "base".to_string()];
    header.extend(ids.iter().map(|&id| column_label(id, false)));
    w.write_record(&header)?;
    for s in &result.steps {
        let win = s.columns.iter().find(|c| c.id == s.winner).map_or("base".into(), |c| column_label(c.id, c.is_base));
        let mut rec = vec![s.period.clone(), win, s.columns[0].weight.to_string()];
        for id in &ids {
            rec.push(s.columns.iter().skip(1).find(|c| c.id == *id).map(|c| c.weight.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    Ok(w.into_inner()?)
}

/// Growth of $1 invested in the CLA and base long/short strategies.
pub fn value_table(result: &RunResult<f64>, decile: f64) -> Result<Vec<u8>> {
    let series = strategy_returns(result, decile)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["period", "cla", "base"])?;
    let (mut c, mut b) = (1.0, 1.0);
    for (i, p) in series.periods.iter().enumerate() {
        c *= 1.0 + series.cla[i];
        b *= 1.0 + series.base[i];
        w.write_record([p.clone(), c.to_string(), b.to_string()])?;
    }
    Ok(w.into_inner()?)
}

/// Writes `weights.csv` and `value.csv` for the trace at `trace` into `out`.
pub fn cmd_trace(cfg: &Config, trace: &Path, out: &Path) -> Result<RunResult<f64>> {
    let text = fs::read_to_string(trace).with_context(|| format!("reading trace {}", trace.display()))?;
    let result = read_trace(&text).with_context(|| format!("trace {}", trace.display()))?;
    write_atomic(&out.join("weights.csv"), &weights_table(&result)?)?;
    write_atomic(&out.join("value.csv"), &value_table(&result, cfg.backtest.decile)?)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_of_values() {
        let s = Spread::of([Some(3.0), None, Some(1.0), Some(2.0), Some(10.0)]).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.median), (1.0, 10.0, 4.0, 2.5));
        assert_eq!(Spread::of([None, None]), None);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), cfg);
        assert_eq!(Config::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(Config::from_toml("[engine]\nhorizon = 0\n").is_err());
        assert!(Config::from_toml("[engine]\nhorizn = 3\n").is_err());
        assert!(Config::from_toml("[backtest]\ndecile = 0.9\n").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = Config::default();
        let o = Overrides { runs: Some(3), mode: Some(Balancing::Equal), jobs: Some(2), seed: Some(9) };
        cfg.apply(&o).unwrap();
        assert_eq!((cfg.run.runs, cfg.engine.mode, cfg.run.jobs, cfg.run.seed), (3, Balancing::Equal, 2, 9));
    }
}
