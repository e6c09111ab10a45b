//! Decile long/short portfolios, holding-span returns and performance
//! statistics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::engine::RunResult;
use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

/// Equal-weighted long and short books formed at one rebalance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    pub period: String,
    pub long: Vec<String>,
    pub short: Vec<String>,
}

impl Portfolio {
    pub fn long_weight(&self) -> f64 {
        1.0 / self.long.len() as f64
    }

    pub fn short_weight(&self) -> f64 {
        -1.0 / self.short.len() as f64
    }
}

/// Top `decile` of forecasts long, bottom `decile` short, `ceil(n * decile)`
/// names per side. Forecast ties are ordered by security id.
pub fn construct_portfolio<T: Scalar>(period: &str, securities: &[String], forecasts: &[T], decile: f64) -> Result<Portfolio> {
    if securities.len() != forecasts.len() {
        return Err(ClaError::ShapeMismatch { expected: securities.len(), found: forecasts.len() });
    }
    let n = securities.len();
    if n < 10 {
        return Err(ClaError::InvalidArgument(format!("portfolio needs at least 10 securities, got {n}")));
    }
    if !(decile > 0.0 && decile <= 0.5) {
        return Err(ClaError::InvalidArgument(format!("decile {decile} outside (0, 0.5]")));
    }
    let q = ((n as f64 * decile) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        forecasts[b]
            .partial_cmp(&forecasts[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| securities[a].cmp(&securities[b]))
    });
    Ok(Portfolio {
        period: period.to_string(),
        long: order[..q].iter().map(|&i| securities[i].clone()).collect(),
        short: order[n - q..].iter().map(|&i| securities[i].clone()).collect(),
    })
}

/// Realized one-period returns by period and security.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReturnPanel<T: Scalar> {
    pub periods: Vec<String>,
    pub returns: Vec<HashMap<String, T>>,
}

impl<T: Scalar> ReturnPanel<T> {
    pub fn push(&mut self, period: impl Into<String>, returns: HashMap<String, T>) {
        self.periods.push(period.into());
        self.returns.push(returns);
    }

    fn index_of(&self, period: &str) -> Option<usize> {
        self.periods.iter().position(|p| p == period)
    }

    /// Compounded return of `security` over `stride` periods from `start`.
    pub fn span_return(&self, security: &str, start: usize, stride: usize) -> Result<T> {
        let mut growth = T::one();
        for p in start..start + stride {
            let missing = || ClaError::MissingReturn {
                security: security.to_string(),
                period: self.periods.get(p).cloned().unwrap_or_else(|| format!("#{p}")),
            };
            let r = self.returns.get(p).ok_or_else(missing)?.get(security).ok_or_else(missing)?;
            growth *= T::one() + *r;
        }
        Ok(growth - T::one())
    }
}

fn side_mean<T: Scalar>(names: &[String], panel: &ReturnPanel<T>, start: usize, stride: usize) -> Result<T> {
    let mut s = T::zero();
    for n in names {
        s += panel.span_return(n, start, stride)?;
    }
    Ok(s / T::from_count(names.len()))
}

/// Long-minus-short return of each portfolio over its holding span.
pub fn compute_returns<T: Scalar>(portfolios: &[Portfolio], panel: &ReturnPanel<T>, stride: usize) -> Result<Vec<T>> {
    if stride == 0 {
        return Err(ClaError::InvalidArgument("stride must be >= 1".into()));
    }
    portfolios
        .iter()
        .map(|p| {
            let start = panel
                .index_of(&p.period)
                .ok_or_else(|| ClaError::InvalidArgument(format!("period `{}` not in return panel", p.period)))?;
            Ok(side_mean(&p.long, panel, start, stride)? - side_mean(&p.short, panel, start, stride)?)
        })
        .collect()
}

/// Headline statistics of a strategy against a benchmark strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PerfStats<T: Scalar> {
    pub observations: usize,
    /// Annualized geometric total return.
    pub total_return: T,
    /// Annualized standard deviation.
    pub sd: T,
    pub sharpe: Option<T>,
    /// Annualized geometric return of the active series.
    pub relative_return: T,
    pub tracking_sd: T,
    pub information_ratio: Option<T>,
    pub hits: usize,
    pub hit_rate: T,
    pub sign_test_p: f64,
    /// One-sided p-value of the one-sample t-test on strategy returns.
    pub sharpe_t_p: Option<f64>,
    /// One-sided p-value of the one-sample t-test on active returns.
    pub ir_t_p: Option<f64>,
}

fn annualized<T: Scalar>(r: &[T], per_year: T) -> T {
    let growth = r.iter().fold(T::one(), |g, &x| g * (T::one() + x));
    if growth <= T::zero() {
        return -T::one();
    }
    growth.powf(per_year / T::from_count(r.len())) - T::one()
}

fn sample_sd<T: Scalar>(r: &[T]) -> T {
    let n = T::from_count(r.len());
    let m = r.iter().copied().sum::<T>() / n;
    (r.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / (n - T::one())).sqrt()
}

fn t_test_upper(r: &[f64]) -> Option<f64> {
    let n = r.len() as f64;
    let m = r.iter().sum::<f64>() / n;
    let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
    Some(1.0 - dist.cdf(t))
}

/// `per_year` is the number of observations per year (2 for semiannual spans).
pub fn perf_stats<T: Scalar>(strategy: &[T], benchmark: &[T], per_year: f64) -> Result<PerfStats<T>> {
    if strategy.len() != benchmark.len() {
        return Err(ClaError::ShapeMismatch { expected: strategy.len(), found: benchmark.len() });
    }
    if strategy.len() < 2 {
        return Err(ClaError::InsufficientPeriods { needed: 2, got: strategy.len() });
    }
    if !(per_year > 0.0) {
        return Err(ClaError::InvalidArgument("periods per year must be positive".into()));
    }
    let py = T::lit(per_year);
    let active: Vec<T> = strategy.iter().zip(benchmark).map(|(s, b)| *s - *b).collect();
    let tr = annualized(strategy, py);
    let sd = sample_sd(strategy) * py.sqrt();
    let rr = annualized(&active, py);
    let tsd = sample_sd(&active) * py.sqrt();
    let hits = strategy.iter().filter(|&&r| r > T::zero()).count();
    let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    Ok(PerfStats {
        observations: strategy.len(),
        total_return: tr,
        sd,
        sharpe: (sd > T::zero()).then(|| tr / sd),
        relative_return: rr,
        tracking_sd: tsd,
        information_ratio: (tsd > T::zero()).then(|| rr / tsd),
        hits,
        hit_rate: T::from_count(hits) / T::from_count(strategy.len()),
        sign_test_p: sign_test(hits, strategy.len()),
        sharpe_t_p: t_test_upper(&to64(strategy)),
        ir_t_p: t_test_upper(&to64(&active)),
    })
}

/// One-sided exact binomial tail `P(X >= hits)` with `p = 1/2`.
pub fn sign_test(hits: usize, trials: usize) -> f64 {
    assert!(trials >= 1 && hits <= trials, "sign test needs 1 <= trials and hits <= trials");
    if hits == 0 {
        return 1.0;
    }
    if trials <= 60 {
        let mut c: u128 = 1;
        let mut tail: u128 = 0;
        for k in 0..=trials {
            if k >= hits {
                tail += c;
            }
            c = c * (trials - k) as u128 / (k + 1) as u128;
        }
        return tail as f64 / 2f64.powi(trials as i32);
    }
    let b = Binomial::new(0.5, trials as u64).expect("valid binomial");
    b.sf(hits as u64 - 1)
}

/// Long/short span returns of the blended and base forecasts of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StrategySeries<T: Scalar> {
    pub periods: Vec<String>,
    pub cla: Vec<T>,
    pub base: Vec<T>,
}

/// Rebalances every `stride` steps from the first out-of-sample step while a
/// full holding span is observable.
///
/// Span returns compound one-period returns when the run carries them;
/// otherwise the forward return itself is the span return, which requires
/// `stride == horizon`.
pub fn strategy_returns<T: Scalar>(run: &RunResult<T>, decile: f64) -> Result<StrategySeries<T>> {
    let has_period_returns = run.steps.iter().all(|s| s.period_returns.is_some());
    if !has_period_returns && run.stride != run.horizon {
        return Err(ClaError::InvalidArgument(format!(
            "no one-period returns in the data: stride ({}) must equal horizon ({})",
            run.stride, run.horizon
        )));
    }
    let mut panel = ReturnPanel::default();
    for s in &run.steps {
        let source = if has_period_returns { s.period_returns.as_ref().unwrap() } else { &s.realized };
        let map = s.securities.iter().zip(source).filter_map(|(id, r)| r.map(|r| (id.clone(), r))).collect();
        panel.push(s.period.clone(), map);
    }
    let span = if has_period_returns { run.stride } else { 1 };
    let first = run.steps.iter().position(|s| !s.warmup).unwrap_or(run.steps.len());
    let mut out = StrategySeries { periods: vec![], cla: vec![], base: vec![] };
    let mut i = first;
    while i + span <= run.steps.len() {
        let s = &run.steps[i];
        let observable: Vec<usize> = (0..s.securities.len())
            .filter(|&k| (i..i + span).all(|p| panel.returns[p].contains_key(&s.securities[k])))
            .collect();
        if observable.len() < 10 {
            break;
        }
        let ids: Vec<String> = observable.iter().map(|&k| s.securities[k].clone()).collect();
        let fc: Vec<T> = observable.iter().map(|&k| s.forecasts[k]).collect();
        let fb: Vec<T> = observable.iter().map(|&k| s.base_forecasts[k]).collect();
        let pc = construct_portfolio(&s.period, &ids, &fc, decile)?;
        let pb = construct_portfolio(&s.period, &ids, &fb, decile)?;
        out.cla.push(compute_returns(&[pc], &panel, span)?[0]);
        out.base.push(compute_returns(&[pb], &panel, span)?[0]);
        out.periods.push(s.period.clone());
        i += run.stride;
    }
    Ok(out)
}
