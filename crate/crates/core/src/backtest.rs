//! Out-of-sample stability: parameters frozen at an anchor day, forward
//! variance refreshed daily, surface error recorded for the following
//! working days.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationResult, Horizon, MoneynessFilter, ObjectiveKind, PreparedObjective};
use crate::chain::OptionChain;
use crate::error::{Error, Result};
use crate::forward_variance::ForwardVarianceCurve;
use crate::kernels::KernelKind;

pub const DEFAULT_HORIZON_DAYS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRecord {
    pub anchor_date: NaiveDate,
    pub model: KernelKind,
    /// Working days after the anchor; 0 is the anchor itself.
    pub horizon_day: usize,
    pub rmse: f64,
}

/// A working day without market data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingDay {
    pub anchor_date: NaiveDate,
    pub horizon_day: usize,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktestOutput {
    pub records: Vec<BacktestRecord>,
    pub missing: Vec<MissingDay>,
}

/// Date `n` weekdays after `date`.
pub fn add_business_days(date: NaiveDate, n: usize) -> NaiveDate {
    let mut d = date;
    let mut left = n;
    while left > 0 {
        d = d.checked_add_days(Days::new(1)).expect("date in range");
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            left -= 1;
        }
    }
    d
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub horizon_days: usize,
    pub filter: MoneynessFilter,
    /// Also record day 0 (the anchor).
    pub include_anchor: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            horizon_days: DEFAULT_HORIZON_DAYS,
            filter: MoneynessFilter::standard(),
            include_anchor: false,
        }
    }
}

/// Surface RMSE of a frozen calibration on one day's market with that
/// day's forward variance curve.
pub fn evaluate_day(
    result: &CalibrationResult,
    chain: &OptionChain,
    fvc: &ForwardVarianceCurve,
    filter: &MoneynessFilter,
    horizon: Horizon,
) -> Result<f64> {
    let prepared = PreparedObjective::new(&chain.to_surface(), filter, horizon, ObjectiveKind::Surface)?;
    let spec = result.spec()?;
    Ok(prepared.evaluate(&spec, fvc, &result.mc_config())?.0)
}

/// Evaluates every dated calibration result on the following working days,
/// over the maturity horizon it was calibrated on. Days absent from `history` are reported in [`BacktestOutput::missing`].
pub fn run_backtest(
    history: &[(OptionChain, ForwardVarianceCurve)],
    results: &[CalibrationResult],
    config: &BacktestConfig,
) -> Result<BacktestOutput> {
    let find = |d: NaiveDate| history.iter().find(|(c, _)| c.date == d);
    let first_day = if config.include_anchor { 0 } else { 1 };
    let tasks: Vec<(usize, usize)> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.date.is_some())
        .flat_map(|(i, _)| (first_day..=config.horizon_days).map(move |h| (i, h)))
        .collect();
    let outcomes: Vec<Result<std::result::Result<BacktestRecord, MissingDay>>> = tasks
        .par_iter()
        .map(|&(i, h)| {
            let r = &results[i];
            let anchor = r.date.expect("filtered");
            let date = add_business_days(anchor, h);
            match find(date) {
                None => Ok(Err(MissingDay { anchor_date: anchor, horizon_day: h, date })),
                Some((chain, fvc)) => {
                    let rmse = evaluate_day(r, chain, fvc, &config.filter, r.horizon)?;
                    Ok(Ok(BacktestRecord { anchor_date: anchor, model: r.model, horizon_day: h, rmse }))
                }
            }
        })
        .collect();
    let mut out = BacktestOutput::default();
    for o in outcomes {
        match o? {
            Ok(rec) => out.records.push(rec),
            Err(m) => out.missing.push(m),
        }
    }
    out.records.sort_by(|a, b| (a.anchor_date, a.horizon_day).cmp(&(b.anchor_date, b.horizon_day)));
    Ok(out)
}

pub fn write_records<W: std::io::Write>(records: &[BacktestRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "anchor_date,model,horizon_day,rmse")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.anchor_date, r.model, r.horizon_day, r.rmse)?;
    }
    Ok(())
}

/// Box-plot statistics of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    /// Most extreme observations within 1.5 IQR of the quartiles.
    pub whisker_low: f64,
    pub whisker_high: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::InsufficientData("box statistics of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (p25, p50, p75) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = p75 - p25;
    let whisker_low = v.iter().copied().find(|x| *x >= p25 - 1.5 * iqr).unwrap_or(v[0]);
    let whisker_high = v.iter().rev().copied().find(|x| *x <= p75 + 1.5 * iqr).unwrap_or(v[v.len() - 1]);
    Ok(BoxStats { n: v.len(), p25, p50, p75, whisker_low, whisker_high })
}

/// Box statistics per `(model, horizon_day)`, sorted by model then day.
pub fn summarize(records: &[BacktestRecord]) -> Vec<(KernelKind, usize, BoxStats)> {
    let mut keys: Vec<(KernelKind, usize)> = records.iter().map(|r| (r.model, r.horizon_day)).collect();
    keys.sort_by_key(|(m, h)| (m.name(), *h));
    keys.dedup();
    keys.into_iter()
        .map(|(m, h)| {
            let vals: Vec<f64> = records.iter().filter(|r| r.model == m && r.horizon_day == h).map(|r| r.rmse).collect();
            (m, h, box_stats(&vals).expect("non-empty group"))
        })
        .collect()
}

pub fn write_summary<W: std::io::Write>(summary: &[(KernelKind, usize, BoxStats)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "model,horizon_day,n,p25,p50,p75,whisker_low,whisker_high")?;
    for (m, h, s) in summary {
        writeln!(out, "{m},{h},{},{},{},{},{},{}", s.n, s.p25, s.p50, s.p75, s.whisker_low, s.whisker_high)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weekday_arithmetic() {
        let fri = NaiveDate::from_ymd_opt(2017, 10, 27).unwrap();
        assert_eq!(add_business_days(fri, 1), NaiveDate::from_ymd_opt(2017, 10, 30).unwrap());
        assert_eq!(add_business_days(fri, 0), fri);
        assert_eq!(add_business_days(fri, 5), NaiveDate::from_ymd_opt(2017, 11, 3).unwrap());
    }

    #[test]
    fn box_statistics() {
        let s = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((s.p25, s.p50, s.p75), (2.0, 3.0, 4.0));
        assert_eq!(s.whisker_low, 1.0);
        assert_eq!(s.whisker_high, 4.0);
        assert!(box_stats(&[]).is_err());
    }
}
