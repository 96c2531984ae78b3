//! Roughness diagnostics: daily realized volatility, q-variation scaling
//! and Hurst estimates, and power-law fits of ATM skew term structures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{simple_regression, LeastSquares};
use crate::forward_variance::ForwardVarianceCurve;
use crate::kernels::ModelSpec;
use crate::simulation::{simulate_with, PathSet, SimOptions, TimeGrid, BARS_PER_DAY};
use crate::skew::SkewCurve;

pub const DEFAULT_QS: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];
pub const DEFAULT_MAX_LAG: usize = 50;
/// Cutoff candidates of the two-regime sweep lie in this maturity range (years).
pub const TAU_SWEEP_RANGE: (f64, f64) = (1.0 / 12.0, 1.0);
pub const MIN_REGIME_POINTS: usize = 3;

/// Daily realized volatilities on a contiguous day index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvSeries {
    pub values: Vec<f64>,
}

impl RvSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("realized vol must be finite and nonnegative, got {v}")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self { values: self.values.iter().rev().copied().collect() }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * a).collect() }
    }
}

/// `√Σ (Δ log S)²` per day of `bars_per_day` intervals.
pub fn realized_vol(log_s: &[f64], bars_per_day: usize) -> Result<RvSeries> {
    if bars_per_day == 0 {
        return Err(Error::InvalidArgument("bars per day must be positive".into()));
    }
    let intervals = log_s.len().saturating_sub(1);
    if intervals == 0 {
        return Err(Error::InsufficientData("need at least one interval".into()));
    }
    if intervals % bars_per_day != 0 {
        return Err(Error::InvalidArgument(format!(
            "ragged final day: {intervals} intervals is not a multiple of {bars_per_day}"
        )));
    }
    let values = log_s
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .collect::<Vec<_>>()
        .chunks(bars_per_day)
        .map(|c| c.iter().sum::<f64>().sqrt())
        .collect();
    RvSeries::new(values)
}

/// Daily realized volatility of one simulated path on a five-minute grid.
pub fn realized_vol_of_path(paths: &PathSet, path: usize) -> Result<RvSeries> {
    let row: Vec<f64> = paths.log_s.row(path).to_vec();
    realized_vol(&row, BARS_PER_DAY)
}

/// Daily realized volatility of one `days`-long path simulated on the
/// five-minute grid.
pub fn simulate_rv(spec: &ModelSpec, fvc: &ForwardVarianceCurve, days: usize, seed: u64) -> Result<RvSeries> {
    let grid = TimeGrid::intraday(days)?;
    let paths = simulate_with(spec, fvc, grid, 1, seed, SimOptions { antithetic: false, fine_draws: 1 })?;
    realized_vol_of_path(&paths, 0)
}

/// `m(q, Δ)`: mean of `|RV_{t+Δ} − RV_t|^q`. Non-overlapping lags step the
/// start index by `Δ`; overlapping lags use every start.
pub fn q_variation(rv: &RvSeries, q: f64, delta: usize, overlapping: bool) -> Result<f64> {
    if delta == 0 {
        return Err(Error::InvalidArgument("lag must be at least one day".into()));
    }
    let n = rv.len();
    if n <= delta {
        return Err(Error::InsufficientData(format!("{n} days leave no pairs at lag {delta}")));
    }
    let step = if overlapping { 1 } else { delta };
    let mut total = 0.0;
    let mut count = 0usize;
    let mut i = 0;
    while i + delta < n {
        total += (rv.values[i + delta] - rv.values[i]).abs().powf(q);
        count += 1;
        i += step;
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaFit {
    pub q: f64,
    pub zeta: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstEstimate {
    pub zeta: Vec<ZetaFit>,
    pub h_hat: f64,
    /// Intercept of the `ζ_q` on `q` regression.
    pub intercept: f64,
    /// `(q, Δ, m(q, Δ))` grid.
    pub grid: Vec<(f64, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstConfig {
    pub qs: Vec<f64>,
    pub deltas: Vec<usize>,
    pub overlapping: bool,
    /// Take increments of `log RV` instead of `RV`.
    #[serde(default)]
    pub log_levels: bool,
}

impl Default for HurstConfig {
    fn default() -> Self {
        Self { qs: DEFAULT_QS.to_vec(), deltas: (1..=DEFAULT_MAX_LAG).collect(), overlapping: false, log_levels: false }
    }
}

impl HurstConfig {
    /// Default grid applied to log realized volatility, the usual setting for
    /// volatility-roughness studies. Raw RV of strongly mean-reverting,
    /// high vol-of-vol models is so heavy tailed that the sparse large-lag
    /// means are biased low and the level estimate turns negative.
    pub fn log_volatility() -> Self {
        Self { log_levels: true, ..Self::default() }
    }
}

fn fit_or_degenerate(x: &[f64], y: &[f64], what: &str) -> Result<LeastSquares> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRegression(format!("{what}: non-finite values (zero variation?)")));
    }
    simple_regression(x, y).map_err(|e| Error::DegenerateRegression(format!("{what}: {e}")))
}

/// `ζ_q` as the slope of `log m(q, Δ)` on `log Δ`, then `Ĥ` as the slope of
/// `ζ_q` on `q`.
pub fn estimate_hurst(rv: &RvSeries, config: &HurstConfig) -> Result<HurstEstimate> {
    let max_lag = config.deltas.iter().copied().max().unwrap_or(0);
    if config.qs.len() < 2 || config.deltas.len() < 2 {
        return Err(Error::DegenerateRegression("need at least two exponents and two lags".into()));
    }
    if rv.len() < 2 * max_lag {
        return Err(Error::InsufficientData(format!("{} days is below the floor of {} for lags up to {max_lag}", rv.len(), 2 * max_lag)));
    }
    let logged;
    let rv = if config.log_levels {
        if let Some(v) = rv.values.iter().find(|v| **v <= 0.0) {
            return Err(Error::InvalidArgument(format!("log levels need positive realized vol, got {v}")));
        }
        logged = RvSeries { values: rv.values.iter().map(|v| v.ln()).collect() };
        &logged
    } else {
        rv
    };
    let log_delta: Vec<f64> = config.deltas.iter().map(|&d| (d as f64).ln()).collect();
    let mut grid = Vec::with_capacity(config.qs.len() * config.deltas.len());
    let mut zeta = Vec::with_capacity(config.qs.len());
    for &q in &config.qs {
        let mut log_m = Vec::with_capacity(config.deltas.len());
        for &d in &config.deltas {
            let m = q_variation(rv, q, d, config.overlapping)?;
            grid.push((q, d, m));
            log_m.push(m.ln());
        }
        let fit = fit_or_degenerate(&log_delta, &log_m, &format!("q = {q}"))?;
        zeta.push(ZetaFit { q, zeta: fit.coefficients[1], intercept: fit.coefficients[0], r2: fit.r_squared });
    }
    let qs: Vec<f64> = zeta.iter().map(|z| z.q).collect();
    let zs: Vec<f64> = zeta.iter().map(|z| z.zeta).collect();
    let fit = fit_or_degenerate(&qs, &zs, "zeta on q")?;
    Ok(HurstEstimate { zeta, h_hat: fit.coefficients[1], intercept: fit.coefficients[0], grid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Single,
    Short,
    Long,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Single => "single",
            Regime::Short => "short",
            Regime::Long => "long",
        }
    }
}

/// `skew ≈ c T^{h_tilde − ½}` fitted on log-log axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub h_tilde: f64,
    pub c: f64,
    pub r2: f64,
    pub regime: Regime,
    pub tau: Option<f64>,
    pub n_points: usize,
}

fn fit_points(points: &[(f64, f64)], regime: Regime, tau: Option<f64>) -> Result<PowerLawFit> {
    if let Some(&(t, s)) = points.iter().find(|(_, s)| !(*s > 0.0)) {
        return Err(Error::NonPositiveSkew { maturity: t, value: s });
    }
    let x: Vec<f64> = points.iter().map(|(t, _)| t.ln()).collect();
    let y: Vec<f64> = points.iter().map(|(_, s)| s.ln()).collect();
    let fit = simple_regression(&x, &y)?;
    Ok(PowerLawFit {
        h_tilde: fit.coefficients[1] + 0.5,
        c: fit.coefficients[0].exp(),
        r2: fit.r_squared,
        regime,
        tau,
        n_points: points.len(),
    })
}

fn curve_points(curve: &SkewCurve) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = curve.maturities.iter().copied().zip(curve.skew.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Single power law over the whole curve.
pub fn power_law_fit(curve: &SkewCurve) -> Result<PowerLawFit> {
    let pts = curve_points(curve);
    if pts.len() < MIN_REGIME_POINTS {
        return Err(Error::InsufficientData(format!("{} maturities, need {MIN_REGIME_POINTS}", pts.len())));
    }
    fit_points(&pts, Regime::Single, None)
}

fn split_fit(pts: &[(f64, f64)], tau: f64) -> Result<[PowerLawFit; 2]> {
    let short: Vec<_> = pts.iter().copied().filter(|(t, _)| *t < tau).collect();
    let long: Vec<_> = pts.iter().copied().filter(|(t, _)| *t >= tau).collect();
    if short.len() < MIN_REGIME_POINTS || long.len() < MIN_REGIME_POINTS {
        return Err(Error::InsufficientData(format!(
            "cutoff {tau} leaves {} short and {} long maturities, need {MIN_REGIME_POINTS} each",
            short.len(),
            long.len()
        )));
    }
    Ok([fit_points(&short, Regime::Short, Some(tau))?, fit_points(&long, Regime::Long, Some(tau))?])
}

/// Two power laws split at `tau` (`T < τ` and `T ≥ τ`). Without `tau`, every
/// maturity in [`TAU_SWEEP_RANGE`] leaving enough points on both sides is
/// tried and the split with the highest mean `r²` wins, ties going to the
/// smaller cutoff.
pub fn power_law_skew_fit(curve: &SkewCurve, tau: Option<f64>) -> Result<[PowerLawFit; 2]> {
    let pts = curve_points(curve);
    if let Some(&(t, s)) = pts.iter().find(|(_, s)| !(*s > 0.0)) {
        return Err(Error::NonPositiveSkew { maturity: t, value: s });
    }
    if let Some(tau) = tau {
        return split_fit(&pts, tau);
    }
    let (lo, hi) = TAU_SWEEP_RANGE;
    let mut best: Option<([PowerLawFit; 2], f64)> = None;
    for &(t, _) in pts.iter().filter(|(t, _)| *t >= lo * (1.0 - 1e-12) && *t <= hi * (1.0 + 1e-12)) {
        let Ok(fits) = split_fit(&pts, t) else { continue };
        let score = 0.5 * (fits[0].r2 + fits[1].r2);
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((fits, score));
        }
    }
    best.map(|(f, _)| f)
        .ok_or_else(|| Error::InsufficientData("no admissible cutoff in the sweep range".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skew::SkewSource;

    #[test]
    fn rv_arithmetic() {
        let c = 0.01;
        let log_s: Vec<f64> = (0..=156).map(|i| if i % 2 == 0 { 0.0 } else { c }).collect();
        let rv = realized_vol(&log_s, 78).unwrap();
        assert_eq!(rv.len(), 2);
        for v in rv.values {
            assert!((v - c * 78f64.sqrt()).abs() < 1e-15);
        }
        assert!(realized_vol(&[0.0; 100], 78).is_err());
        assert!(realized_vol(&[0.5; 79], 78).unwrap().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_series_is_smooth() {
        let rv = RvSeries::new((0..400).map(|k| 0.01 * k as f64).collect()).unwrap();
        let m = q_variation(&rv, 2.0, 3, false).unwrap();
        assert!((m - 0.03f64.powi(2)).abs() < 1e-15);
        let h = estimate_hurst(&rv, &HurstConfig::default()).unwrap();
        assert!((h.h_hat - 1.0).abs() < 1e-9, "{}", h.h_hat);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let rv = RvSeries::new(vec![0.2; 200]).unwrap();
        assert_eq!(q_variation(&rv, 1.0, 5, false).unwrap(), 0.0);
        assert!(matches!(estimate_hurst(&rv, &HurstConfig::default()), Err(Error::DegenerateRegression(_))));
    }

    #[test]
    fn exact_power_law() {
        let ts: Vec<f64> = (1..=30).map(|i| i as f64 / 10.0).collect();
        let skew: Vec<f64> = ts.iter().map(|t| 0.3 * t.powf(-0.4)).collect();
        let curve = SkewCurve::new(ts, skew, SkewSource::Market).unwrap();
        let f = power_law_fit(&curve).unwrap();
        assert!((f.h_tilde - 0.1).abs() < 1e-13 && (f.c - 0.3).abs() < 1e-13 && (f.r2 - 1.0).abs() < 1e-13);
        let two = power_law_skew_fit(&curve, None).unwrap();
        assert!((two[0].h_tilde - 0.1).abs() < 1e-12 && (two[1].h_tilde - 0.1).abs() < 1e-12);
    }
}
