//! Calibration of a model's parameters to an implied-volatility surface.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::table;
use crate::error::{Error, Result};
use crate::forward_variance::ForwardVarianceCurve;
use crate::kernels::{KernelKind, ModelSpec};
use crate::optimizer::{multi_start, NelderMeadOptions};
use crate::pricing::{mc_surface, IvSurface, McConfig, SmilePoint, SmileSlice};
use crate::skew::{market_skew, model_skew_fd, DEFAULT_DK, MARKET_FIT_WINDOW};

/// Objective assigned to parameter points where pricing fails.
pub const PENALTY: f64 = 1e3;

/// Absolute log-moneyness slack on the filter bounds.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoneynessBand {
    /// Maturities strictly below this bound (years) use the band; `None` is unbounded.
    pub below: Option<f64>,
    pub k_min: f64,
    pub k_max: f64,
}

/// Maturity-dependent admissible log-moneyness ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoneynessFilter {
    pub bands: Vec<MoneynessBand>,
}

impl Default for MoneynessFilter {
    fn default() -> Self {
        Self::standard()
    }
}

impl MoneynessFilter {
    /// The standard table: two weeks, one, two, three and six months, one year.
    pub fn standard() -> Self {
        let band = |below: Option<f64>, k_min: f64, k_max: f64| MoneynessBand { below, k_min, k_max };
        Self {
            bands: vec![
                band(Some(2.0 / 52.0), -0.15, 0.03),
                band(Some(1.0 / 12.0), -0.25, 0.03),
                band(Some(2.0 / 12.0), -0.3, 0.04),
                band(Some(3.0 / 12.0), -0.4, 0.15),
                band(Some(6.0 / 12.0), -0.6, 0.15),
                band(Some(1.0), -0.8, 0.2),
                band(None, -1.5, 0.3),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.k_min <= b.k_max) {
                return Err(Error::InvalidArgument(format!("band {i}: k_min {} above k_max {}", b.k_min, b.k_max)));
            }
            match b.below {
                Some(t) if t > prev => prev = t,
                Some(t) => return Err(Error::InvalidArgument(format!("band thresholds must increase, got {t}"))),
                None if i + 1 == self.bands.len() => {}
                None => return Err(Error::InvalidArgument("only the last band may be unbounded".into())),
            }
        }
        Ok(())
    }

    pub fn band(&self, maturity: f64) -> Option<&MoneynessBand> {
        self.bands.iter().find(|b| b.below.is_none_or(|t| maturity < t))
    }

    /// Closed log-moneyness bounds, widened by [`BOUND_SLACK`] so that
    /// quotes placed on a bound survive a strike round trip.
    pub fn includes(&self, maturity: f64, k: f64) -> bool {
        self.band(maturity).is_some_and(|b| k >= b.k_min - BOUND_SLACK && k <= b.k_max + BOUND_SLACK)
    }

    /// Restriction of a surface to admissible quotes; empty slices are dropped.
    pub fn apply(&self, surface: &IvSurface) -> IvSurface {
        let slices = surface
            .slices
            .iter()
            .map(|s| SmileSlice {
                maturity: s.maturity,
                points: s.points.iter().filter(|p| self.includes(s.maturity, p.log_moneyness)).copied().collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        IvSurface { slices }
    }

    /// Reads `below_years,k_min,k_max` rows; `inf` marks the unbounded band.
    pub fn read_csv<R: std::io::BufRead>(reader: R) -> Result<Self> {
        let rows = table::read_rows(reader, &["below_years", "k_min", "k_max"], false)
            .map_err(|e| Error::Io(format!("filter: {e}")))?;
        let mut bands = Vec::new();
        for r in rows {
            let bad = |m: String| Error::Io(format!("line {}: {m}", r.line));
            if r.len() != 3 {
                return Err(bad("expected 3 fields".into()));
            }
            let below = if r.get(0) == "inf" { None } else { Some(r.f64(0).map_err(bad)?) };
            bands.push(MoneynessBand { below, k_min: r.f64(1).map_err(bad)?, k_max: r.f64(2).map_err(bad)? });
        }
        let filter = Self { bands };
        filter.validate()?;
        Ok(filter)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "below_years,k_min,k_max")?;
        for b in &self.bands {
            match b.below {
                Some(t) => writeln!(out, "{t},{},{}", b.k_min, b.k_max)?,
                None => writeln!(out, "inf,{},{}", b.k_min, b.k_max)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// One week to three months.
    Short,
    /// One week to three years.
    Long,
}

impl Horizon {
    pub fn range(self) -> (f64, f64) {
        match self {
            Horizon::Short => (1.0 / 52.0, 0.25),
            Horizon::Long => (1.0 / 52.0, 3.0),
        }
    }

    pub fn contains(self, maturity: f64) -> bool {
        let (lo, hi) = self.range();
        maturity >= lo * (1.0 - 1e-9) && maturity <= hi * (1.0 + 1e-9)
    }

    pub fn name(self) -> &'static str {
        match self {
            Horizon::Short => "short",
            Horizon::Long => "long",
        }
    }

    pub fn restrict(self, surface: &IvSurface) -> IvSurface {
        IvSurface { slices: surface.slices.iter().filter(|s| self.contains(s.maturity)).cloned().collect() }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(Horizon::Short),
            "long" | "short_and_long" => Ok(Horizon::Long),
            other => Err(Error::InvalidArgument(format!("unknown horizon '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Surface,
    Skew,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Surface => "surface",
            ObjectiveKind::Skew => "skew",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" | "surface_rmse" => Ok(ObjectiveKind::Surface),
            "skew" | "skew_augmented" => Ok(ObjectiveKind::Skew),
            other => Err(Error::InvalidArgument(format!("unknown objective '{other}'"))),
        }
    }
}

fn matched_points<'a>(
    model: &'a IvSurface,
    market: &'a IvSurface,
    keep: impl Fn(f64, f64) -> bool,
) -> Result<Vec<(&'a SmilePoint, &'a SmilePoint)>> {
    let mut pairs = Vec::new();
    for ms in &market.slices {
        for mp in &ms.points {
            if !keep(ms.maturity, mp.log_moneyness) {
                continue;
            }
            let model_point = model
                .slice(ms.maturity)
                .and_then(|s| s.point(mp.log_moneyness))
                .ok_or(Error::MissingQuote { maturity: ms.maturity, log_moneyness: mp.log_moneyness })?;
            pairs.push((mp, model_point));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    Ok(pairs)
}

fn rmse(pairs: &[(&SmilePoint, &SmilePoint)]) -> f64 {
    (pairs.iter().map(|(a, b)| (a.iv - b.iv).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
}

/// Root mean square implied-vol error over the market quotes admitted by
/// `filter`; the model surface must quote every such point.
pub fn surface_rmse(model: &IvSurface, market: &IvSurface, filter: &MoneynessFilter) -> Result<f64> {
    Ok(rmse(&matched_points(model, market, |t, k| filter.includes(t, k))?))
}

/// Surface error near the money plus log-skew error:
/// `√(mean (σ_mkt − σ_mod)² + mean (log S_mkt − log S_mod)²)`, the vol mean
/// restricted to the skew-fit window.
pub fn skew_objective(
    model: &IvSurface,
    model_skew: &[(f64, f64)],
    market: &IvSurface,
    market_skew: &[(f64, f64)],
) -> Result<f64> {
    let (lo, hi) = MARKET_FIT_WINDOW;
    let vol_term = {
        let pairs = matched_points(model, market, |_, k| k >= lo && k <= hi)?;
        let r = rmse(&pairs);
        r * r
    };
    if market_skew.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let mut skew_term = 0.0;
    for &(t, s_mkt) in market_skew {
        if !(s_mkt > 0.0) {
            return Err(Error::NonPositiveSkew { maturity: t, value: s_mkt });
        }
        let s_mod = model_skew
            .iter()
            .find(|(tm, _)| (tm - t).abs() <= 1e-9 * t.max(1e-3))
            .map(|&(_, s)| s)
            .ok_or(Error::MissingQuote { maturity: t, log_moneyness: 0.0 })?;
        if !(s_mod > 0.0) {
            return Err(Error::NonPositiveSkew { maturity: t, value: s_mod });
        }
        skew_term += (s_mkt.ln() - s_mod.ln()).powi(2);
    }
    Ok((vol_term + skew_term / market_skew.len() as f64).sqrt())
}

/// Search box for the free parameters. `eta` ranges are searched on a log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub eta: (f64, f64),
    pub rho: (f64, f64),
    pub h: (f64, f64),
    pub eta_l: (f64, f64),
}

impl ParameterBounds {
    pub fn for_kind(kind: KernelKind) -> Self {
        let h = if kind == KernelKind::Rough { (0.005, 0.5) } else { (-3.0, 0.5) };
        Self { eta: (1e-4, 5.0), rho: (-1.0, 0.0), h, eta_l: (1e-4, 5.0) }
    }

    pub fn dim(kind: KernelKind) -> usize {
        if kind == KernelKind::TwoFactor {
            4
        } else {
            3
        }
    }

    fn log_map(range: (f64, f64), u: f64) -> f64 {
        (range.0.ln() + u * (range.1.ln() - range.0.ln())).exp()
    }

    fn lin_map(range: (f64, f64), u: f64) -> f64 {
        range.0 + u * (range.1 - range.0)
    }

    /// Model at unit-box coordinates `u` built on `template`.
    pub fn decode(&self, template: &ModelSpec, u: &[f64]) -> Result<ModelSpec> {
        let mut spec = *template;
        spec.eta = Self::log_map(self.eta, u[0]);
        spec.rho = Self::lin_map(self.rho, u[1]);
        spec.h = Self::lin_map(self.h, u[2]);
        if template.kind == KernelKind::TwoFactor {
            spec.eta_l = Some(Self::log_map(self.eta_l, u[3]));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn encode(&self, spec: &ModelSpec) -> Vec<f64> {
        let log_inv = |r: (f64, f64), x: f64| ((x.ln() - r.0.ln()) / (r.1.ln() - r.0.ln())).clamp(0.0, 1.0);
        let lin_inv = |r: (f64, f64), x: f64| ((x - r.0) / (r.1 - r.0)).clamp(0.0, 1.0);
        let mut u = vec![log_inv(self.eta, spec.eta), lin_inv(self.rho, spec.rho), lin_inv(self.h, spec.h)];
        if let Some(e) = spec.eta_l {
            u.push(log_inv(self.eta_l, e));
        }
        u
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    /// Kind and fixed parameters (ε, H_ℓ); free parameters are overwritten.
    pub template: ModelSpec,
    pub market: IvSurface,
    pub fvc: ForwardVarianceCurve,
    pub objective: ObjectiveKind,
    pub horizon: Horizon,
    pub filter: MoneynessFilter,
    pub mc: McConfig,
    pub bounds: ParameterBounds,
    /// Total objective evaluations across all starts.
    pub budget: usize,
    pub n_starts: usize,
    pub date: Option<NaiveDate>,
}

impl CalibrationProblem {
    pub fn new(template: ModelSpec, market: IvSurface, fvc: ForwardVarianceCurve) -> Self {
        Self {
            bounds: ParameterBounds::for_kind(template.kind),
            template,
            market,
            fvc,
            objective: ObjectiveKind::Surface,
            horizon: Horizon::Short,
            filter: MoneynessFilter::standard(),
            mc: McConfig::default(),
            budget: 3200,
            n_starts: 8,
            date: None,
        }
    }
}

/// Market data prepared once per calibration: filtered quotes, the model
/// quote grid and, for the skew objective, market skews.
#[derive(Debug, Clone)]
pub struct PreparedObjective {
    pub kind: ObjectiveKind,
    pub market: IvSurface,
    pub filter: MoneynessFilter,
    pub grid: Vec<(f64, Vec<f64>)>,
    pub market_skew: Vec<(f64, f64)>,
    pub skipped_skews: Vec<String>,
}

impl PreparedObjective {
    pub fn new(market: &IvSurface, filter: &MoneynessFilter, horizon: Horizon, kind: ObjectiveKind) -> Result<Self> {
        market.validate()?;
        filter.validate()?;
        let in_horizon = horizon.restrict(market);
        let filtered = filter.apply(&in_horizon);
        if filtered.n_points() == 0 {
            return Err(Error::EmptyIndexSet);
        }
        let mut market_skew = Vec::new();
        let mut skipped_skews = Vec::new();
        let mut grid = filtered.grid();
        if kind == ObjectiveKind::Skew {
            for slice in in_horizon.slices.iter().filter(|s| filtered.slice(s.maturity).is_some()) {
                match market_skew_checked(slice) {
                    Ok(s) => market_skew.push((slice.maturity, s)),
                    Err(e) => skipped_skews.push(e.to_string()),
                }
            }
            for (t, ks) in grid.iter_mut() {
                if market_skew.iter().any(|(m, _)| m == t) {
                    ks.extend([-DEFAULT_DK, DEFAULT_DK]);
                    ks.sort_by(f64::total_cmp);
                    ks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
                }
            }
            if market_skew.is_empty() {
                return Err(Error::EmptyIndexSet);
            }
        }
        Ok(Self { kind, market: filtered, filter: filter.clone(), grid, market_skew, skipped_skews })
    }

    /// Objective value of a model surface priced on [`Self::grid`].
    pub fn value(&self, model: &IvSurface) -> Result<f64> {
        match self.kind {
            ObjectiveKind::Surface => surface_rmse(model, &self.market, &self.filter),
            ObjectiveKind::Skew => {
                let model_skew = self
                    .market_skew
                    .iter()
                    .map(|&(t, _)| model_skew_fd(model, t, DEFAULT_DK).map(|s| (t, s)))
                    .collect::<Result<Vec<_>>>()?;
                skew_objective(model, &model_skew, &self.market, &self.market_skew)
            }
        }
    }

    /// Prices the model and evaluates the objective.
    pub fn evaluate(&self, spec: &ModelSpec, fvc: &ForwardVarianceCurve, mc: &McConfig) -> Result<(f64, IvSurface)> {
        let model = mc_surface(spec, fvc, &self.grid, mc)?;
        let v = self.value(&model)?;
        Ok((v, model))
    }

    /// Root mean square error per maturity.
    pub fn residuals(&self, model: &IvSurface) -> Vec<MaturityResidual> {
        self.market
            .slices
            .iter()
            .filter_map(|s| {
                let one = IvSurface { slices: vec![s.clone()] };
                surface_rmse(model, &one, &self.filter)
                    .ok()
                    .map(|rmse| MaturityResidual { maturity: s.maturity, rmse, n_quotes: s.points.len() })
            })
            .collect()
    }
}

fn market_skew_checked(slice: &SmileSlice) -> Result<f64> {
    let s = market_skew(slice)?;
    if !(s > 0.0) {
        return Err(Error::NonPositiveSkew { maturity: slice.maturity, value: s });
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaturityResidual {
    pub maturity: f64,
    pub rmse: f64,
    pub n_quotes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub eta: f64,
    pub rho: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub date: Option<NaiveDate>,
    pub model: KernelKind,
    pub theta: Theta,
    pub objective: f64,
    pub horizon: Horizon,
    pub objective_kind: ObjectiveKind,
    pub n_evals: usize,
    pub converged: bool,
    pub seed: u64,
    pub n_paths: usize,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_l: Option<f64>,
    #[serde(default)]
    pub residuals: Vec<MaturityResidual>,
    /// Best objective after each evaluation, per start.
    #[serde(skip)]
    pub history: Vec<Vec<f64>>,
}

impl CalibrationResult {
    pub fn spec(&self) -> Result<ModelSpec> {
        let spec = ModelSpec {
            kind: self.model,
            eta: self.theta.eta,
            rho: self.theta.rho,
            h: self.theta.h,
            eta_l: self.theta.eta_l,
            epsilon: self.epsilon,
            h_l: self.h_l.unwrap_or(crate::kernels::DEFAULT_H_SLOW),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig::with_paths(self.n_paths, self.seed)
    }
}

/// Multi-start bounded Nelder–Mead over the free parameters, all
/// evaluations sharing the problem's seed.
pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationResult> {
    problem.template.validate()?;
    let prepared = PreparedObjective::new(&problem.market, &problem.filter, problem.horizon, problem.objective)?;
    let dim = ParameterBounds::dim(problem.template.kind);
    let objective = |u: &[f64]| -> f64 {
        let spec = match problem.bounds.decode(&problem.template, u) {
            Ok(s) => s,
            Err(_) => return PENALTY,
        };
        match prepared.evaluate(&spec, &problem.fvc, &problem.mc) {
            Ok((v, _)) if v.is_finite() => v,
            Ok(_) => PENALTY,
            Err(e) => {
                log::debug!("objective evaluation failed at {spec:?}: {e}");
                PENALTY
            }
        }
    };
    let n_starts = problem.n_starts.max(1);
    let opts = NelderMeadOptions { max_evals: (problem.budget / n_starts).max(dim + 2), ..Default::default() };
    let result = multi_start(&objective, dim, n_starts, &opts);
    let spec = problem.bounds.decode(&problem.template, &result.x)?;
    let (value, model) = prepared.evaluate(&spec, &problem.fvc, &problem.mc)?;
    Ok(CalibrationResult {
        date: problem.date,
        model: spec.kind,
        theta: Theta { eta: spec.eta, rho: spec.rho, h: spec.h, eta_l: spec.eta_l },
        objective: value,
        horizon: problem.horizon,
        objective_kind: problem.objective,
        n_evals: result.n_evals,
        converged: result.converged,
        seed: problem.mc.seed,
        n_paths: problem.mc.n_paths,
        epsilon: spec.epsilon,
        h_l: (spec.kind == KernelKind::TwoFactor).then_some(spec.h_l),
        residuals: prepared.residuals(&model),
        history: result.starts.into_iter().map(|s| s.history).collect(),
    })
}
