//! Monte Carlo vanilla pricing with the mixing (conditional) estimator.
//!
//! Conditional on the `W` path, `log S_T` is Gaussian with mean
//! `ρA − ½Q` and variance `(1−ρ²)Q`, where `A = Σ √v ΔW` and `Q = Σ v Δt`,
//! so a call is a Black price with forward `exp(ρA − ½ρ²Q)` and total
//! variance `(1−ρ²)Q`. Two control variates with known means reduce the
//! remaining noise: the same conditional price computed with the variance
//! frozen at `ξ₀` (a lognormal payoff), and the conditional forward itself
//! (a discrete martingale). Puts follow from the calls by parity.

use std::io::BufRead;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::black::{black_call_stdev, black_put_stdev, black_vega, implied_vol_otm};
use crate::table;
use crate::error::{BoundKind, Error, Result};
use crate::forward_variance::ForwardVarianceCurve;
use crate::kernels::ModelSpec;
use crate::simulation::{PathSet, Scheme, SimOptions, TimeGrid};

/// Implied vol reported for a price at or above the upper Black bound.
pub const IV_CAP: f64 = 5.0;
/// Control variates whose sample mean misses the known mean by more than
/// this many standard errors are left out of the regression.
pub const CV_MAX_Z: f64 = 4.0;

pub const SURFACE_HEADER: &str = "date,maturity_years,log_moneyness,iv_mid,iv_bid,iv_ask,std_error";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmilePoint {
    pub log_moneyness: f64,
    pub iv: f64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    /// Monte Carlo standard error of `iv`.
    pub std_error: Option<f64>,
    /// Set when the price fell outside the Black bounds; `iv` then holds 0
    /// (lower bound) or [`IV_CAP`] (upper bound).
    pub flagged: bool,
}

impl SmilePoint {
    pub fn mid(log_moneyness: f64, iv: f64) -> Self {
        Self { log_moneyness, iv, bid: None, ask: None, std_error: None, flagged: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmileSlice {
    pub maturity: f64,
    pub points: Vec<SmilePoint>,
}

impl SmileSlice {
    /// Point at log-moneyness `k` (absolute tolerance 1e-9).
    pub fn point(&self, k: f64) -> Option<&SmilePoint> {
        self.points.iter().find(|p| (p.log_moneyness - k).abs() <= 1e-9)
    }

    pub fn log_moneyness(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.log_moneyness).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IvSurface {
    pub slices: Vec<SmileSlice>,
}

impl IvSurface {
    /// Surface with `iv = f(T, k)` on the given quote grid.
    pub fn from_fn(grid: &[(f64, Vec<f64>)], f: impl Fn(f64, f64) -> f64) -> Self {
        let slices = grid
            .iter()
            .map(|(t, ks)| SmileSlice {
                maturity: *t,
                points: ks.iter().map(|&k| SmilePoint::mid(k, f(*t, k))).collect(),
            })
            .collect();
        Self { slices }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_t = 0.0;
        for s in &self.slices {
            if !(s.maturity > prev_t) {
                return Err(Error::InvalidArgument(format!("maturities must increase, got {} after {prev_t}", s.maturity)));
            }
            prev_t = s.maturity;
            if s.points.windows(2).any(|w| !(w[1].log_moneyness > w[0].log_moneyness)) {
                return Err(Error::InvalidArgument(format!("log-moneyness must increase within maturity {}", s.maturity)));
            }
        }
        Ok(())
    }

    pub fn maturities(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.maturity).collect()
    }

    /// Slice at maturity `t` (relative tolerance 1e-9).
    pub fn slice(&self, t: f64) -> Option<&SmileSlice> {
        self.slices.iter().find(|s| (s.maturity - t).abs() <= 1e-9 * t.max(1e-3))
    }

    /// Quote grid `(T, [k])` of the surface.
    pub fn grid(&self) -> Vec<(f64, Vec<f64>)> {
        self.slices.iter().map(|s| (s.maturity, s.log_moneyness())).collect()
    }

    pub fn n_points(&self) -> usize {
        self.slices.iter().map(|s| s.points.len()).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, date: NaiveDate, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{SURFACE_HEADER}")?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.slices {
            for p in &s.points {
                writeln!(
                    out,
                    "{date},{},{},{},{},{},{}",
                    s.maturity,
                    p.log_moneyness,
                    p.iv,
                    opt(p.bid),
                    opt(p.ask),
                    opt(p.std_error)
                )?;
            }
        }
        Ok(())
    }

    /// Reads a surface CSV; every row must carry the same date.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<(NaiveDate, Self)> {
        let header = ["date", "maturity_years", "log_moneyness", "iv_mid"];
        let rows = table::read_rows(reader, &header, true).map_err(|e| Error::Io(format!("surface: {e}")))?;
        let mut date = None;
        let mut slices: Vec<SmileSlice> = Vec::new();
        for r in rows {
            let bad = |m: String| Error::Io(format!("line {}: {m}", r.line));
            if r.len() < 4 {
                return Err(bad("expected at least 4 fields".into()));
            }
            let d = NaiveDate::parse_from_str(r.get(0), "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
            if *date.get_or_insert(d) != d {
                return Err(bad(format!("mixed dates {d} and {}", date.expect("set"))));
            }
            let t = r.f64(1).map_err(bad)?;
            let point = SmilePoint {
                log_moneyness: r.f64(2).map_err(bad)?,
                iv: r.f64(3).map_err(bad)?,
                bid: r.opt_f64(4).map_err(bad)?,
                ask: r.opt_f64(5).map_err(bad)?,
                std_error: r.opt_f64(6).map_err(bad)?,
                flagged: false,
            };
            match slices.last_mut() {
                Some(s) if s.maturity == t => s.points.push(point),
                _ => slices.push(SmileSlice { maturity: t, points: vec![point] }),
            }
        }
        let surface = IvSurface { slices };
        surface.validate()?;
        Ok((date.ok_or_else(|| Error::InsufficientData("surface file has no rows".into()))?, surface))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanillaQuote {
    pub maturity: f64,
    pub log_moneyness: f64,
    /// Call price in forward units.
    pub price: f64,
    pub implied_vol: f64,
    pub std_error: f64,
    pub iv_std_error: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub control_variate: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_paths: 1 << 17, seed: 20171023, antithetic: true, control_variate: true }
    }
}

impl McConfig {
    pub fn with_paths(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed, ..Self::default() }
    }
}

/// Per-path quantities the mixing estimator needs.
#[derive(Debug, Clone, Copy)]
struct Summary {
    /// `Σ √v ΔW`
    a: f64,
    /// `Σ v Δt`
    q: f64,
    /// `Σ √ξ ΔW`
    a0: f64,
}

struct MixingInputs {
    rho: f64,
    /// `Σ ξ Δt`
    q0: f64,
    summaries: Vec<Summary>,
    /// Paths per independent sampling unit (2 for antithetic pairs).
    unit: usize,
}

impl MixingInputs {
    fn from_scheme(spec: &ModelSpec, scheme: &Scheme, cfg: &McConfig, opts: SimOptions) -> Result<Self> {
        let dt = scheme.grid().dt();
        let xi = scheme.xi_step();
        let sqrt_xi: Vec<f64> = xi.iter().map(|x| x.sqrt()).collect();
        let q0 = xi.iter().sum::<f64>() * dt;
        let summaries = scheme.run(cfg.n_paths, cfg.seed, opts, |p| {
            let mut s = Summary { a: 0.0, q: 0.0, a0: 0.0 };
            for i in 0..p.dw.len() {
                s.a += p.v[i].sqrt() * p.dw[i];
                s.q += p.v[i];
                s.a0 += sqrt_xi[i] * p.dw[i];
            }
            s.q *= dt;
            s
        })?;
        Ok(Self { rho: spec.rho, q0, summaries, unit: if opts.antithetic { 2 } else { 1 } })
    }

    fn from_paths(paths: &PathSet, antithetic: bool) -> Self {
        let dt = paths.grid.dt();
        let n = paths.grid.n_steps;
        let q0 = paths.xi_step.iter().sum::<f64>() * dt;
        let summaries = (0..paths.n_paths())
            .map(|p| {
                let mut s = Summary { a: 0.0, q: 0.0, a0: 0.0 };
                for i in 0..n {
                    let dw = paths.w_increments[[p, i]];
                    let v = paths.v[[p, i]];
                    s.a += v.sqrt() * dw;
                    s.q += v * dt;
                    s.a0 += paths.xi_step[i].sqrt() * dw;
                }
                s
            })
            .collect();
        Self { rho: paths.spec.rho, q0, summaries, unit: if antithetic { 2 } else { 1 } }
    }

    /// Conditional out-of-the-money price, its frozen-variance control and
    /// the conditional forward.
    fn conditional(&self, s: &Summary, strike: f64) -> (f64, f64, f64) {
        let rho = self.rho;
        let perp = 1.0 - rho * rho;
        let forward = (rho * s.a - 0.5 * rho * rho * s.q).exp();
        let otm = otm_stdev(forward, strike, (perp * s.q).sqrt());
        let frozen_forward = (rho * s.a0 - 0.5 * rho * rho * self.q0).exp();
        let frozen = otm_stdev(frozen_forward, strike, (perp * self.q0).sqrt());
        (otm, frozen, forward)
    }

    /// Out-of-the-money price estimate (put below the forward, call at or
    /// above) and its standard error at `strike`. Parity maps it to the call
    /// exactly because the forward is one of the controls.
    fn price(&self, strike: f64, control_variate: bool) -> Result<(f64, f64)> {
        // Average within sampling units first so the regression sees iid rows.
        let mut rows: Vec<[f64; 3]> = Vec::with_capacity(self.summaries.len() / self.unit + 1);
        for chunk in self.summaries.chunks(self.unit) {
            let mut acc = [0.0; 3];
            for s in chunk {
                let (c, y, f) = self.conditional(s, strike);
                acc[0] += c;
                acc[1] += y;
                acc[2] += f;
            }
            let m = chunk.len() as f64;
            rows.push([acc[0] / m, acc[1] / m, acc[2] / m]);
        }
        let n = rows.len() as f64;
        let means = [0, 1, 2].map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n);
        if !control_variate {
            let var = rows.iter().map(|r| (r[0] - means[0]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            return Ok((means[0], (var / n).sqrt()));
        }
        let known = [otm_stdev(1.0, strike, self.q0.sqrt()), 1.0];
        let mut beta = regression(&rows, &means, [consistent(&rows, &means, 1, known[0]), consistent(&rows, &means, 2, known[1])]);
        if beta.iter().any(|b| !b.is_finite()) {
            beta = [0.0, 0.0];
        }
        let price = means[0] - beta[0] * (means[1] - known[0]) - beta[1] * (means[2] - known[1]);
        let var = rows
            .iter()
            .map(|r| {
                let e = (r[0] - means[0]) - beta[0] * (r[1] - means[1]) - beta[1] * (r[2] - means[2]);
                e * e
            })
            .sum::<f64>()
            / (n - 3.0).max(1.0);
        Ok((price, (var / n).sqrt()))
    }
}

/// Whether control column `j` can be trusted: its sample mean lies within
/// [`CV_MAX_Z`] standard errors of the known value, or it is an almost
/// exact linear function of the target. A loosely correlated control
/// driven by rare paths can miss its mean badly at small sample sizes, and
/// the regression would carry that miss into the price.
fn consistent(rows: &[[f64; 3]], means: &[f64; 3], j: usize, known: f64) -> bool {
    let n = rows.len() as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for r in rows {
        let (x, y) = (r[j] - means[j], r[0] - means[0]);
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let se = (sxx / (n - 1.0).max(1.0) / n).sqrt();
    if (means[j] - known).abs() <= CV_MAX_Z * se + 1e-6 * known.abs() {
        return true;
    }
    sxx > 0.0 && syy > 0.0 && sxy * sxy >= (1.0 - 1e-8) * sxx * syy
}

/// OLS coefficients of column 0 on the allowed columns among 1 and 2,
/// dropping a control whose centred variance is negligible or collinear
/// with the other.
fn regression(rows: &[[f64; 3]], means: &[f64; 3], allowed: [bool; 2]) -> [f64; 2] {
    let mut s = [[0.0; 3]; 3];
    for r in rows {
        let d = [r[0] - means[0], r[1] - means[1], r[2] - means[2]];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += d[i] * d[j];
            }
        }
    }
    // relative, so that deep out-of-the-money prices keep their controls
    let tiny = 1e-24 * s[0][0];
    let usable = |j: usize| allowed[j - 1] && s[j][j] > 0.0 && s[j][j] > tiny;
    let single = |j: usize| if usable(j) { s[0][j] / s[j][j] } else { 0.0 };
    let det = s[1][1] * s[2][2] - s[1][2] * s[1][2];
    if usable(1) && usable(2) && det > 1e-10 * s[1][1] * s[2][2] {
        [
            (s[0][1] * s[2][2] - s[0][2] * s[1][2]) / det,
            (s[0][2] * s[1][1] - s[0][1] * s[1][2]) / det,
        ]
    } else if usable(1) && (!usable(2) || s[1][1] >= s[2][2]) {
        [single(1), 0.0]
    } else {
        [0.0, single(2)]
    }
}

/// Put below the money, call at or above, with the money at `strike = 1`.
fn otm_stdev(forward: f64, strike: f64, s: f64) -> f64 {
    if strike < 1.0 {
        black_put_stdev(forward, strike, s)
    } else {
        black_call_stdev(forward, strike, s)
    }
}

fn quote(maturity: f64, k: f64, otm: f64, std_error: f64) -> VanillaQuote {
    let strike = k.exp();
    let price = otm + (1.0 - strike).max(0.0);
    match implied_vol_otm(otm, 1.0, strike, maturity) {
        Ok(iv) => {
            let vega = black_vega(1.0, strike, maturity, iv);
            VanillaQuote {
                maturity,
                log_moneyness: k,
                price,
                implied_vol: iv,
                std_error,
                iv_std_error: (vega > 0.0).then(|| std_error / vega),
                flagged: false,
            }
        }
        Err(Error::NoImpliedVol { bound, .. }) => VanillaQuote {
            maturity,
            log_moneyness: k,
            price,
            implied_vol: if bound == BoundKind::Lower { 0.0 } else { IV_CAP },
            std_error,
            iv_std_error: None,
            flagged: true,
        },
        Err(_) => VanillaQuote {
            maturity,
            log_moneyness: k,
            price,
            implied_vol: f64::NAN,
            std_error,
            iv_std_error: None,
            flagged: true,
        },
    }
}

/// Prices calls at each log-moneyness for one maturity on an explicit grid.
pub fn price_slice_on_grid(
    spec: &ModelSpec,
    fvc: &ForwardVarianceCurve,
    grid: TimeGrid,
    log_moneyness: &[f64],
    cfg: &McConfig,
    opts: SimOptions,
) -> Result<Vec<VanillaQuote>> {
    let scheme = Scheme::new(spec, fvc, grid)?;
    let inputs = MixingInputs::from_scheme(spec, &scheme, cfg, opts)?;
    log_moneyness
        .iter()
        .map(|&k| {
            let (price, se) = inputs.price(k.exp(), cfg.control_variate)?;
            Ok(quote(grid.t_end, k, price, se))
        })
        .collect()
}

/// Prices one maturity on the default pricing grid.
pub fn price_slice(
    spec: &ModelSpec,
    fvc: &ForwardVarianceCurve,
    maturity: f64,
    log_moneyness: &[f64],
    cfg: &McConfig,
) -> Result<Vec<VanillaQuote>> {
    let opts = SimOptions { antithetic: cfg.antithetic, fine_draws: 1 };
    price_slice_on_grid(spec, fvc, TimeGrid::pricing(maturity)?, log_moneyness, cfg, opts)
}

/// Model implied-vol surface on the quote grid `(T, [k])`, every maturity
/// simulated with the same seed.
pub fn mc_surface(
    spec: &ModelSpec,
    fvc: &ForwardVarianceCurve,
    grid: &[(f64, Vec<f64>)],
    cfg: &McConfig,
) -> Result<IvSurface> {
    let mut slices = Vec::with_capacity(grid.len());
    for (t, ks) in grid {
        if *t > fvc.horizon() * (1.0 + 1e-12) {
            return Err(Error::OutOfSupport { t: *t, last: fvc.horizon() });
        }
        let quotes = price_slice(spec, fvc, *t, ks, cfg)?;
        slices.push(SmileSlice {
            maturity: *t,
            points: quotes
                .iter()
                .map(|q| SmilePoint {
                    log_moneyness: q.log_moneyness,
                    iv: q.implied_vol,
                    bid: None,
                    ask: None,
                    std_error: q.iv_std_error,
                    flagged: q.flagged,
                })
                .collect(),
        });
    }
    let surface = IvSurface { slices };
    surface.validate()?;
    Ok(surface)
}

/// Put price from a call price by parity (forward 1).
pub fn put_from_call(call: f64, log_moneyness: f64) -> f64 {
    call - (1.0 - log_moneyness.exp())
}

/// Conditional (mixing) call prices per path, without control variates.
pub fn conditional_call_samples(paths: &PathSet, log_moneyness: f64) -> Vec<f64> {
    let inputs = MixingInputs::from_paths(paths, false);
    let strike = log_moneyness.exp();
    inputs
        .summaries
        .iter()
        .map(|s| {
            let (otm, _, forward) = inputs.conditional(s, strike);
            if strike < 1.0 {
                otm + forward - strike
            } else {
                otm
            }
        })
        .collect()
}

/// Plain call payoffs `(S_T − K)⁺` per path.
pub fn payoff_call_samples(paths: &PathSet, log_moneyness: f64) -> Vec<f64> {
    let strike = log_moneyness.exp();
    let last = paths.grid.n_steps;
    paths.log_s.column(last).iter().map(|&l| (l.exp() - strike).max(0.0)).collect()
}

/// Call price and standard error from an existing path set.
pub fn price_from_paths(paths: &PathSet, log_moneyness: f64, antithetic: bool, control_variate: bool) -> Result<VanillaQuote> {
    let inputs = MixingInputs::from_paths(paths, antithetic);
    let (price, se) = inputs.price(log_moneyness.exp(), control_variate)?;
    Ok(quote(paths.grid.t_end, log_moneyness, price, se))
}
