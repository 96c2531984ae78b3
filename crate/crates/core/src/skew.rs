//! At-the-money skew: first-order expansions in the vol-of-vol, their short
//! maturity limits, and finite-difference / cubic-fit estimates from
//! implied-volatility surfaces.
//!
//! All skews are absolute values of `dσ/dk` at `k = 0`. To first order in
//! the vol-of-vol and with a flat forward variance curve,
//! `S_T = |ρ|/(2T²) ∫₀ᵀ (T − s) K(s) ds`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::table;
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, ModelSpec, LIMIT_BRANCH_TOL};
use crate::linalg::least_squares;
use crate::pricing::{IvSurface, SmileSlice};

/// Default finite-difference step in log-moneyness.
pub const DEFAULT_DK: f64 = 0.005;
/// Log-moneyness window of the market cubic fit.
pub const MARKET_FIT_WINDOW: (f64, f64) = (-0.05, 0.03);
pub const MARKET_FIT_MIN_QUOTES: usize = 5;

/// Assumption attached to expansion-based skew curves.
pub const EXPANSION_ASSUMPTION: &str = "first order in vol-of-vol, flat forward variance";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkewSource {
    Market,
    ModelFd,
    ModelExpansion,
}

impl SkewSource {
    pub fn name(self) -> &'static str {
        match self {
            SkewSource::Market => "market",
            SkewSource::ModelFd => "model_fd",
            SkewSource::ModelExpansion => "model_expansion",
        }
    }
}

impl fmt::Display for SkewSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SkewSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "market" => Ok(SkewSource::Market),
            "model_fd" => Ok(SkewSource::ModelFd),
            "model_expansion" => Ok(SkewSource::ModelExpansion),
            other => Err(Error::InvalidArgument(format!("unknown skew source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewCurve {
    pub maturities: Vec<f64>,
    pub skew: Vec<f64>,
    pub source: SkewSource,
    /// Modelling assumptions behind the values, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption: Option<String>,
}

impl SkewCurve {
    pub fn new(maturities: Vec<f64>, skew: Vec<f64>, source: SkewSource) -> Result<Self> {
        if maturities.len() != skew.len() {
            return Err(Error::InvalidArgument("maturities and skews differ in length".into()));
        }
        if let Some(s) = skew.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("skew must be nonnegative, got {s}")));
        }
        Ok(Self { maturities, skew, source, assumption: None })
    }

    pub fn len(&self) -> usize {
        self.maturities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maturities.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "maturity_years,skew,source")?;
        for (t, s) in self.maturities.iter().zip(&self.skew) {
            writeln!(out, "{t},{s},{}", self.source)?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(reader: R) -> Result<Self> {
        let rows = table::read_rows(reader, &["maturity_years", "skew", "source"], false)
            .map_err(|e| Error::Io(format!("skew: {e}")))?;
        let mut maturities = Vec::new();
        let mut skew = Vec::new();
        let mut source = None;
        for r in rows {
            let bad = |m: String| Error::Io(format!("line {}: {m}", r.line));
            if r.len() != 3 {
                return Err(bad("expected 3 fields".into()));
            }
            maturities.push(r.f64(0).map_err(bad)?);
            skew.push(r.f64(1).map_err(bad)?);
            let s: SkewSource = r.get(2).parse()?;
            if *source.get_or_insert(s) != s {
                return Err(bad("mixed skew sources".into()));
            }
        }
        Self::new(maturities, skew, source.unwrap_or(SkewSource::Market))
    }
}

/// `((1+x)^a − 1 − a x) / (a(a−1))`, the path-dependent skew integral in
/// units of `ε^a`, with its `a → 0` and `a → 1` limits.
fn pd_integral(a: f64, x: f64) -> f64 {
    if x < 0.05 {
        // Σ_{n≥2} (a−2)(a−3)…(a−n+1)/n! · xⁿ
        let mut coef = 0.5;
        let mut term = coef * x * x;
        let mut total = term;
        let mut n = 2.0;
        while term.abs() > 1e-18 * total.abs() && n < 200.0 {
            coef *= (a - n) / (n + 1.0);
            n += 1.0;
            term = coef * x.powf(n);
            total += term;
        }
        return total;
    }
    let l = x.ln_1p();
    if a.abs() < LIMIT_BRANCH_TOL {
        x - l
    } else if (a - 1.0).abs() < LIMIT_BRANCH_TOL {
        (1.0 + x) * l - x
    } else {
        ((a * l).exp_m1() - a * x) / (a * (a - 1.0))
    }
}

/// `(y − 1 + e^{−y}) / y²`, tending to ½ as `y → 0`.
fn exp_integral(y: f64) -> f64 {
    if y < 1e-3 {
        0.5 - y / 6.0 + y * y / 24.0 - y * y * y / 120.0
    } else {
        (y + (-y).exp_m1()) / (y * y)
    }
}

/// First-order ATM skew `|S_T|` of the model.
pub fn skew_expansion(spec: &ModelSpec, maturity: f64) -> Result<f64> {
    spec.validate()?;
    if !(maturity > 0.0) {
        return Err(Error::InvalidArgument(format!("maturity must be positive, got {maturity}")));
    }
    let r = spec.rho.abs();
    let h = spec.h;
    Ok(match spec.kind {
        KernelKind::Rough => r * spec.eta * maturity.powf(h - 0.5) / (2.0 * (h + 0.5) * (h + 1.5)),
        KernelKind::PathDependent => {
            let a = h + 1.5;
            let x = maturity / spec.epsilon;
            r * spec.eta * spec.epsilon.powf(a) * pd_integral(a, x) / (2.0 * maturity * maturity)
        }
        KernelKind::OneFactor | KernelKind::TwoFactor => spec
            .exp_factors()
            .iter()
            .map(|f| 0.5 * r * f.scale * exp_integral(f.rate * maturity))
            .sum(),
    })
}

/// Expansion skews on a maturity grid, tagged with their assumption.
pub fn expansion_curve(spec: &ModelSpec, maturities: &[f64]) -> Result<SkewCurve> {
    let skew = maturities.iter().map(|&t| skew_expansion(spec, t)).collect::<Result<Vec<_>>>()?;
    let mut curve = SkewCurve::new(maturities.to_vec(), skew, SkewSource::ModelExpansion)?;
    curve.assumption = Some(EXPANSION_ASSUMPTION.into());
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SkewLimit {
    Finite(f64),
    Infinite,
}

impl SkewLimit {
    pub fn finite(self) -> Option<f64> {
        match self {
            SkewLimit::Finite(v) => Some(v),
            SkewLimit::Infinite => None,
        }
    }
}

impl fmt::Display for SkewLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkewLimit::Finite(v) => write!(f, "{v}"),
            SkewLimit::Infinite => f.write_str("inf"),
        }
    }
}

/// `lim_{T→0} |S_T|`.
pub fn skew_limit_t0(spec: &ModelSpec) -> Result<SkewLimit> {
    spec.validate()?;
    let r = spec.rho.abs();
    Ok(match spec.kind {
        KernelKind::Rough => {
            if (spec.h - 0.5).abs() < LIMIT_BRANCH_TOL {
                SkewLimit::Finite(r * spec.eta / 4.0)
            } else if r == 0.0 {
                SkewLimit::Finite(0.0)
            } else {
                SkewLimit::Infinite
            }
        }
        KernelKind::PathDependent => SkewLimit::Finite(r * spec.eta * spec.epsilon.powf(spec.h - 0.5) / 4.0),
        KernelKind::OneFactor | KernelKind::TwoFactor => {
            SkewLimit::Finite(r * spec.exp_factors().iter().map(|f| f.scale).sum::<f64>() / 4.0)
        }
    })
}

/// Central-difference skew `|σ(T, dk) − σ(T, −dk)| / (2 dk)`.
pub fn model_skew_fd(surface: &IvSurface, maturity: f64, dk: f64) -> Result<f64> {
    model_skew_fd_with_error(surface, maturity, dk).map(|(s, _)| s)
}

/// Finite-difference skew and its standard error, combining the two quote
/// errors as if independent (`None` when the surface has no errors).
pub fn model_skew_fd_with_error(surface: &IvSurface, maturity: f64, dk: f64) -> Result<(f64, Option<f64>)> {
    if !(dk > 0.0) {
        return Err(Error::InvalidArgument(format!("dk must be positive, got {dk}")));
    }
    let slice = surface
        .slice(maturity)
        .ok_or(Error::MissingQuote { maturity, log_moneyness: dk })?;
    let up = slice.point(dk).ok_or(Error::MissingQuote { maturity, log_moneyness: dk })?;
    let down = slice.point(-dk).ok_or(Error::MissingQuote { maturity, log_moneyness: -dk })?;
    let skew = (up.iv - down.iv).abs() / (2.0 * dk);
    let se = match (up.std_error, down.std_error) {
        (Some(a), Some(b)) => Some((a * a + b * b).sqrt() / (2.0 * dk)),
        _ => None,
    };
    Ok((skew, se))
}

/// Step-size check of a central-difference skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RichardsonCheck {
    pub maturity: f64,
    /// Skew at `dk`.
    pub skew: f64,
    /// Skew at `2 dk`.
    pub skew_wide: f64,
    /// `(4 s(dk) − s(2dk)) / 3`, free of the `dk²` error term.
    pub extrapolated: f64,
}

impl RichardsonCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.skew / self.extrapolated - 1.0).abs()
    }
}

/// Compares the skew at `dk` with the one at `2 dk`; the surface needs
/// quotes at `±dk` and `±2dk`.
pub fn richardson_check(surface: &IvSurface, maturity: f64, dk: f64) -> Result<RichardsonCheck> {
    let skew = model_skew_fd(surface, maturity, dk)?;
    let skew_wide = model_skew_fd(surface, maturity, 2.0 * dk)?;
    Ok(RichardsonCheck { maturity, skew, skew_wide, extrapolated: (4.0 * skew - skew_wide) / 3.0 })
}

/// Cubic least-squares fit of the mid smile on a window around the money.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicFit {
    /// Coefficients of `1, k, k², k³`.
    pub coefficients: [f64; 4],
    /// Standard error of the linear coefficient.
    pub slope_std_error: f64,
    pub n_quotes: usize,
}

pub fn fit_cubic(slice: &SmileSlice, window: (f64, f64)) -> Result<CubicFit> {
    let pts: Vec<_> = slice
        .points
        .iter()
        .filter(|p| p.log_moneyness >= window.0 && p.log_moneyness <= window.1 && !p.flagged)
        .collect();
    if pts.len() < MARKET_FIT_MIN_QUOTES {
        return Err(Error::DegenerateRegression(format!(
            "maturity {}: {} quotes in [{}, {}], need {}",
            slice.maturity,
            pts.len(),
            window.0,
            window.1,
            MARKET_FIT_MIN_QUOTES
        )));
    }
    // Fit in u = k / scale for conditioning.
    let scale = window.0.abs().max(window.1.abs());
    let rows: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| {
            let u = p.log_moneyness / scale;
            vec![1.0, u, u * u, u * u * u]
        })
        .collect();
    let y: Vec<f64> = pts.iter().map(|p| p.iv).collect();
    let fit = least_squares(&rows, &y)?;
    let c = &fit.coefficients;
    Ok(CubicFit {
        coefficients: [c[0], c[1] / scale, c[2] / (scale * scale), c[3] / (scale * scale * scale)],
        slope_std_error: fit.std_errors[1] / scale,
        n_quotes: pts.len(),
    })
}

/// Market ATM skew: absolute linear coefficient of the cubic fit on
/// [`MARKET_FIT_WINDOW`].
pub fn market_skew(slice: &SmileSlice) -> Result<f64> {
    Ok(fit_cubic(slice, MARKET_FIT_WINDOW)?.coefficients[1].abs())
}

/// Market skews of every maturity that admits a fit; the others are
/// returned as diagnostics.
pub fn market_skew_curve(surface: &IvSurface) -> (SkewCurve, Vec<String>) {
    let mut maturities = Vec::new();
    let mut skew = Vec::new();
    let mut diagnostics = Vec::new();
    for slice in &surface.slices {
        match market_skew(slice) {
            Ok(s) => {
                maturities.push(slice.maturity);
                skew.push(s);
            }
            Err(e) => diagnostics.push(e.to_string()),
        }
    }
    let curve = SkewCurve { maturities, skew, source: SkewSource::Market, assumption: None };
    (curve, diagnostics)
}

/// Finite-difference skews of every maturity of a model surface.
pub fn model_skew_curve(surface: &IvSurface, dk: f64) -> Result<SkewCurve> {
    let maturities = surface.maturities();
    let skew = maturities
        .iter()
        .map(|&t| model_skew_fd(surface, t, dk))
        .collect::<Result<Vec<_>>>()?;
    SkewCurve::new(maturities, skew, SkewSource::ModelFd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::SmilePoint;

    #[test]
    fn richardson_removes_the_cubic_error() {
        let ks = vec![-0.01, -0.005, 0.0, 0.005, 0.01];
        let s = IvSurface::from_fn(&[(0.1, ks)], |_, k| 0.2 - 0.5 * k + 2.0 * k.powi(3));
        let c = richardson_check(&s, 0.1, 0.005).unwrap();
        assert!((c.skew - (0.5 - 2.0 * 0.005f64.powi(2))).abs() < 1e-12);
        assert!((c.extrapolated - 0.5).abs() < 1e-12);
        assert!((c.relative_gap() - 1e-4).abs() < 1e-10);
        assert!(richardson_check(&s, 0.1, 0.01).is_err());
    }

    #[test]
    fn rough_at_half_is_constant() {
        let spec = ModelSpec::rough(1.0, -1.0, 0.5).unwrap();
        for t in [1e-3, 0.1, 1.0, 5.0] {
            assert!((skew_expansion(&spec, t).unwrap() - 0.25).abs() < 1e-15);
        }
        assert_eq!(skew_limit_t0(&spec).unwrap(), SkewLimit::Finite(0.25));
    }

    #[test]
    fn one_factor_limit() {
        let spec = ModelSpec::one_factor(0.8, -0.6, 0.5).unwrap().with_epsilon(1.0).unwrap();
        let lim = skew_limit_t0(&spec).unwrap().finite().unwrap();
        assert!((lim - 0.6 * 0.8 / 4.0).abs() < 1e-15);
        assert!((skew_expansion(&spec, 1e-9).unwrap() - lim).abs() < 1e-9);
    }

    #[test]
    fn pd_branches_agree() {
        for a in [1e-13, 1.0 + 1e-13, 0.224, 0.5] {
            for x in [0.049_999, 0.050_001, 3.0] {
                let near = pd_integral(a, x);
                let far = pd_integral(a + 1e-7, x);
                assert!((near - far).abs() < 1e-6 * far.abs(), "a={a} x={x}: {near} {far}");
            }
        }
    }

    #[test]
    fn fd_and_cubic_on_exact_smiles() {
        let s = IvSurface::from_fn(&[(0.1, vec![-0.01, -0.005, 0.0, 0.005, 0.01])], |_, k| 0.2 + 0.5 * k);
        assert!((model_skew_fd(&s, 0.1, 0.005).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(model_skew_fd(&s, 0.1, 0.02), Err(Error::MissingQuote { .. })));
        let ks: Vec<f64> = (0..9).map(|i| -0.05 + 0.01 * i as f64).collect();
        let slice = SmileSlice {
            maturity: 0.1,
            points: ks.iter().map(|&k| SmilePoint::mid(k, 0.2 - 0.7 * k + 3.0 * k * k - 20.0 * k * k * k)).collect(),
        };
        assert!((market_skew(&slice).unwrap() - 0.7).abs() < 1e-12);
    }
}
