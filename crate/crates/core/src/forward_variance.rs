//! Piecewise-constant forward variance curves and their extraction from
//! option chains through log-contract replication.

use serde::{Deserialize, Serialize};

use crate::black::{black_call_stdev, black_put_stdev};
use crate::chain::OptionChain;
use crate::table;
use crate::error::{Error, Result};
use crate::quad;

/// `ξ₀(t)`: right-continuous step function with value `xi[j]` on
/// `[knots[j-1], knots[j])`, where `knots[-1] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardVarianceCurve {
    knots: Vec<f64>,
    xi: Vec<f64>,
}

impl ForwardVarianceCurve {
    pub fn new(knots: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != xi.len() {
            return Err(Error::InvalidArgument(format!(
                "forward variance curve needs matching non-empty knots and values ({} vs {})",
                knots.len(),
                xi.len()
            )));
        }
        let mut prev = 0.0;
        for (&t, &x) in knots.iter().zip(&xi) {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::InvalidArgument(format!("knots must be strictly increasing and positive at {t}")));
            }
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::InvalidArgument(format!("forward variance must be positive, got {x}")));
            }
            prev = t;
        }
        Ok(Self { knots, xi })
    }

    /// Single bucket `[0, horizon)` at level `xi`.
    pub fn flat(xi: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![horizon], vec![xi])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().expect("non-empty")
    }

    /// Bucket start times (`0, T₁, …, T_N`).
    pub fn starts(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(0.0).chain(self.knots[..self.knots.len() - 1].iter().copied())
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        if t > self.horizon() * (1.0 + 1e-12) {
            return Err(Error::OutOfSupport { t, last: self.horizon() });
        }
        Ok(())
    }

    /// `ξ₀(t)`; the last bucket's value is also returned at the final knot.
    pub fn value(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let j = self.knots.partition_point(|&k| k <= t).min(self.xi.len() - 1);
        Ok(self.xi[j])
    }

    /// `∫₀ᵗ ξ₀(s) ds`.
    pub fn integral(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let t = t.min(self.horizon());
        let mut total = 0.0;
        let mut start = 0.0;
        for (&end, &x) in self.knots.iter().zip(&self.xi) {
            if t <= start {
                break;
            }
            total += x * (t.min(end) - start);
            start = end;
        }
        Ok(total)
    }

    /// Average of `ξ₀` over `[t0, t1]`.
    pub fn average(&self, t0: f64, t1: f64) -> Result<f64> {
        if t1 <= t0 {
            return self.value(t0);
        }
        Ok((self.integral(t1)? - self.integral(t0)?) / (t1 - t0))
    }

    /// Copy with every bucket multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.knots.clone(), self.xi.iter().map(|x| x * factor).collect())
    }

    /// Rows `(t_start, t_end, xi)`.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        self.starts()
            .zip(self.knots.iter().zip(&self.xi))
            .map(|(s, (&e, &x))| (s, e, x))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_start_years,t_end_years,xi")?;
        for (s, e, x) in self.rows() {
            writeln!(out, "{s},{e},{x}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(reader: R) -> Result<Self> {
        let rows = table::read_rows(reader, &["t_start_years", "t_end_years", "xi"], false)
            .map_err(|e| Error::Io(format!("forward variance: {e}")))?;
        let mut knots = Vec::new();
        let mut xi = Vec::new();
        let mut prev_end = 0.0;
        for r in rows {
            let bad = |m: String| Error::Io(format!("line {}: {m}", r.line));
            if r.len() != 3 {
                return Err(bad("expected 3 fields".into()));
            }
            let (start, end, x) = (r.f64(0).map_err(bad)?, r.f64(1).map_err(bad)?, r.f64(2).map_err(bad)?);
            if (start - prev_end).abs() > 1e-12 {
                return Err(bad(format!("bucket start {start} does not continue from {prev_end}")));
            }
            prev_end = end;
            knots.push(end);
            xi.push(x);
        }
        Self::new(knots, xi)
    }
}

/// Shape-preserving cubic (Fritsch–Carlson) interpolant.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InsufficientData("monotone cubic needs at least two points".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("interpolation abscissae must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

// Three-point end condition, limited to preserve shape.
fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// One maturity slice of an interpolated smile: monotone cubic in total
/// implied variance against log-moneyness, flat implied vol outside the
/// quoted range.
#[derive(Debug, Clone)]
pub struct InterpolatedSmile {
    maturity: f64,
    k_min: f64,
    k_max: f64,
    total_variance: MonotoneCubic,
}

impl InterpolatedSmile {
    pub fn new(maturity: f64, log_moneyness: Vec<f64>, vols: &[f64]) -> Result<Self> {
        let w: Vec<f64> = vols.iter().map(|v| v * v * maturity).collect();
        let k_min = log_moneyness[0];
        let k_max = *log_moneyness.last().expect("non-empty");
        Ok(Self { maturity, k_min, k_max, total_variance: MonotoneCubic::new(log_moneyness, w)? })
    }

    pub fn vol(&self, k: f64) -> f64 {
        let k = k.clamp(self.k_min, self.k_max);
        (self.total_variance.eval(k).max(0.0) / self.maturity).sqrt()
    }
}

/// Smile interpolation and replication settings for [`extract_fvc`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileInterpolation {
    /// Strike integration extends this many extrapolated standard deviations
    /// beyond the quoted log-moneyness range.
    pub tail_width: f64,
    /// Absolute tolerance of each adaptive Simpson strike integral.
    pub tolerance: f64,
    /// Buckets below this level are clamped to it.
    pub clamp_floor: f64,
    /// Largest decrease of total variance (`ξ ΔT`) that is clamped rather
    /// than rejected as calendar arbitrage.
    pub max_calendar_violation: f64,
    /// Minimum number of quotes per slice.
    pub min_quotes: usize,
}

impl Default for SmileInterpolation {
    fn default() -> Self {
        Self {
            tail_width: 8.0,
            tolerance: 1e-10,
            clamp_floor: 1e-6,
            max_calendar_violation: 5e-4,
            min_quotes: 5,
        }
    }
}

impl SmileInterpolation {
    pub const METHOD: &'static str = "monotone-cubic-total-variance/flat-vol-extrapolation";
}

#[derive(Debug, Clone)]
pub struct FvcExtraction {
    pub curve: ForwardVarianceCurve,
    /// Log-contract value (total implied variance) per maturity.
    pub log_contract: Vec<f64>,
    /// Buckets that were clamped.
    pub clamped: Vec<usize>,
    pub diagnostics: Vec<String>,
}

/// Normalised log-contract value `2 ∫ otm(k) e^{−k} dk` of one smile slice
/// (forward 1), equal to the risk-neutral expected total variance.
pub fn log_contract_value(smile: &InterpolatedSmile, cfg: &SmileInterpolation) -> Result<f64> {
    let sqrt_t = smile.maturity.sqrt();
    let integrand = |k: f64| {
        let s = smile.vol(k) * sqrt_t;
        let strike = k.exp();
        let otm = if k < 0.0 { black_put_stdev(1.0, strike, s) } else { black_call_stdev(1.0, strike, s) };
        otm / strike
    };
    let lo = smile.k_min.min(0.0) - cfg.tail_width * smile.vol(smile.k_min) * sqrt_t;
    let hi = smile.k_max.max(0.0) + cfg.tail_width * smile.vol(smile.k_max) * sqrt_t;
    let mut cuts = vec![lo, smile.k_min.min(0.0), 0.0, smile.k_max.max(0.0), hi];
    cuts.extend([smile.k_min, smile.k_max].into_iter().filter(|k| *k != 0.0));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = (cuts.len() - 1) as f64;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += quad::adaptive_simpson(integrand, w[0], w[1], cfg.tolerance / pieces, 50)?;
    }
    Ok(2.0 * total)
}

/// Extracts the piecewise-constant forward variance curve of a chain,
/// one bucket per listed maturity.
pub fn extract_fvc(chain: &OptionChain, cfg: &SmileInterpolation) -> Result<FvcExtraction> {
    chain.validate()?;
    if chain.slices.is_empty() {
        return Err(Error::InsufficientData("chain has no maturities".into()));
    }
    let mut log_contract = Vec::with_capacity(chain.slices.len());
    for slice in &chain.slices {
        if slice.quotes.len() < cfg.min_quotes {
            return Err(Error::InsufficientData(format!(
                "maturity {} has {} quotes, need {}",
                slice.expiry,
                slice.quotes.len(),
                cfg.min_quotes
            )));
        }
        let ks: Vec<f64> = slice.quotes.iter().map(|q| slice.log_moneyness(q)).collect();
        if !(ks[0] < 0.0 && *ks.last().expect("non-empty") > 0.0) {
            return Err(Error::InsufficientData(format!("maturity {} quotes do not span the forward", slice.expiry)));
        }
        let vols: Vec<f64> = slice.quotes.iter().map(|q| q.mid_iv).collect();
        let smile = InterpolatedSmile::new(slice.expiry, ks, &vols)?;
        log_contract.push(log_contract_value(&smile, cfg)?);
    }

    let mut knots = Vec::with_capacity(log_contract.len());
    let mut xi = Vec::with_capacity(log_contract.len());
    let mut clamped = Vec::new();
    let mut diagnostics = Vec::new();
    let (mut prev_t, mut prev_lc) = (0.0, 0.0);
    for (j, (slice, &lc)) in chain.slices.iter().zip(&log_contract).enumerate() {
        let dt = slice.expiry - prev_t;
        let increment = lc - prev_lc;
        let mut value = increment / dt;
        if value < cfg.clamp_floor {
            if increment < -cfg.max_calendar_violation {
                return Err(Error::CalendarArbitrage { t_start: prev_t, t_end: slice.expiry, value });
            }
            let msg = format!(
                "bucket [{prev_t}, {}) forward variance {value:e} clamped to {:e}",
                slice.expiry, cfg.clamp_floor
            );
            log::warn!("{msg}");
            diagnostics.push(msg);
            clamped.push(j);
            value = cfg.clamp_floor;
        }
        knots.push(slice.expiry);
        xi.push(value);
        prev_t = slice.expiry;
        prev_lc = lc;
    }
    Ok(FvcExtraction { curve: ForwardVarianceCurve::new(knots, xi)?, log_contract, clamped, diagnostics })
}

/// `∫₀ᵗ ξ₀(s) ds`.
pub fn fvc_integral(fvc: &ForwardVarianceCurve, t: f64) -> Result<f64> {
    fvc.integral(t)
}
