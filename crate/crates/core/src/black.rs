//! Undiscounted Black formula and its inversion.

use crate::error::{BoundKind, Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, `Φ(x) = erfc(−x/√2)/2`.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Black call price in terms of total standard deviation `s = σ√T`.
#[inline]
pub fn black_call_stdev(forward: f64, strike: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return (forward - strike).max(0.0);
    }
    let d1 = (forward / strike).ln() / s + 0.5 * s;
    forward * norm_cdf(d1) - strike * norm_cdf(d1 - s)
}

/// Black put price in terms of total standard deviation `s = σ√T`.
#[inline]
pub fn black_put_stdev(forward: f64, strike: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return (strike - forward).max(0.0);
    }
    let d1 = (forward / strike).ln() / s + 0.5 * s;
    strike * norm_cdf(s - d1) - forward * norm_cdf(-d1)
}

/// Undiscounted Black call price `F Φ(d₁) − K Φ(d₂)`.
pub fn black_price(forward: f64, strike: f64, maturity: f64, vol: f64) -> f64 {
    black_call_stdev(forward, strike, vol * maturity.sqrt())
}

/// Price of the out-of-the-money option (put below the forward, call at or above).
fn otm_price(forward: f64, strike: f64, s: f64) -> f64 {
    if strike >= forward {
        black_call_stdev(forward, strike, s)
    } else {
        black_put_stdev(forward, strike, s)
    }
}

/// Black implied volatility of an undiscounted call price.
///
/// The price must lie strictly between the intrinsic value and the
/// forward. See [`implied_vol_otm`] for the root finder.
pub fn implied_vol(price: f64, forward: f64, strike: f64, maturity: f64) -> Result<f64> {
    check_inputs(price, forward, strike, maturity)?;
    let intrinsic = (forward - strike).max(0.0);
    if price <= intrinsic {
        return Err(Error::NoImpliedVol { price, bound: BoundKind::Lower, value: intrinsic });
    }
    if price >= forward {
        return Err(Error::NoImpliedVol { price, bound: BoundKind::Upper, value: forward });
    }
    implied_vol_otm(price - intrinsic, forward, strike, maturity)
}

fn check_inputs(price: f64, forward: f64, strike: f64, maturity: f64) -> Result<()> {
    if !(forward > 0.0 && strike > 0.0 && maturity > 0.0) || !price.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "implied vol needs positive forward, strike, maturity and a finite price (F={forward}, K={strike}, T={maturity}, p={price})"
        )));
    }
    Ok(())
}

/// Black implied volatility of the out-of-the-money option price (put
/// below the forward, call at or above), which keeps full precision in the
/// wings. Safeguarded Newton iterations on the log price inside a
/// bisection bracket.
pub fn implied_vol_otm(target: f64, forward: f64, strike: f64, maturity: f64) -> Result<f64> {
    check_inputs(target, forward, strike, maturity)?;
    if target <= 0.0 {
        return Err(Error::NoImpliedVol { price: target, bound: BoundKind::Lower, value: 0.0 });
    }
    let cap = forward.min(strike);
    if target >= cap {
        return Err(Error::NoImpliedVol { price: target, bound: BoundKind::Upper, value: cap });
    }
    let price = target;
    let log_target = target.ln();
    let sqrt_t = maturity.sqrt();

    let mut lo = 0.0;
    let mut hi = 1.0;
    while otm_price(forward, strike, hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::NoImpliedVol { price, bound: BoundKind::Upper, value: cap });
        }
    }
    let x = (forward / strike).ln();
    let mut s = (2.0 * x.abs()).sqrt().clamp(lo.max(1e-3), hi);
    if !(s > lo && s < hi) {
        s = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let p = otm_price(forward, strike, s);
        if p < target {
            lo = s;
        } else {
            hi = s;
        }
        let d1 = x / s + 0.5 * s;
        let vega = forward * norm_pdf(d1);
        let mut next = if p > 0.0 && vega > 0.0 {
            s - (p.ln() - log_target) * p / vega
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - s).abs();
        s = next;
        if step <= 1e-15 * s.max(1.0) || hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(s / sqrt_t)
}

/// Black vega with respect to `σ` (undiscounted).
pub fn black_vega(forward: f64, strike: f64, maturity: f64, vol: f64) -> f64 {
    let s = vol * maturity.sqrt();
    if s <= 0.0 {
        return 0.0;
    }
    let d1 = (forward / strike).ln() / s + 0.5 * s;
    forward * norm_pdf(d1) * maturity.sqrt()
}
