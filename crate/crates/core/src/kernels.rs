//! Volterra kernels of the Bergomi family.
//!
//! Every model in the family drives log-variance with a Gaussian factor
//! `X_t = ∫₀ᵗ K(t − s) dW_s`. The four supported kernels are
//!
//! | kind            | `K(t)`                                             |
//! |-----------------|----------------------------------------------------|
//! | rough           | `η t^{H−1/2}`                                      |
//! | path-dependent  | `η (t + ε)^{H−1/2}`                                |
//! | one-factor      | `η ε^{H−1/2} e^{−(1/2−H) t / ε}`                   |
//! | two-factor      | one-factor term plus `η_ℓ ε^{H_ℓ−1/2} e^{−(1/2−H_ℓ) t / ε}` |
//!
//! The closed forms below switch to their limiting expressions when `H`
//! sits within [`LIMIT_BRANCH_TOL`] of a removable singularity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Default timescale ε (one week, in years).
pub const DEFAULT_EPSILON: f64 = 1.0 / 52.0;
/// Default exponent of the slow factor of the two-factor model.
pub const DEFAULT_H_SLOW: f64 = 0.45;
/// Distance to a branch point below which the limit form is used.
pub const LIMIT_BRANCH_TOL: f64 = 1e-12;
/// Absolute tolerance of the off-diagonal covariance quadrature.
pub const COVARIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Rough,
    PathDependent,
    OneFactor,
    TwoFactor,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Rough,
        KernelKind::PathDependent,
        KernelKind::OneFactor,
        KernelKind::TwoFactor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rough => "rough",
            KernelKind::PathDependent => "path-dependent",
            KernelKind::OneFactor => "one-factor",
            KernelKind::TwoFactor => "two-factor",
        }
    }

    /// Exponential kernels admit an exact Markovian simulation.
    pub fn is_exponential(self) -> bool {
        matches!(self, KernelKind::OneFactor | KernelKind::TwoFactor)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown model '{s}'")))
    }
}

/// One member of the Bergomi family: kernel kind plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct ModelSpec {
    pub kind: KernelKind,
    /// Vol-of-vol, per √year.
    pub eta: f64,
    /// Spot-vol correlation.
    pub rho: f64,
    pub h: f64,
    /// Vol-of-vol of the slow factor; `Some` exactly for the two-factor kind.
    pub eta_l: Option<f64>,
    /// Timescale in years.
    pub epsilon: f64,
    /// Exponent of the slow factor (two-factor kind only).
    pub h_l: f64,
}

/// Flat key-value form of [`ModelSpec`] used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub model: KernelKind,
    pub eta: f64,
    pub rho: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_l: Option<f64>,
}

impl TryFrom<ModelRecord> for ModelSpec {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        let spec = ModelSpec {
            kind: r.model,
            eta: r.eta,
            rho: r.rho,
            h: r.h,
            eta_l: r.eta_l,
            epsilon: r.epsilon.unwrap_or(DEFAULT_EPSILON),
            h_l: r.h_l.unwrap_or(DEFAULT_H_SLOW),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ModelSpec> for ModelRecord {
    fn from(s: ModelSpec) -> Self {
        ModelRecord {
            model: s.kind,
            eta: s.eta,
            rho: s.rho,
            h: s.h,
            eta_l: s.eta_l,
            epsilon: Some(s.epsilon),
            h_l: (s.kind == KernelKind::TwoFactor).then_some(s.h_l),
        }
    }
}

/// One exponential factor `c e^{−λ t}` of a Markovian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFactor {
    pub scale: f64,
    pub rate: f64,
}

impl ModelSpec {
    fn build(kind: KernelKind, eta: f64, rho: f64, h: f64, eta_l: Option<f64>) -> Result<Self> {
        let spec = ModelSpec {
            kind,
            eta,
            rho,
            h,
            eta_l,
            epsilon: DEFAULT_EPSILON,
            h_l: DEFAULT_H_SLOW,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rough(eta: f64, rho: f64, h: f64) -> Result<Self> {
        Self::build(KernelKind::Rough, eta, rho, h, None)
    }

    pub fn path_dependent(eta: f64, rho: f64, h: f64) -> Result<Self> {
        Self::build(KernelKind::PathDependent, eta, rho, h, None)
    }

    pub fn one_factor(eta: f64, rho: f64, h: f64) -> Result<Self> {
        Self::build(KernelKind::OneFactor, eta, rho, h, None)
    }

    pub fn two_factor(eta: f64, eta_l: f64, rho: f64, h: f64) -> Result<Self> {
        Self::build(KernelKind::TwoFactor, eta, rho, h, Some(eta_l))
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn with_h_l(mut self, h_l: f64) -> Result<Self> {
        self.h_l = h_l;
        self.validate()?;
        Ok(self)
    }

    /// Parameter sets calibrated to the short-maturity SPX surface of
    /// 23 October 2017 (ε = 1/52, H_ℓ = 0.45).
    pub fn reference(kind: KernelKind) -> Self {
        match kind {
            KernelKind::Rough => Self::rough(1.28, -0.940, 0.079),
            KernelKind::PathDependent => Self::path_dependent(0.0256, -0.688, -1.276),
            KernelKind::OneFactor => Self::one_factor(0.756, -0.684, -0.364),
            KernelKind::TwoFactor => Self::two_factor(0.430, 0.984, -0.685, -0.497),
        }
        .expect("reference parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.rho.is_finite() && (-1.0..=1.0).contains(&self.rho)) {
            return bad(format!("rho must lie in [-1, 1], got {}", self.rho));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !self.h.is_finite() || self.h > 0.5 {
            return bad(format!("H must be finite and at most 1/2, got {}", self.h));
        }
        if self.kind == KernelKind::Rough && self.h <= 0.0 {
            return bad(format!("rough kernel requires H in (0, 1/2], got {}", self.h));
        }
        match (self.kind, self.eta_l) {
            (KernelKind::TwoFactor, Some(eta_l)) => {
                if !(eta_l.is_finite() && eta_l > 0.0) {
                    return bad(format!("eta_l must be positive, got {eta_l}"));
                }
                if !self.h_l.is_finite() || self.h_l > 0.5 {
                    return bad(format!("H_l must be finite and at most 1/2, got {}", self.h_l));
                }
            }
            (KernelKind::TwoFactor, None) => return bad("two-factor model requires eta_l".into()),
            (_, Some(_)) => return bad(format!("eta_l is only valid for the two-factor model, not {}", self.kind)),
            (_, None) => {}
        }
        Ok(())
    }

    /// Exponential factors of a Markovian kernel (empty for convolution kernels).
    pub fn exp_factors(&self) -> Vec<ExpFactor> {
        let factor = |eta: f64, h: f64| ExpFactor {
            scale: eta * self.epsilon.powf(h - 0.5),
            rate: (0.5 - h) / self.epsilon,
        };
        match self.kind {
            KernelKind::OneFactor => vec![factor(self.eta, self.h)],
            KernelKind::TwoFactor => vec![
                factor(self.eta, self.h),
                factor(self.eta_l.expect("validated"), self.h_l),
            ],
            _ => Vec::new(),
        }
    }

    /// Copy with every vol-of-vol multiplied by `factor`.
    pub fn scale_vol_of_vol(&self, factor: f64) -> Result<Self> {
        let mut s = *self;
        s.eta *= factor;
        s.eta_l = s.eta_l.map(|e| e * factor);
        s.validate()?;
        Ok(s)
    }
}

fn near(x: f64, branch: f64) -> bool {
    (x - branch).abs() < LIMIT_BRANCH_TOL
}

/// `(1 − e^{−rate·t}) / rate`, with the `rate → 0` limit `t`.
pub(crate) fn decay_integral(rate: f64, t: f64) -> f64 {
    if rate.abs() < LIMIT_BRANCH_TOL {
        t
    } else {
        -(-rate * t).exp_m1() / rate
    }
}

/// `(b^p − a^p) / p` for `0 < a ≤ b`, with the `p → 0` limit `log(b / a)`.
fn power_difference(a: f64, b: f64, p: f64) -> f64 {
    let log_ratio = (b / a).ln();
    if p.abs() < LIMIT_BRANCH_TOL {
        log_ratio
    } else {
        a.powf(p) * (p * log_ratio).exp_m1() / p
    }
}

/// Kernel value `K(t)`.
pub fn kernel_eval(spec: &ModelSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("kernel time must be nonnegative, got {t}")));
    }
    let alpha = spec.h - 0.5;
    Ok(match spec.kind {
        KernelKind::Rough => {
            if near(alpha, 0.0) {
                spec.eta
            } else if t == 0.0 {
                return Err(Error::KernelSingularity);
            } else {
                spec.eta * t.powf(alpha)
            }
        }
        KernelKind::PathDependent => spec.eta * (t + spec.epsilon).powf(alpha),
        KernelKind::OneFactor | KernelKind::TwoFactor => spec
            .exp_factors()
            .iter()
            .map(|f| f.scale * (-f.rate * t).exp())
            .sum(),
    })
}

/// `∫₀ᵗ K²(s) ds`, the variance of `X_t`.
pub fn kernel_l2_integral(spec: &ModelSpec, t: f64) -> Result<f64> {
    l2_increment(spec, 0.0, t)
}

/// `∫_{t0}^{t1} K²(s) ds` in a form that stays accurate when `t1 − t0` is
/// small compared with `t1`.
pub fn l2_increment(spec: &ModelSpec, t0: f64, t1: f64) -> Result<f64> {
    spec.validate()?;
    if !(t0 >= 0.0 && t1 >= t0) {
        return Err(Error::InvalidArgument(format!("need 0 <= t0 <= t1, got [{t0}, {t1}]")));
    }
    if t1 == t0 {
        return Ok(0.0);
    }
    let eta2 = spec.eta * spec.eta;
    let two_h = 2.0 * spec.h;
    Ok(match spec.kind {
        KernelKind::Rough => {
            if t0 == 0.0 {
                eta2 * t1.powf(two_h) / two_h
            } else {
                eta2 * power_difference(t0, t1, two_h)
            }
        }
        KernelKind::PathDependent => eta2 * power_difference(t0 + spec.epsilon, t1 + spec.epsilon, two_h),
        KernelKind::OneFactor | KernelKind::TwoFactor => {
            let factors = spec.exp_factors();
            let mut total = 0.0;
            for fi in &factors {
                for fj in &factors {
                    let rate = fi.rate + fj.rate;
                    total += fi.scale * fj.scale * (-rate * t0).exp() * decay_integral(rate, t1 - t0);
                }
            }
            total
        }
    })
}

/// `∫₀ᵗ K(s) ds`, the covariance between `∫₀ᵗ K(t − s) dW_s` and `W_t`.
pub fn kernel_integral(spec: &ModelSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("kernel time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let b = spec.h + 0.5;
    Ok(match spec.kind {
        KernelKind::Rough => spec.eta * t.powf(b) / b,
        KernelKind::PathDependent => spec.eta * power_difference(spec.epsilon, t + spec.epsilon, b),
        KernelKind::OneFactor | KernelKind::TwoFactor => spec
            .exp_factors()
            .iter()
            .map(|f| f.scale * decay_integral(f.rate, t))
            .sum(),
    })
}

/// `Cov(X_s, X_t) = ∫₀^{s∧t} K(s − u) K(t − u) du`, in variance units.
///
/// Exponential kernels use the exact closed form. The rough and
/// path-dependent off-diagonal entries are integrated numerically to an
/// absolute tolerance of [`COVARIANCE_TOL`]; for the rough kernel the
/// singular endpoint is removed by the substitution `v = m y^{1/(H+1/2)}`.
pub fn covariance(spec: &ModelSpec, s: f64, t: f64) -> Result<f64> {
    spec.validate()?;
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::InvalidArgument(format!("covariance times must be nonnegative, got ({s}, {t})")));
    }
    let m = s.min(t);
    let d = (t - s).abs();
    if m == 0.0 {
        return Ok(0.0);
    }
    if d == 0.0 {
        return kernel_l2_integral(spec, m);
    }
    let eta2 = spec.eta * spec.eta;
    let alpha = spec.h - 0.5;
    match spec.kind {
        KernelKind::OneFactor | KernelKind::TwoFactor => {
            let factors = spec.exp_factors();
            let (lo, hi) = (m, m + d);
            let mut total = 0.0;
            for fi in &factors {
                for fj in &factors {
                    // factor i evaluated at the earlier time, j at the later
                    let rate = fi.rate + fj.rate;
                    total += fi.scale * fj.scale * (-fj.rate * (hi - lo)).exp() * decay_integral(rate, lo);
                }
            }
            Ok(total)
        }
        KernelKind::Rough => {
            if near(alpha, 0.0) {
                return Ok(eta2 * m);
            }
            let p = 1.0 / (alpha + 1.0);
            let pref = eta2 * m.powf(alpha + 1.0) * p;
            let q = quad::gauss_kronrod(|y| pref * (m * y.powf(p) + d).powf(alpha), 0.0, 1.0, COVARIANCE_TOL, 2000)?;
            Ok(q.value)
        }
        KernelKind::PathDependent => {
            let eps = spec.epsilon;
            let q = quad::gauss_kronrod(
                |v| eta2 * (v + eps).powf(alpha) * (v + d + eps).powf(alpha),
                0.0,
                m,
                COVARIANCE_TOL,
                2000,
            )?;
            Ok(q.value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rough_kernel_examples() {
        let s = ModelSpec::rough(1.0, 0.0, 0.5).unwrap();
        assert_eq!(kernel_eval(&s, 7.3).unwrap(), 1.0);
        let s = ModelSpec::rough(1.0, 0.0, 0.1).unwrap();
        assert_eq!(kernel_eval(&s, 1.0).unwrap(), 1.0);
        assert_eq!(kernel_eval(&s, 0.0), Err(Error::KernelSingularity));
    }

    #[test]
    fn path_dependent_kernel_at_zero() {
        let s = ModelSpec::reference(KernelKind::PathDependent);
        let expected = 0.0256 * 52f64.powf(1.776);
        assert_relative_eq!(kernel_eval(&s, 0.0).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn l2_integral_examples() {
        let s = ModelSpec::rough(1.0, 0.0, 0.5).unwrap();
        assert_relative_eq!(kernel_l2_integral(&s, 2.0).unwrap(), 2.0, max_relative = 1e-15);
        let s = ModelSpec::rough(1.0, 0.0, 0.1).unwrap();
        assert_relative_eq!(kernel_l2_integral(&s, 1.0).unwrap(), 5.0, max_relative = 1e-14);
        let s = ModelSpec::one_factor(0.7, -0.5, -0.3).unwrap();
        assert_eq!(kernel_l2_integral(&s, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn domain_violations() {
        assert!(ModelSpec::rough(1.0, 0.0, 0.0).is_err());
        assert!(ModelSpec::rough(1.0, 0.0, 0.6).is_err());
        assert!(ModelSpec::path_dependent(1.0, 0.0, -2.0).is_ok());
        assert!(ModelSpec::one_factor(1.0, 1.1, 0.0).is_err());
        assert!(ModelSpec::one_factor(0.0, 0.0, 0.0).is_err());
        let mut s = ModelSpec::one_factor(1.0, 0.0, 0.0).unwrap();
        s.eta_l = Some(1.0);
        assert!(s.validate().is_err());
        assert!(ModelSpec::rough(1.0, 0.0, 0.1).unwrap().with_epsilon(0.0).is_err());
    }

    #[test]
    fn limit_branches_are_continuous() {
        let t = 0.37;
        let pd0 = ModelSpec::path_dependent(0.8, 0.0, 0.0).unwrap();
        let pd1 = ModelSpec::path_dependent(0.8, 0.0, 1e-7).unwrap();
        assert_relative_eq!(
            kernel_l2_integral(&pd0, t).unwrap(),
            kernel_l2_integral(&pd1, t).unwrap(),
            max_relative = 1e-5
        );
        let of0 = ModelSpec::one_factor(0.8, 0.0, 0.5).unwrap();
        let of1 = ModelSpec::one_factor(0.8, 0.0, 0.5 - 1e-7).unwrap();
        assert_relative_eq!(
            kernel_l2_integral(&of0, t).unwrap(),
            kernel_l2_integral(&of1, t).unwrap(),
            max_relative = 1e-5
        );
        assert_relative_eq!(kernel_l2_integral(&of0, t).unwrap(), 0.64 * t, max_relative = 1e-14);
    }

    #[test]
    fn covariance_edges() {
        for kind in KernelKind::ALL {
            let s = ModelSpec::reference(kind);
            assert_eq!(covariance(&s, 0.0, 0.4).unwrap(), 0.0);
            assert_eq!(covariance(&s, 0.3, 0.3).unwrap(), kernel_l2_integral(&s, 0.3).unwrap());
            let a = covariance(&s, 0.2, 0.5).unwrap();
            let b = covariance(&s, 0.5, 0.2).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn record_round_trip() {
        let spec = ModelSpec::reference(KernelKind::TwoFactor);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"model\":\"two-factor\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"model":"rough","eta":1.0,"rho":-0.5,"h":0.1,"eta_l":1.0}"#;
        assert!(serde_json::from_str::<ModelSpec>(bad).is_err());
        let minimal: ModelSpec = serde_json::from_str(r#"{"model":"one-factor","eta":1.0,"rho":-0.5,"h":-0.2}"#).unwrap();
        assert_eq!(minimal.epsilon, DEFAULT_EPSILON);
    }
}
