use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vsmile_core::roughness::{
    estimate_hurst, power_law_fit, power_law_skew_fit, q_variation, realized_vol, simulate_rv, HurstConfig, Regime,
    RvSeries,
};
use vsmile_core::simulation::BARS_PER_DAY;
use vsmile_core::skew::{expansion_curve, SkewCurve, SkewSource};
use vsmile_core::{ForwardVarianceCurve, ModelSpec};

const SEED: u64 = 20171023;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Exact fractional Gaussian noise by Durbin–Levinson recursion on the
/// autocovariance `½(|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H})`.
fn fractional_noise(n: usize, h: f64, seed: u64) -> Vec<f64> {
    let gamma = |k: usize| {
        let k = k as f64;
        0.5 * ((k + 1.0).powf(2.0 * h) - 2.0 * k.powf(2.0 * h) + (k - 1.0).abs().powf(2.0 * h))
    };
    let z = normals(n, seed);
    let mut x = Vec::with_capacity(n);
    let mut phi: Vec<f64> = Vec::new();
    let mut v = gamma(0);
    x.push(v.sqrt() * z[0]);
    for t in 1..n {
        // update the order-t prediction coefficients
        let num = gamma(t) - phi.iter().enumerate().map(|(j, p)| p * gamma(t - 1 - j)).sum::<f64>();
        let kappa = num / v;
        let mut next: Vec<f64> = phi.iter().zip(phi.iter().rev()).map(|(a, b)| a - kappa * b).collect();
        next.push(kappa);
        phi = next;
        v *= 1.0 - kappa * kappa;
        let mean: f64 = phi.iter().enumerate().map(|(j, p)| p * x[t - 1 - j]).sum();
        x.push(mean + v.sqrt() * z[t]);
    }
    x
}

fn fbm_series(n: usize, h: f64, seed: u64) -> RvSeries {
    let noise = fractional_noise(n, h, seed);
    let mut level = 0.0;
    let path: Vec<f64> = noise
        .iter()
        .map(|e| {
            level += 0.01 * e;
            level
        })
        .collect();
    let floor = path.iter().cloned().fold(f64::INFINITY, f64::min);
    RvSeries::new(path.iter().map(|p| p - floor + 0.1).collect()).unwrap()
}

#[test]
fn fractional_noise_has_the_right_covariance() {
    let h = 0.3;
    let x = fractional_noise(20_000, h, SEED);
    let n = x.len() as f64;
    let lag1 = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1.0);
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let expected = 0.5 * (2f64.powf(2.0 * h) - 2.0);
    assert!((var - 1.0).abs() < 0.03, "{var}");
    assert!((lag1 - expected).abs() < 0.03, "{lag1} vs {expected}");
}

#[test]
fn fractional_brownian_motion_hurst() {
    let est = estimate_hurst(&fbm_series(10_000, 0.3, SEED), &HurstConfig::default()).unwrap();
    assert!((est.h_hat - 0.3).abs() < 0.05, "{}", est.h_hat);
    for z in &est.zeta {
        assert!((z.zeta / z.q - 0.3).abs() < 0.1, "q={} zeta={}", z.q, z.zeta);
    }
}

#[test]
fn white_noise_has_no_scaling() {
    let rv = RvSeries::new(normals(10_000, SEED).iter().map(|z| 1.0 + 0.1 * z).collect()).unwrap();
    let est = estimate_hurst(&rv, &HurstConfig::default()).unwrap();
    assert!(est.h_hat.abs() < 0.05, "{}", est.h_hat);
}

#[test]
fn scaling_the_series_scales_the_variation() {
    let rv = fbm_series(2_000, 0.2, SEED);
    let a = 3.7;
    let scaled = rv.scaled(a);
    for q in [0.5, 1.0, 3.0] {
        for d in [1, 7, 30] {
            let m = q_variation(&rv, q, d, false).unwrap();
            let ms = q_variation(&scaled, q, d, false).unwrap();
            assert!((ms / (a.powf(q) * m) - 1.0).abs() < 1e-12);
        }
    }
    let e = estimate_hurst(&rv, &HurstConfig::default()).unwrap();
    let es = estimate_hurst(&scaled, &HurstConfig::default()).unwrap();
    assert!((e.h_hat - es.h_hat).abs() < 1e-12);
    for (z, zs) in e.zeta.iter().zip(&es.zeta) {
        assert!((z.zeta - zs.zeta).abs() < 1e-12);
    }
}

#[test]
fn overlapping_estimate_is_time_reversible() {
    let rv = fbm_series(2_000, 0.2, SEED);
    let config = HurstConfig { overlapping: true, ..HurstConfig::default() };
    let fwd = estimate_hurst(&rv, &config).unwrap();
    let back = estimate_hurst(&rv.reversed(), &config).unwrap();
    assert!((fwd.h_hat - back.h_hat).abs() < 1e-12);
}

#[test]
fn alternating_increments() {
    let c = 0.003;
    let log_s: Vec<f64> = (0..=3 * BARS_PER_DAY).map(|i| if i % 2 == 0 { 1.0 } else { 1.0 + c }).collect();
    let rv = realized_vol(&log_s, BARS_PER_DAY).unwrap();
    assert_eq!(rv.len(), 3);
    assert!(rv.values.iter().all(|v| (v - c * (BARS_PER_DAY as f64).sqrt()).abs() < 1e-15));
    assert!(realized_vol(&log_s[..log_s.len() - 1], BARS_PER_DAY).is_err());
}

#[test]
fn black_realized_vol_level() {
    let days = 500;
    let spec = ModelSpec::one_factor(1e-12, -0.5, 0.1).unwrap();
    let fvc = ForwardVarianceCurve::flat(0.04, days as f64 / 252.0).unwrap();
    let rv = simulate_rv(&spec, &fvc, days, SEED).unwrap();
    assert_eq!(rv.len(), days);
    let n = days as f64;
    let m = rv.values.iter().sum::<f64>() / n;
    let se = (rv.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let target = 0.2 / 252f64.sqrt();
    assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
    let est = estimate_hurst(&rv, &HurstConfig { deltas: (1..=10).collect(), ..HurstConfig::default() }).unwrap();
    assert!(est.h_hat < 0.25, "{}", est.h_hat);
}

#[test]
fn exact_power_laws() {
    let ts: Vec<f64> = (1..=24).map(|i| i as f64 / 12.0).collect();
    let curve = SkewCurve::new(ts.clone(), ts.iter().map(|t| 0.3 * t.powf(-0.4)).collect(), SkewSource::Market).unwrap();
    let single = power_law_fit(&curve).unwrap();
    assert_eq!(single.regime, Regime::Single);
    assert!((single.h_tilde - 0.1).abs() < 1e-12);
    assert!((single.c - 0.3).abs() < 1e-12);
    assert!((single.r2 - 1.0).abs() < 1e-12);
    for tau in [0.3, 0.5, 1.0] {
        for fit in power_law_skew_fit(&curve, Some(tau)).unwrap() {
            assert!((fit.h_tilde - 0.1).abs() < 1e-12 && (fit.r2 - 1.0).abs() < 1e-12);
        }
    }
    let bad = SkewCurve::new(vec![0.1, 0.2, 0.3], vec![0.5, 0.0, 0.4], SkewSource::Market);
    if let Ok(bad) = bad {
        assert!(power_law_fit(&bad).is_err());
    }
}

#[test]
fn cutoff_sweep_finds_the_regime_change() {
    let tau = 1.0 / 3.0;
    let ts: Vec<f64> = (1..=36).map(|i| i as f64 / 12.0).collect();
    let skew: Vec<f64> = ts
        .iter()
        .map(|&t| if t < tau { 0.4 * t.powf(0.35 - 0.5) } else { 0.4 * tau.powf(0.35 - 0.5) * (t / tau).powf(-0.1 - 0.5) })
        .collect();
    let curve = SkewCurve::new(ts, skew, SkewSource::Market).unwrap();
    let [short, long] = power_law_skew_fit(&curve, None).unwrap();
    let found = short.tau.unwrap();
    assert!((found - tau).abs() <= 1.0 / 12.0 + 1e-12, "cutoff {found}");
    assert_eq!((short.regime, long.regime), (Regime::Short, Regime::Long));
    assert!((long.h_tilde + 0.1).abs() < 0.05 && (short.h_tilde - 0.35).abs() < 0.05);
}

/// At the default offset the exponent approaches `H` only slowly: it is
/// still slightly positive on one to three years and turns negative beyond.
#[test]
fn negative_long_regime_exponent() {
    let spec = ModelSpec::path_dependent(0.0256, -0.688, -0.095).unwrap();
    let ts: Vec<f64> = (1..=120).map(|i| i as f64 / 12.0).collect();
    let curve = expansion_curve(&spec, &ts).unwrap();
    let [short, long] = power_law_skew_fit(&curve, Some(3.0)).unwrap();
    assert!(long.h_tilde < 0.0, "{}", long.h_tilde);
    assert!(short.h_tilde > long.h_tilde);
    let mut prev = f64::INFINITY;
    for (a, b) in [(1.0, 3.0), (3.0, 10.0), (10.0, 100.0), (100.0, 1000.0)] {
        let window: Vec<f64> = (0..=20).map(|i| a * (b / a as f64).powf(i as f64 / 20.0)).collect();
        let h = power_law_fit(&expansion_curve(&spec, &window).unwrap()).unwrap().h_tilde;
        assert!(h < prev && h > spec.h, "[{a}, {b}]: {h}");
        prev = h;
    }
    assert!((prev - spec.h).abs() < 0.02);
}
