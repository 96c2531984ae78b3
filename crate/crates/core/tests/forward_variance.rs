use chrono::NaiveDate;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use vsmile_core::chain::{ChainQuote, ChainSlice, OptionChain};
use vsmile_core::forward_variance::{extract_fvc, fvc_integral, SmileInterpolation};
use vsmile_core::pricing::{mc_surface, McConfig};
use vsmile_core::simulation::{simulate, TimeGrid};
use vsmile_core::{ForwardVarianceCurve, KernelKind, ModelSpec};

const SEED: u64 = 20171023;

fn date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 10, 23).unwrap()
}

fn chain_from(slices: &[(f64, Vec<(f64, f64)>)]) -> OptionChain {
    let forward = 2500.0;
    OptionChain {
        date: date(),
        slices: slices
            .iter()
            .map(|(t, quotes)| ChainSlice {
                expiry: *t,
                forward,
                quotes: quotes
                    .iter()
                    .map(|&(k, iv)| ChainQuote { strike: forward * k.exp(), bid_iv: None, ask_iv: None, mid_iv: iv })
                    .collect(),
            })
            .collect(),
    }
}

fn ks() -> Vec<f64> {
    (-8..=4).map(|i| 0.05 * i as f64).collect()
}

/// Black chain whose flat smile at each maturity carries the total
/// variance of `curve`.
fn black_chain(curve: &ForwardVarianceCurve) -> OptionChain {
    let slices: Vec<(f64, Vec<(f64, f64)>)> = curve
        .knots()
        .iter()
        .map(|&t| {
            let vol = (curve.integral(t).unwrap() / t).sqrt();
            (t, ks().into_iter().map(|k| (k, vol)).collect())
        })
        .collect();
    chain_from(&slices)
}

#[test]
fn flat_black_market() {
    let curve = ForwardVarianceCurve::new(vec![1.0 / 52.0, 1.0 / 12.0, 0.25, 1.0, 3.0], vec![0.04; 5]).unwrap();
    let out = extract_fvc(&black_chain(&curve), &SmileInterpolation::default()).unwrap();
    for &x in out.curve.xi() {
        assert!((x - 0.04).abs() < 1e-6, "{x}");
    }
    assert!(out.clamped.is_empty());
}

#[test]
fn single_maturity() {
    let chain = chain_from(&[(0.1, ks().into_iter().map(|k| (k, 0.2)).collect())]);
    let out = extract_fvc(&chain, &SmileInterpolation::default()).unwrap();
    assert_eq!(out.curve.knots(), &[0.1]);
    assert!((out.curve.xi()[0] - 0.04).abs() < 1e-6);
    assert!((out.curve.value(0.0).unwrap() - out.curve.xi()[0]).abs() < 1e-15);
}

#[test]
fn step_curve_round_trip() {
    let curve = ForwardVarianceCurve::new(vec![1.0 / 52.0, 1.0 / 12.0, 0.25, 0.5, 1.0], vec![0.02, 0.03, 0.05, 0.04, 0.06])
        .unwrap();
    let out = extract_fvc(&black_chain(&curve), &SmileInterpolation::default()).unwrap();
    for (a, b) in out.curve.xi().iter().zip(curve.xi()) {
        assert!((a / b - 1.0).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn halving_the_tolerance_barely_moves_the_curve() {
    let curve = ForwardVarianceCurve::new(vec![1.0 / 52.0, 1.0 / 12.0, 0.25, 1.0], vec![0.02, 0.03, 0.05, 0.04]).unwrap();
    // a skewed smile so the integrand is not Black-exact
    let slices: Vec<(f64, Vec<(f64, f64)>)> = curve
        .knots()
        .iter()
        .map(|&t| {
            let atm = (curve.integral(t).unwrap() / t).sqrt();
            (t, ks().into_iter().map(|k| (k, atm - 0.3 * k + 0.4 * k * k)).collect())
        })
        .collect();
    let chain = chain_from(&slices);
    let coarse = SmileInterpolation::default();
    let fine = SmileInterpolation { tolerance: coarse.tolerance / 2.0, ..coarse };
    let a = extract_fvc(&chain, &coarse).unwrap();
    let b = extract_fvc(&chain, &fine).unwrap();
    for (x, y) in a.curve.xi().iter().zip(b.curve.xi()) {
        assert!((x - y).abs() < 1e-7, "{x} vs {y}");
    }
}

/// A one-factor market: the log contract of each model smile is the
/// expected integrated variance, which is `ξ T` by construction.
#[test]
fn one_factor_market_recovers_integrated_variance() {
    let spec = ModelSpec::reference(KernelKind::OneFactor);
    let fvc = ForwardVarianceCurve::flat(0.04, 1.0).unwrap();
    // wide enough that the downside wing beyond the last strike is negligible
    let wide: Vec<f64> = (-40..=12).map(|i| 0.05 * i as f64).collect();
    let ts = [1.0 / 12.0, 0.25];
    let grid: Vec<(f64, Vec<f64>)> = ts.iter().map(|&t| (t, wide.clone())).collect();
    let surface = mc_surface(&spec, &fvc, &grid, &McConfig::with_paths(1 << 15, SEED)).unwrap();
    assert!(surface.slices.iter().all(|s| s.points.iter().all(|p| !p.flagged)));
    let chain = OptionChain::from_surface(date(), 2500.0, &surface);
    let out = extract_fvc(&chain, &SmileInterpolation::default()).unwrap();
    for (j, &t) in ts.iter().enumerate() {
        // Monte Carlo error of the integrated variance on the same pricing grid
        let p = simulate(&spec, &fvc, TimeGrid::pricing(t).unwrap(), 1 << 15, SEED).unwrap();
        let dt = p.grid.dt();
        let pairs: Vec<f64> = (0..p.n_paths() / 2)
            .map(|i| {
                let a: f64 = p.v.row(2 * i).iter().take(p.grid.n_steps).sum::<f64>() * dt;
                let b: f64 = p.v.row(2 * i + 1).iter().take(p.grid.n_steps).sum::<f64>() * dt;
                0.5 * (a + b)
            })
            .collect();
        let n = pairs.len() as f64;
        let m = pairs.iter().sum::<f64>() / n;
        let se = (pairs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let lc = out.log_contract[j];
        assert!((lc - 0.04 * t).abs() < 3.0 * se, "T={t}: log contract {lc} vs {} (se {se})", 0.04 * t);
    }
}

#[test]
fn calendar_arbitrage_and_clamping() {
    let flat = |vol: f64| ks().into_iter().map(|k| (k, vol)).collect::<Vec<_>>();
    // total variance 0.04 * 0.5 then 0.0196 * 0.51: a tiny decrease is clamped
    let chain = chain_from(&[(0.5, flat(0.2)), (0.51, flat((0.02 / 0.51f64).sqrt() - 1e-4))]);
    let out = extract_fvc(&chain, &SmileInterpolation::default()).unwrap();
    assert_eq!(out.clamped, vec![1]);
    assert_eq!(out.curve.xi()[1], SmileInterpolation::default().clamp_floor);
    assert!(!out.diagnostics.is_empty());
    // a large one is rejected
    let bad = chain_from(&[(0.5, flat(0.3)), (0.6, flat(0.2))]);
    assert_eq!(extract_fvc(&bad, &SmileInterpolation::default()).unwrap_err().code(), "calendar_arbitrage");
}

#[test]
fn insufficient_quotes_are_rejected() {
    let few = chain_from(&[(0.5, vec![(-0.1, 0.2), (0.0, 0.2), (0.1, 0.2)])]);
    assert_eq!(extract_fvc(&few, &SmileInterpolation::default()).unwrap_err().code(), "insufficient_data");
    let one_sided = chain_from(&[(0.5, (1..=6).map(|i| (0.05 * i as f64, 0.2)).collect())]);
    assert_eq!(extract_fvc(&one_sided, &SmileInterpolation::default()).unwrap_err().code(), "insufficient_data");
}

#[test]
fn integral_examples() {
    let one = ForwardVarianceCurve::flat(0.04, 1.0).unwrap();
    assert_eq!(fvc_integral(&one, 0.0).unwrap(), 0.0);
    assert!((fvc_integral(&one, 0.5).unwrap() - 0.02).abs() < 1e-15);
    let two = ForwardVarianceCurve::new(vec![1.0, 2.0], vec![0.04, 0.09]).unwrap();
    assert!((fvc_integral(&two, 1.5).unwrap() - 0.085).abs() < 1e-15);
    assert_eq!(fvc_integral(&two, 2.5).unwrap_err().code(), "out_of_support");
}

fn curve_strategy() -> impl Strategy<Value = ForwardVarianceCurve> {
    prop::collection::vec((0.01..0.5f64, 0.005..0.2f64), 1..8).prop_map(|buckets| {
        let mut t = 0.0;
        let (knots, xi): (Vec<f64>, Vec<f64>) = buckets
            .into_iter()
            .map(|(w, x)| {
                t += w;
                (t, x)
            })
            .unzip();
        ForwardVarianceCurve::new(knots, xi).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, rng_seed: RngSeed::Fixed(SEED), ..ProptestConfig::default() })]

    #[test]
    fn integral_is_continuous_monotone_and_piecewise_linear(curve in curve_strategy(), u in 0.0..1.0f64) {
        let t = u * curve.horizon();
        let h = 1e-9;
        let lo = fvc_integral(&curve, (t - h).max(0.0)).unwrap();
        let mid = fvc_integral(&curve, t).unwrap();
        let hi = fvc_integral(&curve, (t + h).min(curve.horizon())).unwrap();
        prop_assert!(lo <= mid && mid <= hi);
        prop_assert!(hi - lo <= 2.0 * h * curve.xi().iter().cloned().fold(0.0, f64::max) + 1e-15);
        for (&k, &x) in curve.knots().iter().zip(curve.xi()) {
            let start = curve.knots().iter().copied().filter(|&z| z < k).fold(0.0, f64::max);
            let slope = (fvc_integral(&curve, k).unwrap() - fvc_integral(&curve, start).unwrap()) / (k - start);
            prop_assert!((slope - x).abs() < 1e-10 * x.max(1.0));
        }
    }
}
