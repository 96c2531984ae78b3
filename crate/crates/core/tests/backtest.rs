use chrono::NaiveDate;
use vsmile_core::backtest::{add_business_days, run_backtest, summarize, BacktestConfig};
use vsmile_core::calibration::{CalibrationResult, Horizon, MoneynessFilter, ObjectiveKind, PreparedObjective, Theta};
use vsmile_core::chain::OptionChain;
use vsmile_core::pricing::{mc_surface, IvSurface, McConfig};
use vsmile_core::{ForwardVarianceCurve, KernelKind, ModelSpec};

const SEED: u64 = 20171023;
const PATHS: usize = 1 << 12;

fn anchor() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 10, 23).unwrap()
}

fn grid() -> Vec<(f64, Vec<f64>)> {
    let ks: Vec<f64> = (-6..=2).map(|i| 0.01 * i as f64).collect();
    [1.0 / 52.0, 1.0 / 12.0, 0.25].iter().map(|&t| (t, ks.clone())).collect()
}

fn spec() -> ModelSpec {
    ModelSpec::reference(KernelKind::OneFactor)
}

/// A calibration record for `spec` whose stored objective is the anchor-day error.
fn frozen_result(market: &IvSurface, fvc: &ForwardVarianceCurve) -> CalibrationResult {
    let s = spec();
    let prepared = PreparedObjective::new(market, &MoneynessFilter::standard(), Horizon::Short, ObjectiveKind::Surface).unwrap();
    let (objective, _) = prepared.evaluate(&s, fvc, &McConfig::with_paths(PATHS, SEED)).unwrap();
    CalibrationResult {
        date: Some(anchor()),
        model: s.kind,
        theta: Theta { eta: s.eta, rho: s.rho, h: s.h, eta_l: None },
        objective,
        horizon: Horizon::Short,
        objective_kind: ObjectiveKind::Surface,
        n_evals: 0,
        converged: true,
        seed: SEED,
        n_paths: PATHS,
        epsilon: s.epsilon,
        h_l: None,
        residuals: Vec::new(),
        history: Vec::new(),
    }
}

fn market(fvc: &ForwardVarianceCurve, seed: u64) -> IvSurface {
    mc_surface(&spec(), fvc, &grid(), &McConfig::with_paths(PATHS, seed)).unwrap()
}

fn day(n: usize, surface: &IvSurface, fvc: &ForwardVarianceCurve) -> (OptionChain, ForwardVarianceCurve) {
    (OptionChain::from_surface(add_business_days(anchor(), n), 2500.0, surface), fvc.clone())
}

fn with_anchor() -> BacktestConfig {
    BacktestConfig { include_anchor: true, ..BacktestConfig::default() }
}

#[test]
fn frozen_market_reproduces_the_anchor_error() {
    let fvc = ForwardVarianceCurve::flat(0.04, 1.0).unwrap();
    let surface = market(&fvc, SEED + 1);
    let chain_surface = OptionChain::from_surface(anchor(), 2500.0, &surface).to_surface();
    let result = frozen_result(&chain_surface, &fvc);
    let history: Vec<_> = (0..=20).map(|n| day(n, &surface, &fvc)).collect();
    let out = run_backtest(&history, &[result.clone()], &with_anchor()).unwrap();
    assert!(out.missing.is_empty());
    assert_eq!(out.records.len(), 21);
    for (h, r) in out.records.iter().enumerate() {
        assert_eq!(r.horizon_day, h);
        assert!((r.rmse - result.objective).abs() < 1e-12, "day {h}: {} vs {}", r.rmse, result.objective);
    }
    let summary = summarize(&out.records);
    assert_eq!(summary.len(), 21);
    assert!(summary.iter().all(|(_, _, b)| b.n == 1 && (b.p50 - result.objective).abs() < 1e-12));
}

#[test]
fn level_moves_are_absorbed_by_the_curve() {
    let base = ForwardVarianceCurve::flat(0.04, 1.0).unwrap();
    let anchor_surface = market(&base, SEED + 1);
    let result = frozen_result(&anchor_surface, &base);
    let history: Vec<_> = (0..=20)
        .map(|n| {
            let fvc = ForwardVarianceCurve::flat(0.04 * (1.0 + 0.03 * n as f64), 1.0).unwrap();
            day(n, &market(&fvc, SEED + 1 + n as u64), &fvc)
        })
        .collect();
    let out = run_backtest(&history, &[result.clone()], &BacktestConfig::default()).unwrap();
    assert_eq!(out.records.len(), 20);
    for r in &out.records {
        assert!(r.rmse < 2.0 * result.objective, "day {}: {} vs anchor {}", r.horizon_day, r.rmse, result.objective);
    }
}

#[test]
fn uniform_shock_adds_in_quadrature() {
    let fvc = ForwardVarianceCurve::flat(0.04, 1.0).unwrap();
    let surface = market(&fvc, SEED + 1);
    let result = frozen_result(&surface, &fvc);
    let mut shocked = surface.clone();
    for s in &mut shocked.slices {
        for p in &mut s.points {
            p.iv += 0.05;
        }
    }
    let history: Vec<_> = (0..=20).map(|n| day(n, if n == 10 { &shocked } else { &surface }, &fvc)).collect();
    let out = run_backtest(&history, &[result.clone()], &BacktestConfig::default()).unwrap();
    let r0 = result.objective;
    let day10 = out.records.iter().find(|r| r.horizon_day == 10).unwrap().rmse;
    let quadrature = (r0 * r0 + 0.05f64.powi(2)).sqrt();
    // exact up to the cross term 2·0.05·mean residual, small for unbiased noise
    assert!((day10 / quadrature - 1.0).abs() < 0.05, "{day10} vs {quadrature}");
    for r in out.records.iter().filter(|r| r.horizon_day != 10) {
        assert!((r.rmse - r0).abs() < 1e-12);
    }
}

#[test]
fn missing_days_are_reported() {
    let fvc = ForwardVarianceCurve::flat(0.04, 1.0).unwrap();
    let surface = market(&fvc, SEED + 1);
    let result = frozen_result(&surface, &fvc);
    let history: Vec<_> = (0..=20).filter(|n| *n != 4 && *n != 17).map(|n| day(n, &surface, &fvc)).collect();
    let mut undated = result.clone();
    undated.date = None;
    let out = run_backtest(&history, &[result, undated], &BacktestConfig::default()).unwrap();
    assert_eq!(out.records.len(), 18);
    let days: Vec<usize> = out.missing.iter().map(|m| m.horizon_day).collect();
    assert_eq!(days, vec![4, 17]);
    assert_eq!(out.missing[0].date, add_business_days(anchor(), 4));
}
