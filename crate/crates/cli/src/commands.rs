//! Subcommand implementations. Each stages its artifacts and commits them
//! only after every computation has succeeded.

use std::io::{Cursor, Write};

use rayon::prelude::*;
use serde::Serialize;
use vsmile_core::backtest::{self, BacktestConfig};
use vsmile_core::calibration::{calibrate, CalibrationProblem, CalibrationResult};
use vsmile_core::chain::{parse_chains, write_chains, OptionChain, ParsedChains};
use vsmile_core::forward_variance::{extract_fvc, FvcExtraction, SmileInterpolation};
use vsmile_core::pricing::{mc_surface, IvSurface, McConfig};
use vsmile_core::roughness::{
    estimate_hurst, power_law_fit, power_law_skew_fit, simulate_rv, HurstConfig, HurstEstimate, PowerLawFit,
};
use vsmile_core::simulation::TRADING_DAYS;
use vsmile_core::skew::{expansion_curve, market_skew_curve, model_skew_curve, richardson_check, SkewCurve, DEFAULT_DK};
use vsmile_core::{ForwardVarianceCurve, ModelSpec};

use crate::config::{CommandConfig, RunConfig};
use crate::svg::{self, Plot, Series};
use crate::{context, Artifacts, CliError};

pub fn execute(config: &RunConfig) -> Result<(), CliError> {
    let mut out = Artifacts::new(&config.out, config.hash(), config.seed);
    match &config.command {
        CommandConfig::Synth { .. } => synth(config, &mut out)?,
        CommandConfig::Fvc => fvc(config, &mut out)?,
        CommandConfig::Surface { .. } => surface(config, &mut out)?,
        CommandConfig::Calibrate { .. } => calibrate_days(config, &mut out)?,
        CommandConfig::Skew { .. } => skew(config, &mut out)?,
        CommandConfig::Backtest { .. } => backtest_cmd(config, &mut out)?,
        CommandConfig::Roughness { .. } => roughness(config, &mut out)?,
    }
    out.json("run.json", &serde_json::json!({ "config": config, "artifacts": out.names() }))?;
    out.commit()?;
    Ok(())
}

fn mc(config: &RunConfig) -> McConfig {
    McConfig::with_paths(config.paths, config.seed)
}

fn chains(config: &RunConfig) -> Result<ParsedChains, CliError> {
    let bytes = config.input("chain").expect("chain input registered");
    let parsed = parse_chains(Cursor::new(bytes)).map_err(context("chain"))?;
    for d in &parsed.diagnostics {
        eprintln!("{}", serde_json::json!({ "diagnostic": "rejected_row", "line": d.line, "message": d.message }));
    }
    if parsed.chains.is_empty() {
        return Err(CliError::Failed { code: "chain", message: "chain: no valid quotes".into() });
    }
    Ok(parsed)
}

fn input_curve(config: &RunConfig) -> Result<Option<ForwardVarianceCurve>, CliError> {
    config
        .input("fvc")
        .map(|b| ForwardVarianceCurve::read_csv(Cursor::new(b)).map_err(context("forward variance curve")))
        .transpose()
}

/// The `--fvc` file when given, else a flat curve covering `horizon`.
fn curve_or_flat(config: &RunConfig, xi: f64, horizon: f64) -> Result<ForwardVarianceCurve, CliError> {
    match input_curve(config)? {
        Some(c) => Ok(c),
        None => Ok(ForwardVarianceCurve::flat(xi, horizon)?),
    }
}

fn extract(chain: &OptionChain) -> Result<FvcExtraction, CliError> {
    extract_fvc(chain, &SmileInterpolation::default()).map_err(context(format!("forward variance on {}", chain.date)))
}

fn synth(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let CommandConfig::Synth { xi, date, days, xi_drift, forward, maturities, strikes, spread } = &config.command else {
        unreachable!()
    };
    let spec = &config.models[0];
    let horizon = *maturities.last().expect("non-empty maturities");
    let base = curve_or_flat(config, *xi, horizon)?;
    let grid: Vec<(f64, Vec<f64>)> = maturities
        .iter()
        .map(|&t| {
            let band = config
                .filter
                .band(t)
                .ok_or_else(|| CliError::Usage(format!("no moneyness band covers maturity {t}")))?;
            let n = *strikes;
            let ks = (0..n).map(|i| band.k_min + (band.k_max - band.k_min) * i as f64 / (n - 1) as f64).collect();
            Ok((t, ks))
        })
        .collect::<Result<_, CliError>>()?;
    let dates: Vec<_> = (0..*days).map(|d| backtest::add_business_days(*date, d)).collect();
    let day_chains = dates
        .par_iter()
        .enumerate()
        .map(|(d, &day)| {
            let curve = base.scaled((1.0 + xi_drift).powi(d as i32))?;
            let mut surface = mc_surface(spec, &curve, &grid, &mc(config))?;
            for p in surface.slices.iter_mut().flat_map(|s| s.points.iter_mut()) {
                if *spread > 0.0 {
                    p.bid = Some((p.iv - spread).max(0.0));
                    p.ask = Some(p.iv + spread);
                } else {
                    p.bid = None;
                    p.ask = None;
                }
            }
            Ok((OptionChain::from_surface(day, *forward, &surface), curve))
        })
        .collect::<Result<Vec<_>, vsmile_core::Error>>()
        .map_err(context("synthetic market"))?;
    let flagged: usize = day_chains
        .iter()
        .map(|(c, _)| c.slices.iter().map(|s| s.quotes.iter().filter(|q| !(q.mid_iv > 0.0)).count()).sum::<usize>())
        .sum();
    if flagged > 0 {
        return Err(CliError::Failed {
            code: "no_implied_vol",
            message: format!("{flagged} synthetic quotes have no implied volatility; narrow the filter or add paths"),
        });
    }
    let chains: Vec<OptionChain> = day_chains.iter().map(|(c, _)| c.clone()).collect();
    out.csv("chain.csv", |w| write_chains(w, &chains))?;
    out.csv("fvc.csv", |w| day_chains[0].1.write_csv(w))?;
    out.json("synth.json", &serde_json::json!({ "model": spec, "dates": dates, "n_quotes": chains[0].to_surface().n_points() }))
}

#[derive(Serialize)]
struct FvcReport {
    date: chrono::NaiveDate,
    method: &'static str,
    log_contract: Vec<f64>,
    clamped: Vec<usize>,
    diagnostics: Vec<String>,
}

fn fvc(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let parsed = chains(config)?;
    let extracted = parsed.chains.par_iter().map(extract).collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::new();
    for (chain, ex) in parsed.chains.iter().zip(&extracted) {
        out.csv(&format!("fvc_{}.csv", chain.date), |w| ex.curve.write_csv(w))?;
        reports.push(FvcReport {
            date: chain.date,
            method: SmileInterpolation::METHOD,
            log_contract: ex.log_contract.clone(),
            clamped: ex.clamped.clone(),
            diagnostics: ex.diagnostics.clone(),
        });
    }
    let rejected: Vec<String> = parsed.diagnostics.iter().map(|d| d.to_string()).collect();
    out.json("fvc.json", &serde_json::json!({ "days": reports, "rejected_rows": rejected }))
}

fn surface(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let CommandConfig::Surface { xi, maturities, ks, date } = &config.command else { unreachable!() };
    let (date, grid) = match config.input("chain") {
        Some(_) => {
            let parsed = chains(config)?;
            if parsed.chains.len() != 1 {
                return Err(CliError::Usage("surface takes a single-date chain".into()));
            }
            let chain = &parsed.chains[0];
            (chain.date, chain.to_surface().grid())
        }
        None => (*date, maturities.iter().map(|&t| (t, ks.clone())).collect()),
    };
    let horizon = grid.iter().map(|(t, _)| *t).fold(0.0, f64::max);
    let curve = curve_or_flat(config, *xi, horizon)?;
    let spec = &config.models[0];
    let surface = mc_surface(spec, &curve, &grid, &mc(config)).map_err(context("model surface"))?;
    out.csv("surface.csv", |w| surface.write_csv(date, w))?;
    out.svg("surface.svg", |meta| svg::render(&smile_plot(&surface, &format!("{} implied volatility", spec.kind)), meta));
    Ok(())
}

fn smile_plot(surface: &IvSurface, title: &str) -> Plot {
    Plot {
        title: title.into(),
        x_label: "log-moneyness".into(),
        y_label: "implied vol".into(),
        series: surface
            .slices
            .iter()
            .map(|s| Series {
                name: format!("T={:.4}", s.maturity),
                points: s.points.iter().map(|p| (p.log_moneyness, p.iv)).collect(),
            })
            .collect(),
        ..Default::default()
    }
}

fn calibrate_days(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let CommandConfig::Calibrate { budget, starts } = &config.command else { unreachable!() };
    let parsed = chains(config)?;
    let fixed = input_curve(config)?;
    let curves: Vec<ForwardVarianceCurve> = match &fixed {
        Some(c) => vec![c.clone(); parsed.chains.len()],
        None => parsed.chains.par_iter().map(|c| extract(c).map(|e| e.curve)).collect::<Result<_, _>>()?,
    };
    let tasks: Vec<(usize, &ModelSpec)> =
        (0..parsed.chains.len()).flat_map(|d| config.models.iter().map(move |m| (d, m))).collect();
    let results = tasks
        .par_iter()
        .map(|&(d, spec)| {
            let chain = &parsed.chains[d];
            let mut problem = CalibrationProblem::new(*spec, chain.to_surface(), curves[d].clone());
            problem.objective = config.objective;
            problem.horizon = config.horizon;
            problem.filter = config.filter.clone();
            problem.mc = mc(config);
            problem.budget = *budget;
            problem.n_starts = *starts;
            problem.date = Some(chain.date);
            calibrate(&problem).map_err(context(format!("{} on {}", spec.kind, chain.date)))
        })
        .collect::<Result<Vec<CalibrationResult>, CliError>>()?;
    out.json_lines("calibration.jsonl", &results)
}

fn skew(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let CommandConfig::Skew { xi, maturities, mc: with_mc } = &config.command else { unreachable!() };
    let spec = &config.models[0];
    let mut curves = vec![expansion_curve(spec, maturities).map_err(context("skew expansion"))?];
    if *with_mc {
        let horizon = *maturities.last().expect("non-empty maturities");
        let curve = curve_or_flat(config, *xi, horizon)?;
        let ks = vec![-2.0 * DEFAULT_DK, -DEFAULT_DK, 0.0, DEFAULT_DK, 2.0 * DEFAULT_DK];
        let grid: Vec<(f64, Vec<f64>)> = maturities.iter().map(|&t| (t, ks.clone())).collect();
        let surface = mc_surface(spec, &curve, &grid, &mc(config)).map_err(context("model surface"))?;
        curves.push(model_skew_curve(&surface, DEFAULT_DK).map_err(context("finite-difference skew"))?);
        let checks = maturities
            .iter()
            .map(|&t| richardson_check(&surface, t, DEFAULT_DK))
            .collect::<Result<Vec<_>, _>>()
            .map_err(context("step-size check"))?;
        out.csv("skew_check.csv", |w| {
            writeln!(w, "maturity_years,skew_dk,skew_2dk,richardson,relative_gap")?;
            for c in &checks {
                writeln!(w, "{},{},{},{},{}", c.maturity, c.skew, c.skew_wide, c.extrapolated, c.relative_gap())?;
            }
            Ok(())
        })?;
    }
    if config.input("chain").is_some() {
        let parsed = chains(config)?;
        if parsed.chains.len() != 1 {
            return Err(CliError::Usage("skew takes a single-date chain".into()));
        }
        let (market, diagnostics) = market_skew_curve(&parsed.chains[0].to_surface());
        for d in diagnostics {
            eprintln!("{}", serde_json::json!({ "diagnostic": "skipped_maturity", "message": d }));
        }
        curves.push(market);
    }
    out.csv("skew.csv", |w| write_skews(&curves, w))?;
    let plot = Plot {
        title: format!("{} ATM skew", spec.kind),
        x_label: "maturity (years)".into(),
        y_label: "ATM skew".into(),
        log_x: true,
        log_y: true,
        series: curves
            .iter()
            .map(|c| Series {
                name: c.source.to_string(),
                points: c.maturities.iter().copied().zip(c.skew.iter().copied()).collect(),
            })
            .collect(),
        ..Default::default()
    };
    out.svg("skew.svg", |meta| svg::render(&plot, meta));
    Ok(())
}

fn write_skews(curves: &[SkewCurve], w: &mut Vec<u8>) -> std::io::Result<()> {
    writeln!(w, "maturity_years,skew,source")?;
    for c in curves {
        for (t, s) in c.maturities.iter().zip(&c.skew) {
            writeln!(w, "{t},{s},{}", c.source)?;
        }
    }
    Ok(())
}

fn backtest_cmd(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let CommandConfig::Backtest { horizon_days, include_anchor } = &config.command else { unreachable!() };
    let parsed = chains(config)?;
    let text = std::str::from_utf8(config.input("calibration").expect("calibration input registered"))
        .map_err(|e| CliError::Failed { code: "io", message: format!("calibration: {e}") })?;
    let results = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<CalibrationResult>(l)
                .map_err(|e| CliError::Failed { code: "io", message: format!("calibration line {}: {e}", i + 1) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fixed = input_curve(config)?;
    let history = parsed
        .chains
        .par_iter()
        .map(|c| {
            let curve = match &fixed {
                Some(f) => f.clone(),
                None => extract(c)?.curve,
            };
            Ok((c.clone(), curve))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let bt_config =
        BacktestConfig { horizon_days: *horizon_days, filter: config.filter.clone(), include_anchor: *include_anchor };
    let output = backtest::run_backtest(&history, &results, &bt_config).map_err(context("backtest"))?;
    for m in &output.missing {
        eprintln!(
            "{}",
            serde_json::json!({ "diagnostic": "missing_day", "anchor_date": m.anchor_date, "horizon_day": m.horizon_day, "date": m.date })
        );
    }
    out.csv("backtest.csv", |w| backtest::write_records(&output.records, w))?;
    let summary = backtest::summarize(&output.records);
    out.csv("backtest_summary.csv", |w| backtest::write_summary(&summary, w))?;
    out.csv("backtest_missing.csv", |w| {
        writeln!(w, "anchor_date,horizon_day,date")?;
        for m in &output.missing {
            writeln!(w, "{},{},{}", m.anchor_date, m.horizon_day, m.date)?;
        }
        Ok(())
    })?;
    let mut groups: Vec<(String, Vec<(f64, backtest::BoxStats)>)> = Vec::new();
    for (model, day, stats) in &summary {
        match groups.last_mut() {
            Some((name, boxes)) if name == model.name() => boxes.push((*day as f64, *stats)),
            _ => groups.push((model.name().to_string(), vec![(*day as f64, *stats)])),
        }
    }
    out.svg("backtest.svg", |meta| svg::render_boxes("surface RMSE after calibration", "working days", "RMSE", &groups, meta));
    Ok(())
}

#[derive(Serialize)]
struct HurstReport<'a> {
    model: &'a ModelSpec,
    days: usize,
    h_hat: f64,
    intercept: f64,
    zeta: &'a [vsmile_core::roughness::ZetaFit],
}

fn roughness(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let CommandConfig::Roughness { xi, years, log_levels, overlapping, tau } = &config.command else { unreachable!() };
    let days = years * TRADING_DAYS as usize;
    let curve = ForwardVarianceCurve::flat(*xi, *years as f64 + 1.0)?;
    let hurst_config = HurstConfig { overlapping: *overlapping, log_levels: *log_levels, ..HurstConfig::default() };
    let estimates = config
        .models
        .par_iter()
        .map(|spec| {
            let rv = simulate_rv(spec, &curve, days, config.seed)?;
            let est = estimate_hurst(&rv, &hurst_config)?;
            Ok((rv, est))
        })
        .collect::<Result<Vec<_>, vsmile_core::Error>>()
        .map_err(context("roughness"))?;
    let mut reports = Vec::new();
    for (spec, (rv, est)) in config.models.iter().zip(&estimates) {
        let name = spec.kind.name();
        out.csv(&format!("rv_{name}.csv"), |w| {
            writeln!(w, "day,rv")?;
            for (i, v) in rv.values.iter().enumerate() {
                writeln!(w, "{i},{v}")?;
            }
            Ok(())
        })?;
        out.csv(&format!("qvar_{name}.csv"), |w| {
            writeln!(w, "q,delta,m")?;
            for (q, d, m) in &est.grid {
                writeln!(w, "{q},{d},{m}")?;
            }
            Ok(())
        })?;
        out.csv(&format!("zeta_{name}.csv"), |w| {
            writeln!(w, "q,zeta_q,intercept,r2")?;
            for z in &est.zeta {
                writeln!(w, "{},{},{},{}", z.q, z.zeta, z.intercept, z.r2)?;
            }
            Ok(())
        })?;
        out.svg(&format!("qvar_{name}.svg"), |meta| svg::render(&qvar_plot(name, est), meta));
        out.svg(&format!("zeta_{name}.svg"), |meta| svg::render(&zeta_plot(name, est), meta));
        reports.push(HurstReport { model: spec, days, h_hat: est.h_hat, intercept: est.intercept, zeta: &est.zeta });
    }
    let mut fits: Vec<PowerLawFit> = Vec::new();
    if let Some(bytes) = config.input("skew") {
        let curve = SkewCurve::read_csv(Cursor::new(bytes)).map_err(context("skew curve"))?;
        fits.push(power_law_fit(&curve).map_err(context("power law"))?);
        fits.extend(power_law_skew_fit(&curve, *tau).map_err(context("two-regime power law"))?);
        out.csv("powerlaw.csv", |w| {
            writeln!(w, "regime,h_tilde,c,r2,tau")?;
            for f in &fits {
                let tau = f.tau.map(|t| t.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{},{tau}", f.regime.name(), f.h_tilde, f.c, f.r2)?;
            }
            Ok(())
        })?;
        let mut series = vec![Series {
            name: "skew".into(),
            points: curve.maturities.iter().copied().zip(curve.skew.iter().copied()).collect(),
        }];
        for f in &fits {
            let pts: Vec<(f64, f64)> = curve
                .maturities
                .iter()
                .filter(|&&t| match (f.regime, f.tau) {
                    (vsmile_core::roughness::Regime::Short, Some(tau)) => t < tau,
                    (vsmile_core::roughness::Regime::Long, Some(tau)) => t >= tau,
                    _ => true,
                })
                .map(|&t| (t, f.c * t.powf(f.h_tilde - 0.5)))
                .collect();
            series.push(Series { name: format!("fit {}", f.regime.name()), points: pts });
        }
        let plot = Plot {
            title: "ATM skew power laws".into(),
            x_label: "maturity (years)".into(),
            y_label: "ATM skew".into(),
            log_x: true,
            log_y: true,
            series,
            ..Default::default()
        };
        out.svg("powerlaw.svg", |meta| svg::render(&plot, meta));
    }
    out.json("hurst.json", &serde_json::json!({ "levels": if *log_levels { "log" } else { "raw" }, "estimates": reports, "power_laws": fits }))
}

fn qvar_plot(name: &str, est: &HurstEstimate) -> Plot {
    let mut series: Vec<Series> = Vec::new();
    for z in &est.zeta {
        series.push(Series {
            name: format!("q={}", z.q),
            points: est.grid.iter().filter(|(q, _, _)| *q == z.q).map(|(_, d, m)| (*d as f64, *m)).collect(),
        });
    }
    Plot {
        title: format!("{name}: q-variation of realized volatility"),
        x_label: "lag (days)".into(),
        y_label: "m(q, lag)".into(),
        log_x: true,
        log_y: true,
        scatter: true,
        series,
        ..Default::default()
    }
}

fn zeta_plot(name: &str, est: &HurstEstimate) -> Plot {
    Plot {
        title: format!("{name}: scaling exponents, slope {:.4}", est.h_hat),
        x_label: "q".into(),
        y_label: "zeta_q".into(),
        series: vec![
            Series { name: "zeta_q".into(), points: est.zeta.iter().map(|z| (z.q, z.zeta)).collect() },
            Series {
                name: "fit".into(),
                points: est.zeta.iter().map(|z| (z.q, est.intercept + est.h_hat * z.q)).collect(),
            },
        ],
        ..Default::default()
    }
}
