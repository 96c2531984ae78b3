//! Resolved, validated run configuration and its hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;
use sha2::{Digest, Sha256};
use vsmile_core::calibration::{Horizon, MoneynessFilter, ObjectiveKind};
use vsmile_core::{KernelKind, ModelSpec};

use crate::{Cli, CliError, Command, CurveArgs, ModelArgs};

/// Maturities used when a command needs a grid and none is given.
pub const DEFAULT_SYNTH_MATURITIES: [f64; 5] = [1.0 / 52.0, 2.0 / 52.0, 1.0 / 12.0, 2.0 / 12.0, 0.25];
pub const DEFAULT_SKEW_MATURITIES: [f64; 10] =
    [1.0 / 52.0, 2.0 / 52.0, 1.0 / 12.0, 2.0 / 12.0, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandConfig {
    Synth {
        xi: f64,
        date: NaiveDate,
        days: usize,
        xi_drift: f64,
        forward: f64,
        maturities: Vec<f64>,
        strikes: usize,
        spread: f64,
    },
    Fvc,
    Surface {
        xi: f64,
        maturities: Vec<f64>,
        ks: Vec<f64>,
        date: NaiveDate,
    },
    Calibrate {
        budget: usize,
        starts: usize,
    },
    Skew {
        xi: f64,
        maturities: Vec<f64>,
        mc: bool,
    },
    Backtest {
        horizon_days: usize,
        include_anchor: bool,
    },
    Roughness {
        xi: f64,
        years: usize,
        log_levels: bool,
        overlapping: bool,
        tau: Option<f64>,
    },
}

/// Everything that determines a run's outputs. The output directory and
/// worker count are excluded from the hash; input files enter by content.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: CommandConfig,
    pub models: Vec<ModelSpec>,
    pub horizon: Horizon,
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub paths: usize,
    pub filter: MoneynessFilter,
    /// Input role to SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip)]
    pub input_data: BTreeMap<String, Vec<u8>>,
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn resolve_models(args: &ModelArgs, default_all: bool) -> Result<Vec<ModelSpec>, CliError> {
    let kinds = if args.models.is_empty() {
        if default_all {
            KernelKind::ALL.to_vec()
        } else {
            return Err(CliError::Usage("--model is required".into()));
        }
    } else {
        args.models.clone()
    };
    let overrides = args.eta.is_some() || args.rho.is_some() || args.h.is_some() || args.eta_l.is_some();
    if overrides && kinds.len() > 1 {
        return Err(CliError::Usage("parameter overrides need a single --model".into()));
    }
    let mut specs = Vec::with_capacity(kinds.len());
    for kind in kinds {
        if args.eta_l.is_some() && kind != KernelKind::TwoFactor {
            return Err(CliError::Usage("--eta-l applies to the two-factor model only".into()));
        }
        if args.h_l.is_some() && kind != KernelKind::TwoFactor {
            return Err(CliError::Usage("--h-l applies to the two-factor model only".into()));
        }
        let mut spec = ModelSpec::reference(kind);
        spec.eta = args.eta.unwrap_or(spec.eta);
        spec.rho = args.rho.unwrap_or(spec.rho);
        spec.h = args.h.unwrap_or(spec.h);
        if let Some(e) = args.eta_l {
            spec.eta_l = Some(e);
        }
        spec.epsilon = args.epsilon.unwrap_or(spec.epsilon);
        spec.h_l = args.h_l.unwrap_or(spec.h_l);
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}

fn single(models: &[ModelSpec]) -> Result<(), CliError> {
    if models.len() == 1 {
        Ok(())
    } else {
        Err(CliError::Usage("this command takes exactly one --model".into()))
    }
}

fn check_xi(xi: f64) -> Result<(), CliError> {
    if xi > 0.0 && xi.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--xi must be positive, got {xi}")))
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let mut inputs: BTreeMap<String, PathBuf> = BTreeMap::new();
        let filter = match &cli.filter_table {
            Some(path) => {
                inputs.insert("filter_table".into(), path.clone());
                MoneynessFilter::read_csv(std::io::Cursor::new(read_input(path)?))
                    .map_err(crate::context(path.display()))?
            }
            None => MoneynessFilter::standard(),
        };
        let mut horizon = Horizon::Short;
        let mut objective = ObjectiveKind::Surface;
        let curve_input = |curve: &CurveArgs, inputs: &mut BTreeMap<String, PathBuf>| -> Result<f64, CliError> {
            if let Some(p) = &curve.fvc {
                inputs.insert("fvc".into(), p.clone());
            }
            check_xi(curve.xi)?;
            Ok(curve.xi)
        };
        let (command, models) = match cli.command {
            Command::Synth { model, curve, date, days, xi_drift, forward, maturities, strikes, spread } => {
                let models = resolve_models(&model, false)?;
                single(&models)?;
                let xi = curve_input(&curve, &mut inputs)?;
                if days == 0 || strikes < 5 || !(forward > 0.0) || !(spread >= 0.0) || !(xi_drift > -1.0) {
                    return Err(CliError::Usage(
                        "synth needs --days >= 1, --strikes >= 5, positive --forward, nonnegative --spread and --xi-drift > -1".into(),
                    ));
                }
                let maturities =
                    if maturities.is_empty() { DEFAULT_SYNTH_MATURITIES.to_vec() } else { sorted_unique(maturities) };
                (CommandConfig::Synth { xi, date, days, xi_drift, forward, maturities, strikes, spread }, models)
            }
            Command::Fvc { chain } => {
                inputs.insert("chain".into(), chain);
                (CommandConfig::Fvc, Vec::new())
            }
            Command::Surface { model, curve, chain, maturities, ks, date } => {
                let models = resolve_models(&model, false)?;
                single(&models)?;
                let xi = curve_input(&curve, &mut inputs)?;
                match chain {
                    Some(c) => {
                        inputs.insert("chain".into(), c);
                    }
                    None if maturities.is_empty() || ks.is_empty() => {
                        return Err(CliError::Usage("surface needs --chain or both --maturities and --ks".into()));
                    }
                    None => {}
                }
                (CommandConfig::Surface { xi, maturities: sorted_unique(maturities), ks: sorted_unique(ks), date }, models)
            }
            Command::Calibrate { model, chain, fvc, horizon: hz, objective: obj, budget, starts } => {
                let models = resolve_models(&model, false)?;
                inputs.insert("chain".into(), chain);
                if let Some(f) = fvc {
                    inputs.insert("fvc".into(), f);
                }
                if budget == 0 || starts == 0 {
                    return Err(CliError::Usage("--budget and --starts must be positive".into()));
                }
                horizon = hz;
                objective = obj;
                (CommandConfig::Calibrate { budget, starts }, models)
            }
            Command::Skew { model, curve, maturities, mc, chain } => {
                let models = resolve_models(&model, false)?;
                single(&models)?;
                let xi = curve_input(&curve, &mut inputs)?;
                if let Some(c) = chain {
                    inputs.insert("chain".into(), c);
                }
                let maturities =
                    if maturities.is_empty() { DEFAULT_SKEW_MATURITIES.to_vec() } else { sorted_unique(maturities) };
                (CommandConfig::Skew { xi, maturities, mc }, models)
            }
            Command::Backtest { chain, calibration, fvc, horizon_days, include_anchor } => {
                inputs.insert("chain".into(), chain);
                inputs.insert("calibration".into(), calibration);
                if let Some(f) = fvc {
                    inputs.insert("fvc".into(), f);
                }
                (CommandConfig::Backtest { horizon_days, include_anchor }, Vec::new())
            }
            Command::Roughness { model, xi, years, raw_levels, overlapping, skew, tau } => {
                let models = resolve_models(&model, true)?;
                check_xi(xi)?;
                if years == 0 {
                    return Err(CliError::Usage("--years must be positive".into()));
                }
                if let Some(s) = skew {
                    inputs.insert("skew".into(), s);
                }
                if tau.is_some_and(|t| !(t > 0.0)) {
                    return Err(CliError::Usage("--tau must be positive".into()));
                }
                (CommandConfig::Roughness { xi, years, log_levels: !raw_levels, overlapping, tau }, models)
            }
        };
        if cli.paths < 2 || cli.paths % 2 != 0 {
            return Err(CliError::Usage(format!("--paths must be an even number >= 2, got {}", cli.paths)));
        }
        let mut input_data = BTreeMap::new();
        let mut digests = BTreeMap::new();
        for (role, path) in &inputs {
            let bytes = read_input(path)?;
            digests.insert(role.clone(), sha256_hex(&bytes));
            input_data.insert(role.clone(), bytes);
        }
        Ok(Self {
            command,
            models,
            horizon,
            objective,
            seed: cli.seed,
            paths: cli.paths,
            filter,
            inputs: digests,
            input_data,
            out: cli.out,
        })
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn input(&self, role: &str) -> Option<&[u8]> {
        self.input_data.get(role).map(Vec::as_slice)
    }

    pub fn command_name(&self) -> &'static str {
        match self.command {
            CommandConfig::Synth { .. } => "synth",
            CommandConfig::Fvc => "fvc",
            CommandConfig::Surface { .. } => "surface",
            CommandConfig::Calibrate { .. } => "calibrate",
            CommandConfig::Skew { .. } => "skew",
            CommandConfig::Backtest { .. } => "backtest",
            CommandConfig::Roughness { .. } => "roughness",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn config(args: &[&str]) -> Result<RunConfig, CliError> {
        let mut full = vec!["vsmile"];
        full.extend_from_slice(args);
        RunConfig::from_cli(Cli::try_parse_from(full).map_err(|e| CliError::Usage(e.to_string()))?)
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = config(&["--out", "a", "skew", "--model", "rough"]).unwrap();
        let b = config(&["--out", "b", "skew", "--model", "rough"]).unwrap();
        let c = config(&["--out", "a", "--seed", "3", "skew", "--model", "rough"]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn overrides_need_one_model() {
        assert!(config(&["roughness", "--eta", "0.5"]).is_err());
        let c = config(&["skew", "--model", "one-factor", "--eta", "0.5", "--rho", "-0.3"]).unwrap();
        assert_eq!(c.models[0].eta, 0.5);
        assert_eq!(c.models[0].rho, -0.3);
        assert!(config(&["skew", "--model", "rough", "--eta-l", "1"]).is_err());
    }

    #[test]
    fn odd_paths_rejected() {
        assert!(config(&["--paths", "7", "skew", "--model", "rough"]).is_err());
    }
}
