//! Volterra Bergomi stochastic volatility models: kernels, Monte Carlo
//! simulation and pricing, ATM-skew analytics, forward variance extraction,
//! calibration, backtesting and roughness estimation.

pub mod black;
pub mod chain;
pub mod error;
pub mod forward_variance;
pub mod kernels;
pub mod pricing;
pub mod quad;
pub mod simulation;
pub mod skew;
pub mod table;
pub mod linalg;
pub mod optimizer;
pub mod calibration;
pub mod backtest;
pub mod roughness;

pub use error::{Error, Result};
pub use forward_variance::ForwardVarianceCurve;
pub use kernels::{KernelKind, ModelSpec};
