//! Monte Carlo paths of `(W, X, V, log S)` on a uniform grid.
//!
//! Convolution kernels (rough, path-dependent) use a hybrid scheme: the
//! stochastic integral over the interval adjacent to the evaluation time is
//! drawn exactly, jointly with its Brownian increment, and older intervals
//! use Riemann weights whose squares integrate `K²` exactly over each
//! interval. The discrete `Var(X_{t_i})` therefore equals `∫₀^{t_i} K²`.
//! Exponential kernels use the exact Ornstein–Uhlenbeck recursion per factor,
//! all factors driven by the same standardized `W` increment.

use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_variance::ForwardVarianceCurve;
use crate::kernels::{self, decay_integral, KernelKind, ModelSpec};

/// Trading days per year.
pub const TRADING_DAYS: f64 = 252.0;
/// Five-minute bars per trading day.
pub const BARS_PER_DAY: usize = 78;
/// Smallest step count of a pricing grid.
pub const PRICING_MIN_STEPS: usize = 64;

// Above this many steps the Riemann convolution switches to FFT.
const FFT_THRESHOLD: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid end must be positive, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(Self { t_end, n_steps })
    }

    /// Daily steps up to three months, two-day steps beyond, and never
    /// fewer than [`PRICING_MIN_STEPS`].
    pub fn pricing(t_end: f64) -> Result<Self> {
        let target = if t_end <= 0.25 { 1.0 / TRADING_DAYS } else { 2.0 / TRADING_DAYS };
        let n = ((t_end / target) - 1e-9).ceil().max(1.0) as usize;
        Self::new(t_end, n.max(PRICING_MIN_STEPS))
    }

    /// Five-minute grid over `days` trading days.
    pub fn intraday(days: usize) -> Result<Self> {
        Self::new(days as f64 / TRADING_DAYS, days * BARS_PER_DAY)
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Pair each path with its mirror image (all normals negated).
    pub antithetic: bool,
    /// Each step's Gaussian draws are sums of this many standard normals
    /// scaled by `1/√r`, so that a grid with `r` times fewer steps reuses
    /// the same underlying draws as the finer grid.
    pub fine_draws: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { antithetic: true, fine_draws: 1 }
    }
}

/// Simulated paths; row `p` is path `p`, column `i` is grid time `t_i`
/// (increments: the step `[t_i, t_{i+1})`).
#[derive(Debug, Clone)]
pub struct PathSet {
    pub spec: ModelSpec,
    pub grid: TimeGrid,
    pub seed: u64,
    pub w_increments: Array2<f64>,
    pub x: Array2<f64>,
    pub v: Array2<f64>,
    pub log_s: Array2<f64>,
    /// Step averages of `ξ₀`; `v[p, i] = xi_step[i] · exp(x − ½∫K²)`.
    pub xi_step: Vec<f64>,
    pub diagnostics: Vec<String>,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.v.nrows()
    }
}

/// Exact Ornstein–Uhlenbeck update driven by the Brownian increment `dw`
/// over a step of length `dt`.
pub fn ou_step(prev_x: f64, dt: f64, lambda: f64, vol: f64, dw: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("mean reversion must be positive, got {lambda}")));
    }
    let std = vol * decay_integral(2.0 * lambda, dt).sqrt();
    Ok((-lambda * dt).exp() * prev_x + std * dw / dt.sqrt())
}

struct FftConv {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    weights_hat: Vec<Complex<f64>>,
}

enum Factor {
    Convolution {
        /// Loading of the adjacent-interval integral on its own `z`.
        near_a: f64,
        /// Loading on the extra independent normal.
        near_b: f64,
        /// `weights[m]` multiplies `ΔW` from `m` steps back; entries 0 and 1 are zero.
        weights: Vec<f64>,
        fft: Option<FftConv>,
    },
    Exponential {
        /// `(e^{−λ dt}, c √((1 − e^{−2λ dt})/(2λ)))` per factor.
        steps: Vec<(f64, f64)>,
    },
}

/// Precomputed, path-independent parts of a simulation.
pub(crate) struct Scheme {
    grid: TimeGrid,
    rho: f64,
    factor: Factor,
    xi_step: Vec<f64>,
    xi_end: f64,
    /// `½ ∫₀^{t_i} K²` per grid point.
    half_l2: Vec<f64>,
    diagnostics: Vec<String>,
}

/// One simulated path, reused as scratch space.
#[derive(Debug, Clone, Default)]
pub(crate) struct PathBuf {
    pub dw: Vec<f64>,
    pub dw_perp: Vec<f64>,
    pub extra: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub log_s: Vec<f64>,
    conv_in: Vec<Complex<f64>>,
    conv_scratch: Vec<Complex<f64>>,
}

impl Scheme {
    pub(crate) fn new(spec: &ModelSpec, fvc: &ForwardVarianceCurve, grid: TimeGrid) -> Result<Self> {
        spec.validate()?;
        if grid.t_end > fvc.horizon() * (1.0 + 1e-12) {
            return Err(Error::OutOfSupport { t: grid.t_end, last: fvc.horizon() });
        }
        let n = grid.n_steps;
        let dt = grid.dt();
        let mut diagnostics = Vec::new();
        if spec.kind != KernelKind::Rough && dt > spec.epsilon {
            let msg = format!(
                "grid too coarse: step {dt:.6} exceeds the kernel timescale {:.6}",
                spec.epsilon
            );
            log::warn!("{msg}");
            diagnostics.push(msg);
        }
        let times = grid.times();
        let xi_step = (0..n)
            .map(|i| fvc.average(times[i], times[i + 1]))
            .collect::<Result<Vec<_>>>()?;
        let xi_end = fvc.value(grid.t_end.min(fvc.horizon()))?;
        let half_l2 = times
            .iter()
            .map(|&t| kernels::kernel_l2_integral(spec, t).map(|l| 0.5 * l))
            .collect::<Result<Vec<_>>>()?;

        let factor = if spec.kind.is_exponential() {
            let steps = spec
                .exp_factors()
                .iter()
                .map(|f| ((-f.rate * dt).exp(), f.scale * decay_integral(2.0 * f.rate, dt).sqrt()))
                .collect();
            Factor::Exponential { steps }
        } else {
            let near_cov = kernels::kernel_integral(spec, dt)?;
            let near_var = kernels::kernel_l2_integral(spec, dt)?;
            let near_a = near_cov / dt.sqrt();
            let near_b = (near_var - near_a * near_a).max(0.0).sqrt();
            let mut weights = vec![0.0; n + 1];
            for (m, w) in weights.iter_mut().enumerate().skip(2) {
                let inc = kernels::l2_increment(spec, (m - 1) as f64 * dt, m as f64 * dt)?;
                *w = (inc / dt).sqrt();
            }
            let fft = (n > FFT_THRESHOLD).then(|| {
                let size = (2 * n).next_power_of_two();
                let mut planner = FftPlanner::new();
                let forward = planner.plan_fft_forward(size);
                let inverse = planner.plan_fft_inverse(size);
                let mut weights_hat: Vec<Complex<f64>> = (0..size)
                    .map(|i| Complex::new(weights.get(i).copied().unwrap_or(0.0), 0.0))
                    .collect();
                forward.process(&mut weights_hat);
                let scale = 1.0 / size as f64;
                weights_hat.iter_mut().for_each(|c| *c *= scale);
                FftConv { size, forward, inverse, weights_hat }
            });
            Factor::Convolution { near_a, near_b, weights, fft }
        };
        Ok(Self { grid, rho: spec.rho, factor, xi_step, xi_end, half_l2, diagnostics })
    }

    pub(crate) fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub(crate) fn xi_step(&self) -> &[f64] {
        &self.xi_step
    }

    fn needs_extra(&self) -> bool {
        matches!(self.factor, Factor::Convolution { .. })
    }

    pub(crate) fn new_buf(&self) -> PathBuf {
        let n = self.grid.n_steps;
        let conv = match &self.factor {
            Factor::Convolution { fft: Some(f), .. } => f.size,
            _ => 0,
        };
        PathBuf {
            dw: vec![0.0; n],
            dw_perp: vec![0.0; n],
            extra: vec![0.0; if self.needs_extra() { n } else { 0 }],
            x: vec![0.0; n + 1],
            v: vec![0.0; n + 1],
            log_s: vec![0.0; n + 1],
            conv_in: vec![Complex::new(0.0, 0.0); conv],
            conv_scratch: Vec::new(),
        }
    }

    /// Draws the Gaussian inputs of one path (unit variance per entry).
    fn draw(&self, rng: &mut ChaCha8Rng, fine: usize, buf: &mut PathBuf) {
        let scale = 1.0 / (fine as f64).sqrt();
        let block = |out: &mut [f64], rng: &mut ChaCha8Rng, r: usize| {
            for z in out.iter_mut() {
                let mut s = 0.0;
                for _ in 0..r {
                    s += rng.sample::<f64, _>(StandardNormal);
                }
                *z = if r == 1 { s } else { s * scale };
            }
        };
        block(&mut buf.dw, rng, fine);
        block(&mut buf.dw_perp, rng, fine);
        block(&mut buf.extra, rng, 1);
    }

    /// Turns unit normals into a path. `sign` mirrors all draws.
    fn evolve(&self, sign: f64, normals: &PathBuf, buf: &mut PathBuf) {
        let n = self.grid.n_steps;
        let sqrt_dt = self.grid.dt().sqrt();
        let dt = self.grid.dt();
        for i in 0..n {
            buf.dw[i] = sign * sqrt_dt * normals.dw[i];
            buf.dw_perp[i] = sign * sqrt_dt * normals.dw_perp[i];
        }
        buf.x[0] = 0.0;
        match &self.factor {
            Factor::Exponential { steps } => {
                let mut state = [0.0f64; 2];
                for i in 0..n {
                    let z = sign * normals.dw[i];
                    let mut total = 0.0;
                    for (s, &(decay, std)) in state.iter_mut().zip(steps) {
                        *s = decay * *s + std * z;
                        total += *s;
                    }
                    buf.x[i + 1] = total;
                }
            }
            Factor::Convolution { near_a, near_b, weights, fft } => {
                match fft {
                    None => {
                        for i in 1..=n {
                            let mut acc = 0.0;
                            for m in 2..=i {
                                acc += weights[m] * buf.dw[i - m];
                            }
                            buf.x[i] = acc;
                        }
                    }
                    Some(f) => {
                        let input = &mut buf.conv_in;
                        for (j, c) in input.iter_mut().enumerate() {
                            *c = Complex::new(if j < n { buf.dw[j] } else { 0.0 }, 0.0);
                        }
                        let len = f.forward.get_inplace_scratch_len().max(f.inverse.get_inplace_scratch_len());
                        if buf.conv_scratch.len() < len {
                            buf.conv_scratch.resize(len, Complex::new(0.0, 0.0));
                        }
                        f.forward.process_with_scratch(input, &mut buf.conv_scratch);
                        for (c, w) in input.iter_mut().zip(&f.weights_hat) {
                            *c *= w;
                        }
                        f.inverse.process_with_scratch(input, &mut buf.conv_scratch);
                        for i in 1..=n {
                            buf.x[i] = input[i].re;
                        }
                    }
                }
                for i in 1..=n {
                    let z = sign * normals.dw[i - 1];
                    let e = sign * normals.extra[i - 1];
                    buf.x[i] += near_a * z + near_b * e;
                }
            }
        }
        let rho = self.rho;
        let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
        buf.log_s[0] = 0.0;
        for i in 0..=n {
            let xi = if i < n { self.xi_step[i] } else { self.xi_end };
            buf.v[i] = xi * (buf.x[i] - self.half_l2[i]).exp();
        }
        for i in 0..n {
            let v = buf.v[i];
            buf.log_s[i + 1] = buf.log_s[i] - 0.5 * v * dt + v.sqrt() * (rho * buf.dw[i] + rho_perp * buf.dw_perp[i]);
        }
    }

    /// Generates `n_paths` paths and maps each through `f`, in path order.
    /// Results do not depend on the number of worker threads.
    pub(crate) fn run<T, F>(&self, n_paths: usize, seed: u64, opts: SimOptions, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&PathBuf) -> T + Sync,
    {
        if n_paths == 0 {
            return Err(Error::InvalidArgument("need at least one path".into()));
        }
        if opts.fine_draws == 0 {
            return Err(Error::InvalidArgument("fine_draws must be at least 1".into()));
        }
        let per_stream = if opts.antithetic { 2 } else { 1 };
        let streams = n_paths.div_ceil(per_stream);
        let chunks: Vec<Vec<T>> = (0..streams)
            .into_par_iter()
            .map_init(
                || (self.new_buf(), self.new_buf()),
                |(normals, path), stream| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(stream as u64);
                    self.draw(&mut rng, opts.fine_draws, normals);
                    let count = per_stream.min(n_paths - stream * per_stream);
                    let mut out = Vec::with_capacity(count);
                    for j in 0..count {
                        let sign = if j == 0 { 1.0 } else { -1.0 };
                        self.evolve(sign, normals, path);
                        out.push(f(path));
                    }
                    out
                },
            )
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Simulates `n_paths` antithetic paths with default options.
pub fn simulate(
    spec: &ModelSpec,
    fvc: &ForwardVarianceCurve,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    simulate_with(spec, fvc, grid, n_paths, seed, SimOptions::default())
}

pub fn simulate_with(
    spec: &ModelSpec,
    fvc: &ForwardVarianceCurve,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<PathSet> {
    let scheme = Scheme::new(spec, fvc, grid)?;
    let rows = scheme.run(n_paths, seed, opts, |p| {
        (p.dw.clone(), p.x.clone(), p.v.clone(), p.log_s.clone())
    })?;
    let n = grid.n_steps;
    let mut w = Array2::zeros((n_paths, n));
    let mut x = Array2::zeros((n_paths, n + 1));
    let mut v = Array2::zeros((n_paths, n + 1));
    let mut log_s = Array2::zeros((n_paths, n + 1));
    for (p, (dw, xr, vr, sr)) in rows.into_iter().enumerate() {
        w.row_mut(p).assign(&ndarray::ArrayView1::from(&dw));
        x.row_mut(p).assign(&ndarray::ArrayView1::from(&xr));
        v.row_mut(p).assign(&ndarray::ArrayView1::from(&vr));
        log_s.row_mut(p).assign(&ndarray::ArrayView1::from(&sr));
    }
    Ok(PathSet {
        spec: *spec,
        grid,
        seed,
        w_increments: w,
        x,
        v,
        log_s,
        xi_step: scheme.xi_step,
        diagnostics: scheme.diagnostics,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpHeader {
    spec: ModelSpec,
    grid: TimeGrid,
    seed: u64,
    n_paths: usize,
    xi_step: Vec<f64>,
    blocks: Vec<String>,
}

const DUMP_BLOCKS: [&str; 4] = ["w_increments", "x", "v", "log_s"];

/// Writes a JSON header line followed by the little-endian `f64` blocks
/// `w_increments`, `x`, `v`, `log_s`, each row-major.
pub fn write_paths<W: Write>(paths: &PathSet, mut out: W) -> Result<()> {
    let header = DumpHeader {
        spec: paths.spec,
        grid: paths.grid,
        seed: paths.seed,
        n_paths: paths.n_paths(),
        xi_step: paths.xi_step.clone(),
        blocks: DUMP_BLOCKS.iter().map(|s| s.to_string()).collect(),
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out, "{line}")?;
    for block in [&paths.w_increments, &paths.x, &paths.v, &paths.log_s] {
        for value in block.iter() {
            out.write_all(&value.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a dump written by [`write_paths`].
pub fn read_paths<R: BufRead>(mut input: R) -> Result<PathSet> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: DumpHeader = serde_json::from_str(line.trim()).map_err(|e| Error::Io(format!("path dump header: {e}")))?;
    let n = header.grid.n_steps;
    let p = header.n_paths;
    let mut read_block = |cols: usize| -> Result<Array2<f64>> {
        let mut bytes = vec![0u8; p * cols * 8];
        input.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Array2::from_shape_vec((p, cols), data).map_err(|e| Error::Io(e.to_string()))
    };
    let w_increments = read_block(n)?;
    let x = read_block(n + 1)?;
    let v = read_block(n + 1)?;
    let log_s = read_block(n + 1)?;
    Ok(PathSet {
        spec: header.spec,
        grid: header.grid,
        seed: header.seed,
        w_increments,
        x,
        v,
        log_s,
        xi_step: header.xi_step,
        diagnostics: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(t: f64) -> ForwardVarianceCurve {
        ForwardVarianceCurve::flat(0.04, t).unwrap()
    }

    #[test]
    fn pricing_grid_resolution() {
        assert_eq!(TimeGrid::pricing(1.0 / 52.0).unwrap().n_steps, 64);
        assert_eq!(TimeGrid::pricing(0.5).unwrap().n_steps, 64);
        assert_eq!(TimeGrid::pricing(1.0).unwrap().n_steps, 126);
        assert_eq!(TimeGrid::pricing(3.0).unwrap().n_steps, 378);
        assert_eq!(TimeGrid::intraday(2).unwrap().n_steps, 156);
    }

    #[test]
    fn ou_step_limits() {
        assert_eq!(ou_step(1.0, 0.1, 2.0, 0.0, 0.3).unwrap(), (-0.2f64).exp());
        let x = ou_step(5.0, 1e3, 2.0, 1.0, 1e3f64.sqrt()).unwrap();
        assert!((x - 0.5).abs() < 1e-12);
        assert!(ou_step(0.0, 0.1, 0.0, 1.0, 0.1).is_err());
        assert!(ou_step(0.0, 0.0, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn structural_invariants() {
        for kind in KernelKind::ALL {
            let spec = ModelSpec::reference(kind);
            let p = simulate(&spec, &flat(0.1), TimeGrid::new(0.1, 20).unwrap(), 7, 3).unwrap();
            assert_eq!(p.n_paths(), 7);
            assert!(p.x.column(0).iter().all(|&x| x == 0.0));
            assert!(p.log_s.column(0).iter().all(|&x| x == 0.0));
            assert!(p.v.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn antithetic_mirror() {
        let spec = ModelSpec::reference(KernelKind::Rough);
        let p = simulate(&spec, &flat(0.1), TimeGrid::new(0.1, 10).unwrap(), 2, 9).unwrap();
        for i in 0..10 {
            assert_eq!(p.w_increments[[0, i]], -p.w_increments[[1, i]]);
            assert_eq!(p.x[[0, i + 1]], -p.x[[1, i + 1]]);
        }
    }

    #[test]
    fn fft_matches_direct_convolution() {
        let spec = ModelSpec::rough(1.0, -0.5, 0.1).unwrap();
        let fvc = flat(1.0);
        let big = TimeGrid::new(1.0, FFT_THRESHOLD + 44).unwrap();
        let scheme = Scheme::new(&spec, &fvc, big).unwrap();
        let Factor::Convolution { weights, near_a, near_b, .. } = &scheme.factor else { panic!() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut normals = scheme.new_buf();
        scheme.draw(&mut rng, 1, &mut normals);
        let mut path = scheme.new_buf();
        scheme.evolve(1.0, &normals, &mut path);
        let n = big.n_steps;
        for i in [1, 2, 17, n / 2, n] {
            let mut direct = near_a * normals.dw[i - 1] + near_b * normals.extra[i - 1];
            for m in 2..=i {
                direct += weights[m] * path.dw[i - m];
            }
            assert!((direct - path.x[i]).abs() < 1e-10, "step {i}: {direct} vs {}", path.x[i]);
        }
    }

    #[test]
    fn dump_round_trip() {
        let spec = ModelSpec::reference(KernelKind::OneFactor);
        let p = simulate(&spec, &flat(0.05), TimeGrid::new(0.05, 12).unwrap(), 3, 1).unwrap();
        let mut buf = Vec::new();
        write_paths(&p, &mut buf).unwrap();
        let q = read_paths(buf.as_slice()).unwrap();
        assert_eq!(q.v, p.v);
        assert_eq!(q.log_s, p.log_s);
        assert_eq!(q.w_increments, p.w_increments);
        assert_eq!(q.spec, p.spec);
    }
}
