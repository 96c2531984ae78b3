//! Bounded multi-start Nelder–Mead on the unit box.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter (unit-box coordinates) falls below this.
    pub x_tol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 400, f_tol: 1e-12, x_tol: 1e-7, initial_step: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub n_evals: usize,
    /// Terminated by a tolerance rather than the budget.
    pub converged: bool,
    /// Best value after each evaluation.
    pub history: Vec<f64>,
}

struct Counted<'a, F> {
    f: &'a F,
    evals: usize,
    best: f64,
    history: Vec<f64>,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        self.evals += 1;
        if v < self.best {
            self.best = v;
        }
        self.history.push(self.best);
        v
    }
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Nelder–Mead from `x0` with points projected onto `[0, 1]^d`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &NelderMeadOptions) -> LocalResult {
    let d = x0.len();
    let mut fun = Counted { f, evals: 0, best: f64::INFINITY, history: Vec::new() };
    let mut start = x0.to_vec();
    clamp_unit(&mut start);
    let f0 = fun.call(&start);
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.clone(), f0)];
    for i in 0..d {
        if fun.evals >= opts.max_evals {
            break;
        }
        let mut p = start.clone();
        p[i] += if p[i] + opts.initial_step <= 1.0 { opts.initial_step } else { -opts.initial_step };
        let v = fun.call(&p);
        simplex.push((p, v));
    }
    let mut converged = false;
    while simplex.len() == d + 1 && fun.evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread <= opts.f_tol) || diameter <= opts.x_tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|(p, _)| p[j]).sum::<f64>() / d as f64).collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
            clamp_unit(&mut p);
            p
        };
        let xr = along(1.0);
        let fr = fun.call(&xr);
        if fr < simplex[0].1 {
            if fun.evals >= opts.max_evals {
                simplex[d] = (xr, fr);
                break;
            }
            let xe = along(2.0);
            let fe = fun.call(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            if fun.evals >= opts.max_evals {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let p = along(0.5);
                let v = fun.call(&p);
                (p, v)
            } else {
                let p = along(-0.5);
                let v = fun.call(&p);
                (p, v)
            };
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                // Shrink towards the best vertex.
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    if fun.evals >= opts.max_evals {
                        break;
                    }
                    let p: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let v = fun.call(&p);
                    *vertex = (p, v);
                }
            }
        }
    }
    let (x, value) = simplex
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, v)| (p.clone(), *v))
        .expect("non-empty simplex");
    LocalResult { x, value, initial_value: f0, n_evals: fun.evals, converged, history: fun.history }
}

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut x = 0.0;
    while i > 0 {
        x += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    x
}

/// Low-discrepancy (Halton) start points in `[0, 1]^dim`.
pub fn halton_points(n: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
    (1..=n as u64).map(|i| (0..dim).map(|j| radical_inverse(i, PRIMES[j])).collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Index of the start that produced the optimum.
    pub best_start: usize,
    pub starts: Vec<LocalResult>,
}

/// Runs Nelder–Mead from `n_starts` Halton points; ties between starts go
/// to the lower start index.
pub fn multi_start<F>(f: &F, dim: usize, n_starts: usize, opts: &NelderMeadOptions) -> MultiStartResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let points = halton_points(n_starts.max(1), dim);
    let starts: Vec<LocalResult> = points.par_iter().map(|x0| nelder_mead(f, x0, opts)).collect();
    let mut best_start = 0;
    for (i, s) in starts.iter().enumerate() {
        if s.value < starts[best_start].value {
            best_start = i;
        }
    }
    let best_initial = starts.iter().map(|s| s.initial_value).fold(f64::INFINITY, f64::min);
    let best = &starts[best_start];
    MultiStartResult {
        x: best.x.clone(),
        value: best.value,
        n_evals: starts.iter().map(|s| s.n_evals).sum(),
        converged: best.value < best_initial || starts.iter().any(|s| s.converged),
        best_start,
        starts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 10.0 * (x[1] - 0.7).powi(2);
        let r = nelder_mead(&f, &[0.9, 0.1], &NelderMeadOptions { max_evals: 500, ..Default::default() });
        assert!((r.x[0] - 0.3).abs() < 1e-4 && (r.x[1] - 0.7).abs() < 1e-4, "{:?}", r.x);
        assert!(r.converged);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| x[0] + (x[1] - 2.0).powi(2);
        let r = nelder_mead(&f, &[0.5, 0.5], &NelderMeadOptions::default());
        assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.x[0] < 1e-4 && r.x[1] > 1.0 - 1e-4);
    }

    #[test]
    fn budget_is_respected() {
        let f = |x: &[f64]| (x[0] - 0.123).abs().sqrt() + x[1];
        let opts = NelderMeadOptions { max_evals: 17, f_tol: 0.0, x_tol: 0.0, ..Default::default() };
        let r = nelder_mead(&f, &[0.5, 0.5], &opts);
        assert!(r.n_evals <= 17);
        assert_eq!(r.history.len(), r.n_evals);
    }

    #[test]
    fn halton_first_points() {
        let p = halton_points(3, 2);
        assert_eq!(p[0], vec![0.5, 1.0 / 3.0]);
        assert_eq!(p[1], vec![0.25, 2.0 / 3.0]);
        assert_eq!(p[2], vec![0.75, 1.0 / 9.0]);
    }

    #[test]
    fn multi_start_escapes_local_minimum() {
        // Double well with the deeper minimum near 0.85.
        let f = |x: &[f64]| (x[0] - 0.2).powi(2) * (x[0] - 0.85).powi(2) - 0.01 * x[0];
        let r = multi_start(&f, 1, 8, &NelderMeadOptions::default());
        assert!((r.x[0] - 0.85).abs() < 0.02, "{:?}", r.x);
    }
}
