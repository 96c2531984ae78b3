//! Small dense least-squares solver (Householder QR).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    /// Standard errors from `σ̂² (XᵀX)⁻¹`; zero when the fit is exact.
    pub std_errors: Vec<f64>,
    pub residual_sum_squares: f64,
    /// Coefficient of determination.
    pub r_squared: f64,
}

/// Least-squares fit of `y ≈ X β` where `rows[i]` is row `i` of `X`.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<LeastSquares> {
    let m = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if p == 0 || m < p || y.len() != m {
        return Err(Error::DegenerateRegression(format!("{m} observations for {p} coefficients")));
    }
    // Column-major copy of X and a working copy of y.
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut b = y.to_vec();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        let norm = a[j][j..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = a[j].iter().map(|x| x.abs()).fold(0.0, f64::max);
        if !(norm > 1e-13 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0 {
            return Err(Error::DegenerateRegression(format!("design column {j} is rank deficient")));
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for col in a.iter_mut().skip(j).chain(std::iter::once(&mut b)) {
            let dot: f64 = v.iter().zip(&col[j..]).map(|(x, y)| x * y).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, x) in col[j..].iter_mut().zip(&v) {
                *c -= f * x;
            }
        }
        for (k, col) in a.iter().enumerate().skip(j) {
            r[j][k] = col[j];
        }
    }
    // Back substitution.
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| r[i][k] * beta[k]).sum();
        beta[i] = (b[i] - s) / r[i][i];
    }
    let rss: f64 = b[p..].iter().map(|x| x * x).sum();
    let mean = y.iter().sum::<f64>() / m as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    // R⁻¹ for the covariance (RᵀR)⁻¹ = R⁻¹ R⁻ᵀ.
    let mut rinv = vec![vec![0.0; p]; p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|k| r[i][k] * rinv[k][c]).sum();
            rinv[i][c] = (rhs - s) / r[i][i];
        }
    }
    let sigma2 = if m > p { rss / (m - p) as f64 } else { 0.0 };
    let std_errors = (0..p)
        .map(|i| (sigma2 * rinv[i].iter().map(|x| x * x).sum::<f64>()).sqrt())
        .collect();
    Ok(LeastSquares { coefficients: beta, std_errors, residual_sum_squares: rss, r_squared })
}

/// Ordinary least squares of `y` on `x`; coefficients are `[intercept, slope]`.
pub fn simple_regression(x: &[f64], y: &[f64]) -> Result<LeastSquares> {
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![1.0, v]).collect();
    least_squares(&rows, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let f = simple_regression(&x, &y).unwrap();
        assert!((f.coefficients[0] - 1.5).abs() < 1e-14);
        assert!((f.coefficients[1] + 2.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn textbook_standard_errors() {
        // y = 1, 3, 2, 5 on x = 0..3: slope 1.1, intercept 1.1,
        // rss = 2.7, se(slope) = sqrt(1.35 / 5).
        let f = simple_regression(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 5.0]).unwrap();
        assert!((f.coefficients[1] - 1.1).abs() < 1e-14);
        assert!((f.coefficients[0] - 1.1).abs() < 1e-14);
        assert!((f.residual_sum_squares - 2.7).abs() < 1e-13);
        assert!((f.std_errors[1] - (1.35f64 / 5.0).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn rank_deficient() {
        assert!(simple_regression(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(simple_regression(&[1.0], &[1.0]).is_err());
    }
}
