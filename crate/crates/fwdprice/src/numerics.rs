//! Small numerical kernels shared by the solvers: the normal law,
//! tridiagonal elimination, and cubic Hermite interpolation.

use statrs::distribution::{ContinuousCDF, Normal};

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal upper tail `1 − Φ(x)`, accurate for large `x`.
pub fn norm_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

/// Standard normal quantile function.
pub fn norm_inv_cdf(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` and `upper[i]` multiplies `x[i+1]` in row
/// `i`; `lower[0]` and `upper[n-1]` are ignored. The matrices produced by the
/// implicit schemes in this crate are diagonally dominant, so no pivoting is
/// needed. Returns `None` if a zero pivot is met.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    if n == 0 {
        return Some(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return None;
    }
    c[0] = upper[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return None;
        }
        c[i] = upper[i] / beta;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}

/// Cubic Hermite interpolation on one cell.
///
/// Given values `f0, f1` and slopes `d0, d1` (with respect to the cell
/// coordinate) at the ends of a cell of width `h`, returns the interpolated
/// value and its derivative at relative position `w ∈ [0, 1]`.
pub fn hermite(f0: f64, f1: f64, d0: f64, d1: f64, h: f64, w: f64) -> (f64, f64) {
    let w2 = w * w;
    let w3 = w2 * w;
    let h00 = 2.0 * w3 - 3.0 * w2 + 1.0;
    let h10 = w3 - 2.0 * w2 + w;
    let h01 = -2.0 * w3 + 3.0 * w2;
    let h11 = w3 - w2;
    let value = h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1;
    let dh00 = 6.0 * w2 - 6.0 * w;
    let dh10 = 3.0 * w2 - 4.0 * w + 1.0;
    let dh01 = -6.0 * w2 + 6.0 * w;
    let dh11 = 3.0 * w2 - 2.0 * w;
    let slope = (dh00 * f0 + dh01 * f1) / h + dh10 * d0 + dh11 * d1;
    (value, slope)
}

/// Locates `x` on a uniform grid starting at `x0` with spacing `h` and `n`
/// nodes. Returns the cell index `k` (so that the cell is `[x_k, x_{k+1}]`),
/// the relative position in the cell, and whether `x` had to be clamped.
pub fn locate_uniform(x0: f64, h: f64, n: usize, x: f64) -> (usize, f64, bool) {
    debug_assert!(n >= 2);
    let pos = (x - x0) / h;
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&pos);
    let pos = pos.clamp(0.0, max);
    let k = (pos.floor() as usize).min(n - 2);
    (k, pos - k as f64, clamped)
}

/// Central first differences of `f` on a uniform grid with spacing `h`,
/// second-order one-sided differences at both ends.
pub fn gradient(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut g = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let s = (f[1] - f[0]) / h;
            g[0] = s;
            g[1] = s;
        }
        return g;
    }
    g[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    for i in 1..n - 1 {
        g[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
    g[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    g
}

/// Least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solution() {
        // [2 1 0; 1 3 1; 0 1 2] x = [3 5 3] has solution [1 1 1].
        let x = solve_tridiagonal(
            &[0.0, 1.0, 1.0],
            &[2.0, 3.0, 2.0],
            &[1.0, 1.0, 0.0],
            &[3.0, 5.0, 3.0],
        )
        .unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |x: f64| x * x * x - 2.0 * x;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let (a, b) = (0.5, 0.8);
        let (v, s) = hermite(f(a), f(b), df(a), df(b), b - a, 0.3);
        let x = a + 0.3 * (b - a);
        assert!((v - f(x)).abs() < 1e-14);
        assert!((s - df(x)).abs() < 1e-13);
    }

    #[test]
    fn gradient_is_exact_for_quadratics() {
        let h = 0.1;
        let f: Vec<f64> = (0..6).map(|i| (i as f64 * h).powi(2)).collect();
        let g = gradient(&f, h);
        for (i, gi) in g.iter().enumerate() {
            assert!((gi - 2.0 * i as f64 * h).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        for &p in &[1e-6, 0.025, 0.5, 0.9] {
            assert!((norm_cdf(norm_inv_cdf(p)) - p).abs() < 1e-9);
        }
    }
}
