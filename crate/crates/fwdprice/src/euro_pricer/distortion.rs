//! Closed-form full-information price via the distortion transform:
//!
//! ```text
//! p(t, y) = (1/k) · log E^{Q^M}[ exp(k·C(Y_T)) | Y_t = y ],   k = γ(1−ρ²).
//! ```

use super::payoff::PayoffSpec;
use crate::error::{ensure, Error, Result};
use crate::market_model::MarketParams;
use crate::numerics::norm_pdf;

/// Half-width of the standard-normal integration range; the density is
/// below the smallest normal `f64` outside it.
const Z_RANGE: f64 = 38.0;

/// Points of the scan that locates the peak of the integrand.
const SCAN_POINTS: usize = 4000;

/// Absolute target error of each quadrature panel.
const PANEL_TOL: f64 = 1e-14;

/// Distortion price at time `t` and level `y` of a claim maturing at
/// `horizon`, under known Sharpe ratios.
///
/// The expectation is computed by double-exponential quadrature in the
/// standard-normal variable of `log Y_T`, split at the pay-off kinks. When
/// `k·sup C < 1` the integrand `expm1(kC)/k` is used so that the small-γ
/// limit keeps full relative accuracy; otherwise the exponent is shifted
/// by the peak of the log-integrand, which keeps the quadrature well
/// scaled even when `exp(k·C)` spans hundreds of orders of magnitude.
///
/// # Errors
/// `γ ≤ 0`, `|ρ| = 1`, invalid parameters, `t > horizon`, or a pay-off
/// whose exponential moment is infinite (unbounded growth).
pub fn distortion_price(
    payoff: &PayoffSpec,
    t: f64,
    y: f64,
    gamma: f64,
    params: &MarketParams,
    horizon: f64,
) -> Result<f64> {
    params.validate()?;
    ensure(gamma > 0.0 && gamma.is_finite(), || {
        format!("gamma must be positive, got {gamma}")
    })?;
    ensure(params.rho.abs() < 1.0, || {
        "distortion price needs |rho| < 1".into()
    })?;
    ensure(y > 0.0 && y.is_finite(), || {
        format!("y must be positive, got {y}")
    })?;
    ensure(t >= 0.0 && t <= horizon && horizon.is_finite(), || {
        format!("need 0 <= t <= horizon, got t={t}, horizon={horizon}")
    })?;
    let pw = payoff.piecewise()?;
    if !pw.is_bounded() {
        return Err(Error::Divergence(
            "pay-off grows without bound; its exponential moment is infinite (add a cap)".into(),
        ));
    }
    let k = gamma * (1.0 - params.rho * params.rho);
    let tau = horizon - t;
    if tau == 0.0 {
        return Ok(pw.value(y));
    }
    let sd = params.sigma_y * tau.sqrt();
    let mu = params.sigma_y * (params.lambda_y_true - params.rho * params.lambda_s_true);
    let m = (mu - 0.5 * params.sigma_y * params.sigma_y) * tau;
    let y_at = |z: f64| y * (m + sd * z).exp();

    let c_max = pw.sup();
    let log_integrand = |z: f64| k * pw.value(y_at(z)) - 0.5 * z * z;
    // Locate the peak of φ(z)·exp(kC) on a coarse scan; the exponent is
    // shifted by the peak value so the integral is of order one whatever
    // the size of k·C, and the peak becomes a panel cut.
    let (z_peak, log_peak) = (0..=SCAN_POINTS)
        .map(|i| -Z_RANGE + 2.0 * Z_RANGE * i as f64 / SCAN_POINTS as f64)
        .map(|z| (z, log_integrand(z)))
        .fold((0.0, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });

    let mut cuts = vec![-Z_RANGE, -8.0, 8.0, Z_RANGE, z_peak];
    cuts.extend(
        pw.kinks
            .iter()
            .map(|&(kink, _)| ((kink / y).ln() - m) / sd)
            .filter(|z| z.abs() < Z_RANGE),
    );
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let integrate = |f: &dyn Fn(f64) -> f64| -> f64 {
        cuts.windows(2)
            .map(|w| quadrature::double_exponential::integrate(f, w[0], w[1], PANEL_TOL).integral)
            .sum()
    };

    let price = if k * c_max < 1.0 {
        // E[expm1(kC)]/k is of the order of E[C], so the absolute panel
        // tolerance stays meaningful as γ → 0.
        let excess = integrate(&|z| norm_pdf(z) * (k * pw.value(y_at(z))).exp_m1() / k);
        (k * excess).ln_1p() / k
    } else {
        let scaled = integrate(&|z| (log_integrand(z) - log_peak).exp());
        (log_peak + scaled.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()) / k
    };
    if !price.is_finite() {
        return Err(Error::Divergence(
            "distortion expectation is not finite".into(),
        ));
    }
    Ok(price)
}
