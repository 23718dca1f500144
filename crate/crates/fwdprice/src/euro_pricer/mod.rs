//! European forward indifference prices.
//!
//! The price `p(t, s, y)` of a claim `C(Y_T)` on the non-traded asset
//! solves a semi-linear equation under the minimal martingale measure
//! (see [`solve_pde_euro`]). With `γ = 0` it reduces to the marginal price
//! `E^{Q^M}[C(Y_T) | ·]`; with known Sharpe ratios the distortion transform
//! gives a closed form ([`distortion_price`]) that serves as an oracle;
//! for small `γ` the price is approximated by the first-order expansion
//! ([`expansion_price`]).

mod distortion;
mod expansion;
mod grid;
mod payoff;
pub(crate) mod solver;
mod surface;

use serde::Serialize;

pub use distortion::distortion_price;
pub use expansion::{expansion_price, ExpansionConfig, ExpansionResult};
pub(crate) use expansion::{qm_stratified_pairs, stratified_mean};
pub use grid::{
    qm_generator_coeffs, Axis, GeneratorCoeffs, GridSpec, PricingMode, QmModel, SolverConfig,
};
pub use payoff::{clamp_polyline, Monotonicity, PayoffSpec, PiecewiseLinear};
pub use solver::ObstacleMethod;
pub use surface::{
    hedge_from_derivatives, hedge_ratio, optimal_control, write_diagnostics_jsonl,
    write_surface_csv, PriceSurface, StepDiagnostic, SurfacePoint,
};

use crate::error::{ensure, Result};
use crate::market_model::MarketParams;

/// Solves the forward indifference price equation
///
/// ```text
/// p_t + 𝒜^{Q^M} p + ½ γ (1−ρ²) (σʸ y p_y)² = 0,    p(T, s, y) = C(y),
/// ```
///
/// on the given grid. In full-information mode the `s` dimension collapses
/// and the returned surface has a single stock node at `s₀`.
///
/// # Errors
/// Invalid inputs (negative `γ`, bad grid or parameters) and numerical
/// breakdown of the time stepping.
pub fn solve_pde_euro(
    payoff: &PayoffSpec,
    grid: &GridSpec,
    gamma: f64,
    mode: &PricingMode,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<PriceSurface> {
    Ok(solver::solve(payoff, grid, gamma, mode, params, cfg, None)?.surface)
}

/// The marginal price `E^{Q^M}[C(Y_T) | ·]`, i.e. [`solve_pde_euro`] with
/// `γ = 0`.
pub fn marginal_price(
    payoff: &PayoffSpec,
    grid: &GridSpec,
    mode: &PricingMode,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<PriceSurface> {
    solve_pde_euro(payoff, grid, 0.0, mode, params, cfg)
}

/// Closed-form full-information marginal price: the expectation of the
/// pay-off under the lognormal law of `Y_T` with drift rate
/// `σʸ(λʸ − ρλˢ)`.
pub fn marginal_price_closed_form(
    payoff: &PayoffSpec,
    tau: f64,
    y: f64,
    params: &MarketParams,
) -> Result<f64> {
    params.validate()?;
    ensure(tau >= 0.0 && y > 0.0, || {
        format!("need tau >= 0 and y > 0, got tau={tau}, y={y}")
    })?;
    let pw = payoff.piecewise()?;
    let mu = params.sigma_y * (params.lambda_y_true - params.rho * params.lambda_s_true);
    Ok(pw.lognormal_expectation(y, mu, params.sigma_y, tau))
}

/// Perfect-correlation (Black–Scholes) hedge: shares of stock per claim
/// when `Y` is treated as a deterministic function of `S`,
/// `θ = (σʸ y)/(σˢ s) · ∂_y E[C(Y_T)]` with the driftless lognormal law.
pub fn perfect_hedge_ratio(
    payoff: &PiecewiseLinear,
    tau: f64,
    s: f64,
    y: f64,
    params: &MarketParams,
) -> f64 {
    params.sigma_y * y / (params.sigma_s * s) * payoff.lognormal_delta(y, 0.0, params.sigma_y, tau)
}

/// Primal and dual value-function quantities at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueSnapshot {
    /// Time.
    pub t: f64,
    /// Wealth.
    pub x: f64,
    /// Mean–variance trade-off `A_t`.
    pub a: f64,
    /// Indifference price.
    pub p: f64,
    /// Value with the claim sold, `−exp(−γ(x − p) + a/2)`.
    pub v_claim: f64,
    /// Value without the claim, `−exp(−γx + a/2)`.
    pub v_noclaim: f64,
    /// Minimal entropy term with the claim, `−γp − a/2`.
    pub h_claim: f64,
    /// Minimal entropy term without the claim, `−a/2`.
    pub h_noclaim: f64,
}

/// Evaluates the value processes with and without the claim.
///
/// # Errors
/// `a < 0` or `γ ≤ 0`.
pub fn value_snapshot(t: f64, x: f64, a: f64, p: f64, gamma: f64) -> Result<ValueSnapshot> {
    ensure(gamma > 0.0 && gamma.is_finite(), || {
        format!("gamma must be positive, got {gamma}")
    })?;
    ensure(a >= 0.0, || {
        format!("trade-off must be non-negative, got {a}")
    })?;
    Ok(ValueSnapshot {
        t,
        x,
        a,
        p,
        v_claim: -(-gamma * (x - p) + 0.5 * a).exp(),
        v_noclaim: -(-gamma * x + 0.5 * a).exp(),
        h_claim: -gamma * p - 0.5 * a,
        h_noclaim: -0.5 * a,
    })
}
