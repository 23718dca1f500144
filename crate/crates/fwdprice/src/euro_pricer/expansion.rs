//! First-order expansion of the indifference price in the risk aversion:
//!
//! ```text
//! p ≈ p^M + ½ γ ( Var^{Q^M}[C(Y_T)] − E^{Q^M}[⟨X^M⟩_{t,T}] ),
//! ```
//!
//! where `X^M` is the gains process of the marginal hedge. The two moments
//! are estimated by simulation under the minimal martingale measure.
//!
//! Sampling is stratified on the terminal value of the Brownian motion
//! driving `Y`: `H` equiprobable strata with two independent samples each,
//! the path in between filled by a Brownian bridge. Standard errors come
//! from the within-stratum pair differences.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::QmModel;
use super::surface::{PriceSurface, SurfacePoint};
use crate::error::{ensure, Result};
use crate::market_model::path_rng;
use crate::numerics::norm_inv_cdf;

/// Minimum number of simulated paths.
pub const MIN_PATHS: usize = 1000;

/// Relative standard error of the first-order coefficient above which the
/// result carries a wide-confidence-interval warning.
pub const WIDE_CI_REL_SE: f64 = 0.05;

/// Simulation settings of the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionConfig {
    /// Number of paths (rounded down to an even number; at least 1000).
    pub n_paths: usize,
    /// Time steps between the evaluation time and maturity.
    pub n_steps: usize,
    /// Random seed.
    pub seed: u64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 200,
            seed: 1,
        }
    }
}

/// Output of [`expansion_price`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionResult {
    /// Marginal price `p^M(t, s, y)` read from the marginal surface.
    pub p_marginal: f64,
    /// `½ γ (Var − E⟨X^M⟩)`.
    pub first_order_term: f64,
    /// `p^M + first_order_term`.
    pub expansion_value: f64,
    /// First-order coefficient `g = ½ (Var − E⟨X^M⟩)`, so that the
    /// expansion is `p^M + γ g`.
    pub coefficient: f64,
    /// Standard error of `coefficient`.
    pub coefficient_se: f64,
    /// Estimated `Var^{Q^M}[C(Y_T)]`.
    pub payoff_variance: f64,
    /// Estimated `E^{Q^M}[⟨X^M⟩_{t,T}]`.
    pub mean_hedge_qv: f64,
    /// Simulated mean of the pay-off (a diagnostic for `p_marginal`).
    pub mc_mean_payoff: f64,
    /// Standard error of `mc_mean_payoff`.
    pub mc_mean_payoff_se: f64,
    /// Paths used.
    pub n_paths: usize,
    /// Paths that left the surface grid at some step.
    pub clamped_paths: usize,
    /// Set when the confidence interval of the coefficient is wide.
    pub warning: Option<String>,
}

/// Pathwise output of a stratified simulation: terminal pay-off and the
/// time integral of a functional of the surface.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathFunctional {
    pub payoff: f64,
    pub integral: f64,
    pub clamped: bool,
}

/// Simulates `2H` paths of `(S, Y)` under the minimal martingale measure
/// from `(t, s, y)` to the horizon of `surface`, stratified on the
/// terminal value of the driver of `Y`, and returns for each stratum the
/// two pathwise results. `integrand(t, s, y, point)` is integrated in time
/// by the trapezoidal rule.
#[allow(clippy::too_many_arguments)]
pub(crate) fn qm_stratified_pairs<F>(
    surface: &PriceSurface,
    t: f64,
    s: f64,
    y: f64,
    n_steps: usize,
    n_strata: usize,
    seed: u64,
    integrand: F,
) -> Result<Vec<[PathFunctional; 2]>>
where
    F: Fn(f64, f64, f64, &SurfacePoint) -> f64 + Sync,
{
    let horizon = surface.grid.horizon;
    ensure(t >= 0.0 && t < horizon, || {
        format!("need 0 <= t < horizon, got t={t}")
    })?;
    ensure(s > 0.0 && y > 0.0, || {
        format!("prices must be positive, got s={s}, y={y}")
    })?;
    ensure(n_steps >= 1, || "n_steps must be at least 1".into())?;
    let model = QmModel::new(&surface.params, &surface.mode)?;
    let pw = surface.payoff.piecewise()?;
    let params = surface.params;
    let tau = horizon - t;
    let dt = tau / n_steps as f64;
    let rp = params.rho_perp();
    let (ss, sy) = (params.sigma_s, params.sigma_y);
    let one_path = |rng: &mut rand_chacha::ChaCha8Rng, terminal: f64| -> PathFunctional {
        let (mut ls, mut ly) = (s.ln(), y.ln());
        let (mut wy, mut b) = (0.0_f64, 0.0_f64);
        let mut u = 0.0;
        let mut clamped = false;
        let eval = |u: f64, ls: f64, ly: f64, clamped: &mut bool| {
            let (sv, yv) = (ls.exp(), ly.exp());
            let pt = surface.eval(t + u, sv, yv);
            *clamped |= pt.clamped;
            integrand(t + u, sv, yv, &pt)
        };
        let mut f_prev = eval(0.0, ls, ly, &mut clamped);
        let mut integral = 0.0;
        for k in 0..n_steps {
            let u_next = if k + 1 == n_steps {
                tau
            } else {
                dt * (k + 1) as f64
            };
            let h = u_next - u;
            let rest = tau - u;
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            // Brownian bridge step towards the stratified terminal value.
            let wy_next = if k + 1 == n_steps {
                terminal
            } else {
                wy + (terminal - wy) * h / rest + (h * (rest - h) / rest).sqrt() * z1
            };
            let b_next = b + h.sqrt() * z2;
            let dws = params.rho * (wy_next - wy) + rp * (b_next - b);
            let mu = if model.is_state_dependent() {
                model.drift_rate_y(t + u, ls.exp(), ly.exp())
            } else {
                model.drift_rate_y(t, s, y)
            };
            ls += ss * dws - 0.5 * ss * ss * h;
            ly += sy * (wy_next - wy) + (mu - 0.5 * sy * sy) * h;
            wy = wy_next;
            b = b_next;
            u = u_next;
            let f_next = eval(u, ls, ly, &mut clamped);
            integral += 0.5 * (f_prev + f_next) * h;
            f_prev = f_next;
        }
        PathFunctional {
            payoff: pw.value(ly.exp()),
            integral,
            clamped,
        }
    };
    let h_strata = n_strata as f64;
    let sq_tau = tau.sqrt();
    Ok((0..n_strata as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut sample = || {
                let v: f64 = rng.random();
                let terminal =
                    sq_tau * norm_inv_cdf((i as f64 + v.clamp(1e-16, 1.0 - 1e-16)) / h_strata);
                one_path(&mut rng, terminal)
            };
            let a = sample();
            let b = sample();
            [a, b]
        })
        .collect())
}

/// Mean and standard error of a per-path quantity under the paired
/// stratified design.
pub(crate) fn stratified_mean(pairs: &[[f64; 2]]) -> (f64, f64) {
    let h = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p[0] + p[1]).sum::<f64>() / (2.0 * h);
    let var = pairs
        .iter()
        .map(|p| (p[0] - p[1]).powi(2) / 4.0)
        .sum::<f64>()
        / (h * h);
    (mean, var.sqrt())
}

/// First-order expansion of the indifference price at `(t, s, y)`.
///
/// `marginal` must be a `γ = 0` surface; it supplies the model, the
/// pay-off, the marginal price and the marginal hedge along the paths.
///
/// # Errors
/// A non-marginal surface, fewer than [`MIN_PATHS`] paths, or invalid
/// evaluation points.
pub fn expansion_price(
    marginal: &PriceSurface,
    t: f64,
    s: f64,
    y: f64,
    gamma: f64,
    cfg: &ExpansionConfig,
) -> Result<ExpansionResult> {
    ensure(marginal.gamma == 0.0, || {
        "the expansion needs the marginal (gamma = 0) surface".into()
    })?;
    ensure(gamma >= 0.0 && gamma.is_finite(), || {
        format!("gamma must be non-negative, got {gamma}")
    })?;
    ensure(cfg.n_paths >= MIN_PATHS, || {
        format!(
            "at least {MIN_PATHS} paths are required, got {}",
            cfg.n_paths
        )
    })?;
    let params = marginal.params;
    let pairs = qm_stratified_pairs(
        marginal,
        t,
        s,
        y,
        cfg.n_steps,
        cfg.n_paths / 2,
        cfg.seed,
        |_, sv, yv, pt| {
            // (θᴹ σˢ S)² with θᴹ = p_s + ρ σʸY/(σˢS) p_y.
            let g = params.sigma_s * sv * pt.p_s + params.rho * params.sigma_y * yv * pt.p_y;
            g * g
        },
    )?;
    let c: Vec<[f64; 2]> = pairs.iter().map(|p| [p[0].payoff, p[1].payoff]).collect();
    let (mean_c, se_c) = stratified_mean(&c);
    let (mean_c2, _) = stratified_mean(
        &c.iter()
            .map(|p| [p[0] * p[0], p[1] * p[1]])
            .collect::<Vec<_>>(),
    );
    let (mean_qv, _) = stratified_mean(
        &pairs
            .iter()
            .map(|p| [p[0].integral, p[1].integral])
            .collect::<Vec<_>>(),
    );
    let variance = mean_c2 - mean_c * mean_c;
    let coefficient = 0.5 * (variance - mean_qv);
    // Delta-method influence of the coefficient.
    let influence: Vec<[f64; 2]> = pairs
        .iter()
        .map(|p| {
            let f = |q: &PathFunctional| {
                0.5 * (q.payoff * q.payoff - 2.0 * mean_c * q.payoff - q.integral)
            };
            [f(&p[0]), f(&p[1])]
        })
        .collect();
    let (_, coefficient_se) = stratified_mean(&influence);
    let p_marginal = marginal.price(t, s, y);
    let warning = (coefficient_se > WIDE_CI_REL_SE * coefficient.abs().max(1e-12)).then(|| {
        format!("wide confidence interval: first-order coefficient {coefficient:.6} has standard error {coefficient_se:.3e}; increase n_paths")
    });
    Ok(ExpansionResult {
        p_marginal,
        first_order_term: gamma * coefficient,
        expansion_value: p_marginal + gamma * coefficient,
        coefficient,
        coefficient_se,
        payoff_variance: variance,
        mean_hedge_qv: mean_qv,
        mc_mean_payoff: mean_c,
        mc_mean_payoff_se: se_c,
        n_paths: 2 * pairs.len(),
        clamped_paths: pairs.iter().flatten().filter(|p| p.clamped).count(),
        warning,
    })
}
