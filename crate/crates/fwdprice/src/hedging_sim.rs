//! Monte Carlo hedging experiments under the physical measure.
//!
//! A short position in the claim is hedged with the stock from initial
//! capital `X₀ = p(0, S₀, Y₀)`. Along each path the simulator records the
//! wealth `X`, the residual risk `ϱ = X − p`, its preference-adjusted
//! exponential `L = −exp(−γϱ)` and the ingredients of the pay-off
//! decompositions:
//!
//! ```text
//! dϱ = ½ γ d⟨N⟩ − dN,    dN = √(1−ρ²) σʸ Y p_y dŴ^⊥,
//! C(Y_T) = p₀ + ∫ θᴴ dS + N_T − ½ γ ⟨N⟩_T,
//! ```
//!
//! where `Ŵ^⊥` is the part of the innovation of `Y` orthogonal to that of
//! `S`. With `γ = 0` and the marginal surface the second identity is the
//! Föllmer–Schweizer–Sondermann decomposition.
//!
//! Every path is simulated once on a fine grid; ledgers for coarser
//! rebalancing frequencies are obtained by striding through the same path,
//! so refinement studies compare like with like. Only per-path summaries
//! and regression moments are kept, except for a few full ledgers.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::euro_pricer::{hedge_from_derivatives, PiecewiseLinear, PriceSurface, QmModel};
use crate::market_model::{simulate_path, uniform_grid, DriftSource, MarketParams, PathBundle};
use crate::numerics::ols_slope;

/// Hedging rule applied along the paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Treat `Y` as perfectly correlated with `S`: the Black–Scholes delta
    /// of the claim (driftless lognormal law) scaled by `σʸY/(σˢS)`.
    Naive,
    /// Optimal hedge of the marginal (`γ = 0`) surface.
    Marginal,
    /// Optimal hedge of the indifference price surface.
    OptimalForward,
}

/// How `⟨N⟩` is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QvMode {
    /// Model-implied increments `(1−ρ²)(σʸY p_y)²Δt` (lower variance).
    #[default]
    Model,
    /// Squared realised increments `(ΔN)²`.
    Realized,
}

/// Settings of a hedging experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of paths.
    pub n_paths: usize,
    /// Steps of the fine simulation grid.
    pub n_steps: usize,
    /// Random seed.
    pub seed: u64,
    /// Rebalancing strides in fine steps; each must divide `n_steps`.
    pub strides: Vec<usize>,
    /// Number of equally spaced checkpoints (excluding `t = 0`).
    pub n_checkpoints: usize,
    /// Number of leading paths whose full ledger (finest stride) is kept.
    pub ledger_paths: usize,
    /// Accumulation of `⟨N⟩`.
    pub qv_mode: QvMode,
    /// Source of the true Sharpe ratios of each path.
    pub drift: DriftSource,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 250,
            seed: 1,
            strides: vec![1],
            n_checkpoints: 8,
            ledger_paths: 4,
            qv_mode: QvMode::Model,
            drift: DriftSource::Fixed,
        }
    }
}

/// Hedging rule plus the surfaces it reads.
#[derive(Debug, Clone, Copy)]
pub struct HedgePolicy<'a> {
    /// Kind of hedge.
    pub kind: PolicyKind,
    /// Indifference price surface: defines `p`, `ϱ`, `L` and the pay-off
    /// decomposition.
    pub surface: &'a PriceSurface,
    /// Marginal surface: used by the marginal policy and the FSS check.
    pub marginal: Option<&'a PriceSurface>,
}

/// One row of a full path ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerRow {
    /// Path index.
    pub path_id: u64,
    /// Time.
    pub t: f64,
    /// Stock price.
    #[serde(rename = "S")]
    pub s: f64,
    /// Non-traded asset price.
    #[serde(rename = "Y")]
    pub y: f64,
    /// Shares of stock held over the next interval.
    pub theta: f64,
    /// Hedging wealth.
    #[serde(rename = "X")]
    pub x: f64,
    /// Indifference price.
    pub p: f64,
    /// Residual risk `X − p`.
    pub rho_resid: f64,
    /// `−exp(−γϱ)`.
    #[serde(rename = "L")]
    pub l: f64,
}

/// Per-path summary for one rebalancing stride.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    /// Path index.
    pub path_id: u64,
    /// Terminal hedging error `X_T − C(Y_T)` of the policy.
    pub terminal_error: f64,
    /// Residual risk of the policy at the checkpoints.
    pub rho_checkpoints: Vec<f64>,
    /// `L` of the policy at the checkpoints.
    pub l_checkpoints: Vec<f64>,
    /// Mean–variance trade-off `A_t` at the checkpoints.
    pub a_checkpoints: Vec<f64>,
    /// Largest `|ϱ|` along the path.
    pub max_abs_rho: f64,
    /// `C − [p₀ + Σθᴴ ΔS + N_T − ½γ⟨N⟩_T]` for the optimal hedge of the
    /// indifference surface.
    pub decomposition_residual: f64,
    /// Same with the marginal surface and `γ = 0`.
    pub fss_residual: Option<f64>,
    /// `X_T − X₀ − Σ θ ΔS` accumulated independently (bookkeeping check).
    pub self_financing_gap: f64,
    /// Whether the path left a surface grid.
    pub clamped: bool,
}

/// Mergeable moments of the regression `Δϱ = a·D + b·V + ε`, sufficient
/// for the least-squares fit and its heteroskedasticity-robust (HC0)
/// covariance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RegressionMoments {
    /// Observations.
    pub n: u64,
    /// `Σ x xᵀ`.
    pub sxx: [[f64; 2]; 2],
    /// `Σ x y`.
    pub sxy: [f64; 2],
    /// `Σ y²`.
    pub syy: f64,
    /// `Σ y² x xᵀ`.
    pub m2yy: [[f64; 2]; 2],
    /// `Σ y x_i x_j x_k`.
    pub m3y: [[[f64; 2]; 2]; 2],
    /// `Σ x_i x_j x_k x_l`.
    pub m4: [[[[f64; 2]; 2]; 2]; 2],
}

impl RegressionMoments {
    fn add(&mut self, x: [f64; 2], y: f64) {
        self.n += 1;
        self.syy += y * y;
        for i in 0..2 {
            self.sxy[i] += x[i] * y;
            for j in 0..2 {
                let xij = x[i] * x[j];
                self.sxx[i][j] += xij;
                self.m2yy[i][j] += y * y * xij;
                for k in 0..2 {
                    self.m3y[i][j][k] += y * xij * x[k];
                    for l in 0..2 {
                        self.m4[i][j][k][l] += xij * x[k] * x[l];
                    }
                }
            }
        }
    }

    fn merge(&mut self, o: &Self) {
        self.n += o.n;
        self.syy += o.syy;
        for i in 0..2 {
            self.sxy[i] += o.sxy[i];
            for j in 0..2 {
                self.sxx[i][j] += o.sxx[i][j];
                self.m2yy[i][j] += o.m2yy[i][j];
                for k in 0..2 {
                    self.m3y[i][j][k] += o.m3y[i][j][k];
                    for l in 0..2 {
                        self.m4[i][j][k][l] += o.m4[i][j][k][l];
                    }
                }
            }
        }
    }
}

/// Ledgers for one rebalancing stride.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrideResult {
    /// Fine steps per rebalancing interval.
    pub stride: usize,
    /// Number of rebalancing intervals.
    pub n_rebalances: usize,
    /// Checkpoint times (first entry 0).
    pub checkpoint_times: Vec<f64>,
    /// Per-path summaries, in path order.
    pub paths: Vec<PathSummary>,
    /// Regression moments of the residual-risk increments.
    pub regression: RegressionMoments,
    /// The same moments split into [`N_BATCHES`] batches of paths
    /// (`path_id mod N_BATCHES`), for batch-means standard errors.
    #[serde(skip)]
    pub batch_regression: Vec<RegressionMoments>,
}

/// Number of path batches kept for batch-means standard errors.
pub const N_BATCHES: usize = 20;

/// Output of [`run_hedge_sim`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// Hedging rule.
    pub policy: PolicyKind,
    /// Risk aversion of the indifference surface.
    pub gamma: f64,
    /// Random seed.
    pub seed: u64,
    /// Initial price `p(0, S₀, Y₀)`.
    pub p0: f64,
    /// Results per stride, in the order of [`SimConfig::strides`].
    pub strides: Vec<StrideResult>,
    /// Full ledgers of the leading paths at the first stride.
    pub ledgers: Vec<LedgerRow>,
    /// Paths that left a surface grid (finest stride).
    pub clamped_paths: usize,
}

/// Simulates the hedging experiment.
///
/// # Errors
/// Invalid configuration (strides not dividing the step count, missing
/// marginal surface for the marginal policy, …) or invalid parameters.
pub fn run_hedge_sim(
    params: &MarketParams,
    policy: &HedgePolicy<'_>,
    cfg: &SimConfig,
) -> Result<SimResult> {
    params.validate_for_pricing()?;
    ensure(cfg.n_paths >= 1 && cfg.n_steps >= 1, || {
        "need at least one path and one step".into()
    })?;
    ensure(!cfg.strides.is_empty(), || {
        "need at least one rebalancing stride".into()
    })?;
    for &s in &cfg.strides {
        ensure(s >= 1 && cfg.n_steps.is_multiple_of(s), || {
            format!("stride {s} must divide n_steps = {}", cfg.n_steps)
        })?;
    }
    ensure(cfg.n_checkpoints >= 1, || {
        "need at least one checkpoint".into()
    })?;
    if policy.kind == PolicyKind::Marginal {
        ensure(policy.marginal.is_some(), || {
            "the marginal policy needs the marginal surface".into()
        })?;
    }
    if let Some(m) = policy.marginal {
        ensure(m.gamma == 0.0, || {
            "the marginal surface must be solved with gamma = 0".into()
        })?;
    }
    if let DriftSource::Prior(prior) = cfg.drift {
        prior.validate()?;
    }
    let surface = policy.surface;
    let horizon = surface.grid.horizon;
    let times = uniform_grid(horizon, cfg.n_steps)?;
    let model = QmModel::new(&surface.params, &surface.mode)?;
    let pw = surface.payoff.piecewise()?;
    let p0 = surface.price(0.0, params.s0, params.y0);
    let ctx = Ctx {
        params,
        policy,
        cfg,
        model: &model,
        pw: &pw,
        p0,
    };

    let per_path: Vec<(Vec<(PathSummary, RegressionMoments)>, Vec<LedgerRow>)> = (0..cfg.n_paths
        as u64)
        .into_par_iter()
        .map(|id| {
            let path = simulate_path(params, &times, cfg.seed, id, cfg.drift);
            let keep = (id as usize) < cfg.ledger_paths;
            let mut ledger = Vec::new();
            let strides = cfg
                .strides
                .iter()
                .enumerate()
                .map(|(i, &stride)| {
                    ctx.hedge_path(
                        &path,
                        stride,
                        if keep && i == 0 {
                            Some(&mut ledger)
                        } else {
                            None
                        },
                    )
                })
                .collect();
            (strides, ledger)
        })
        .collect();

    let mut strides: Vec<StrideResult> = cfg
        .strides
        .iter()
        .map(|&stride| {
            let m = cfg.n_steps / stride;
            StrideResult {
                stride,
                n_rebalances: m,
                checkpoint_times: checkpoint_indices(m, cfg.n_checkpoints)
                    .into_iter()
                    .map(|k| times[k * stride])
                    .collect(),
                paths: Vec::with_capacity(cfg.n_paths),
                regression: RegressionMoments::default(),
                batch_regression: vec![RegressionMoments::default(); N_BATCHES],
            }
        })
        .collect();
    let mut ledgers = Vec::new();
    for (per_stride, ledger) in per_path {
        for (sr, (summary, moments)) in strides.iter_mut().zip(per_stride) {
            sr.regression.merge(&moments);
            sr.batch_regression[summary.path_id as usize % N_BATCHES].merge(&moments);
            sr.paths.push(summary);
        }
        ledgers.extend(ledger);
    }
    let clamped_paths = strides[0].paths.iter().filter(|p| p.clamped).count();
    Ok(SimResult {
        policy: policy.kind,
        gamma: surface.gamma,
        seed: cfg.seed,
        p0,
        strides,
        ledgers,
        clamped_paths,
    })
}

/// Rebalancing indices `0 = k₀ < k₁ < … ≤ m` of the checkpoints.
fn checkpoint_indices(m: usize, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=n).map(|j| (j * m + n / 2) / n).collect();
    out.dedup();
    out
}

struct Ctx<'a> {
    params: &'a MarketParams,
    policy: &'a HedgePolicy<'a>,
    cfg: &'a SimConfig,
    model: &'a QmModel,
    pw: &'a PiecewiseLinear,
    p0: f64,
}

impl Ctx<'_> {
    fn hedge_path(
        &self,
        path: &PathBundle,
        stride: usize,
        mut ledger: Option<&mut Vec<LedgerRow>>,
    ) -> (PathSummary, RegressionMoments) {
        let params = self.params;
        let surface = self.policy.surface;
        let marginal = self.policy.marginal;
        let gamma = surface.gamma;
        let rp2 = 1.0 - params.rho * params.rho;
        let rp = rp2.max(0.0).sqrt();
        let (ss, sy) = (params.sigma_s, params.sigma_y);
        let n = path.times.len() - 1;
        let m = n / stride;
        let checkpoints = checkpoint_indices(m, self.cfg.n_checkpoints);
        let horizon = path.horizon();

        let mut moments = RegressionMoments::default();
        let mut clamped = false;
        // Policy ledger.
        let mut x = self.p0;
        let mut gains = 0.0;
        // Ledger of the optimal hedge of the indifference surface.
        let mut x_h = self.p0;
        let mut n_h = 0.0;
        let mut qv_h = 0.0;
        // Ledger of the marginal hedge.
        let mut x_m = marginal.map(|s| s.price(0.0, path.s[0], path.y[0]));
        let mut n_m = 0.0;
        let mut a = 0.0;
        let mut lambda_prev = 0.0;
        let mut rho_cp = Vec::with_capacity(checkpoints.len());
        let mut l_cp = Vec::with_capacity(checkpoints.len());
        let mut a_cp = Vec::with_capacity(checkpoints.len());
        let mut max_abs_rho: f64 = 0.0;
        let mut next_cp = 0;

        for k in 0..=m {
            let i = k * stride;
            let (t, s, y) = (path.times[i], path.s[i], path.y[i]);
            let last = k == m;
            let pt = surface.eval(t, s, y);
            clamped |= pt.clamped;
            let p = if last { self.pw.value(y) } else { pt.p };
            let rho_res = x - p;
            max_abs_rho = max_abs_rho.max(rho_res.abs());
            let (ls, _) = self.model.sharpe(t, s, y);
            if k > 0 {
                let dt = t - path.times[i - stride];
                a += 0.5 * (lambda_prev * lambda_prev + ls * ls) * dt;
            }
            lambda_prev = ls;
            if next_cp < checkpoints.len() && checkpoints[next_cp] == k {
                rho_cp.push(rho_res);
                l_cp.push(-(-gamma * rho_res).exp());
                a_cp.push(a);
                next_cp += 1;
            }
            if last {
                break;
            }
            let theta_h = hedge_from_derivatives(pt.p_s, pt.p_y, s, y, params);
            let theta = match self.policy.kind {
                PolicyKind::OptimalForward => theta_h,
                PolicyKind::Marginal => {
                    let mp = marginal.expect("validated").eval(t, s, y);
                    hedge_from_derivatives(mp.p_s, mp.p_y, s, y, params)
                }
                PolicyKind::Naive => {
                    sy * y / (ss * s) * self.pw.lognormal_delta(y, 0.0, sy, horizon - t)
                }
            };
            if let Some(rows) = ledger.as_deref_mut() {
                rows.push(LedgerRow {
                    path_id: path.path_id,
                    t,
                    s,
                    y,
                    theta,
                    x,
                    p,
                    rho_resid: rho_res,
                    l: -(-gamma * rho_res).exp(),
                });
            }
            // Innovations over the interval.
            let j = i + stride;
            let dt = path.times[j] - t;
            let (ls_hat, ly_hat) = self.model.sharpe(t, s, y);
            let dxi_s = (path.s[j] / s).ln() / ss + 0.5 * ss * dt;
            let dxi_y = (path.y[j] / y).ln() / sy + 0.5 * sy * dt;
            let dw_s = dxi_s - ls_hat * dt;
            let dw_y = dxi_y - ly_hat * dt;
            let dw_perp = if rp2 < 1e-14 {
                0.0
            } else {
                (dw_y - params.rho * dw_s) / rp
            };
            let ds = path.s[j] - s;

            let scale = rp * sy * y * pt.p_y;
            let dn = scale * dw_perp;
            let dqv = match self.cfg.qv_mode {
                QvMode::Model => scale * scale * dt,
                QvMode::Realized => dn * dn,
            };
            // Regression of Δϱ on the predicted drift and diffusion.
            let p_next = if j == n {
                self.pw.value(path.y[j])
            } else {
                surface.price(path.times[j], path.s[j], path.y[j])
            };
            let d_rho_h = theta_h * ds - (p_next - pt.p);
            moments.add([0.5 * gamma * scale * scale * dt, -dn], d_rho_h);

            x += theta * ds;
            gains += theta * ds;
            x_h += theta_h * ds;
            n_h += dn;
            qv_h += dqv;
            if let (Some(xm), Some(ms)) = (x_m.as_mut(), marginal) {
                let mp = ms.eval(t, s, y);
                clamped |= mp.clamped;
                *xm += hedge_from_derivatives(mp.p_s, mp.p_y, s, y, params) * ds;
                n_m += rp * sy * y * mp.p_y * dw_perp;
            }
        }
        let c_t = self.pw.value(path.y[n]);
        let summary = PathSummary {
            path_id: path.path_id,
            terminal_error: x - c_t,
            rho_checkpoints: rho_cp,
            l_checkpoints: l_cp,
            a_checkpoints: a_cp,
            max_abs_rho,
            decomposition_residual: -(x_h - c_t) - n_h + 0.5 * gamma * qv_h,
            fss_residual: x_m.map(|xm| -(xm - c_t) - n_m),
            self_financing_gap: x - (self.p0 + gains),
            clamped,
        };
        (summary, moments)
    }
}

/// Mean and standard error of a sample.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Least-squares fit of `Δϱ = a·D + b·V` with robust standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdeRegression {
    /// Rebalancing stride of the fit.
    pub stride: usize,
    /// Observations (path × step).
    pub n_obs: u64,
    /// Drift coefficient (1 in theory).
    pub drift_coef: f64,
    /// Robust standard error of `drift_coef`.
    pub drift_se: f64,
    /// Diffusion coefficient (1 in theory).
    pub diffusion_coef: f64,
    /// Robust standard error of `diffusion_coef`.
    pub diffusion_se: f64,
    /// Uncentred coefficient of determination.
    pub r_squared: f64,
    /// Whether both coefficients lie within 3 standard errors of 1.
    pub consistent: bool,
}

/// Least-squares coefficients, HC0 covariance and uncentred R² from the
/// moments. A regressor that vanishes identically gets a NaN coefficient.
fn fit(r: &RegressionMoments) -> ([f64; 2], [[f64; 2]; 2], f64) {
    let det = r.sxx[0][0] * r.sxx[1][1] - r.sxx[0][1] * r.sxx[1][0];
    let scale = r.sxx[0][0] * r.sxx[1][1];
    let (beta, cov) = if scale > 0.0 && det > 1e-12 * scale {
        let inv = [
            [r.sxx[1][1] / det, -r.sxx[0][1] / det],
            [-r.sxx[1][0] / det, r.sxx[0][0] / det],
        ];
        let beta = [
            inv[0][0] * r.sxy[0] + inv[0][1] * r.sxy[1],
            inv[1][0] * r.sxy[0] + inv[1][1] * r.sxy[1],
        ];
        let mut meat = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut v = r.m2yy[i][j];
                for k in 0..2 {
                    v -= 2.0 * beta[k] * r.m3y[i][j][k];
                    for l in 0..2 {
                        v += beta[k] * beta[l] * r.m4[i][j][k][l];
                    }
                }
                meat[i][j] = v;
            }
        }
        let mut cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        cov[i][j] += inv[i][k] * meat[k][l] * inv[l][j];
                    }
                }
            }
        }
        (beta, cov)
    } else if r.sxx[1][1] > 0.0 {
        // Drift regressor degenerate: fit the diffusion alone.
        let b = r.sxy[1] / r.sxx[1][1];
        let meat = r.m2yy[1][1] - 2.0 * b * r.m3y[1][1][1] + b * b * r.m4[1][1][1][1];
        (
            [f64::NAN, b],
            [[f64::NAN, 0.0], [0.0, meat / (r.sxx[1][1] * r.sxx[1][1])]],
        )
    } else {
        ([f64::NAN; 2], [[f64::NAN; 2]; 2])
    };
    let mut fitted_ss = 0.0;
    for i in (0..2).filter(|&i| beta[i].is_finite()) {
        for j in (0..2).filter(|&j| beta[j].is_finite()) {
            fitted_ss += beta[i] * beta[j] * r.sxx[i][j];
        }
    }
    let r_squared = if r.syy > 0.0 {
        fitted_ss / r.syy
    } else {
        f64::NAN
    };
    (beta, cov, r_squared)
}

fn within_3se(c: f64, se: f64) -> bool {
    c.is_finite() && (c - 1.0).abs() <= 3.0 * se
}

/// Regresses the residual-risk increments of the optimal hedge on the
/// predicted drift `½γ(1−ρ²)(σʸY p_y)²Δt` and diffusion
/// `−√(1−ρ²)σʸY p_y ΔŴ^⊥`, pooling all steps of all paths, for every stride
/// of the simulation. Standard errors are heteroskedasticity-robust.
///
/// The discrete increments carry an `O(Δt)` bias relative to the
/// continuous-time coefficients while the pooled standard errors shrink
/// like `√(Δt / n_paths)`; see [`sde_extrapolation`] for the bias-corrected
/// estimate.
pub fn residual_risk_sde_check(sim: &SimResult) -> Vec<SdeRegression> {
    sim.strides
        .iter()
        .map(|sr| {
            let (beta, cov, r_squared) = fit(&sr.regression);
            let (se_a, se_b) = (cov[0][0].sqrt(), cov[1][1].sqrt());
            SdeRegression {
                stride: sr.stride,
                n_obs: sr.regression.n,
                drift_coef: beta[0],
                drift_se: se_a,
                diffusion_coef: beta[1],
                diffusion_se: se_b,
                r_squared,
                consistent: within_3se(beta[0], se_a) && within_3se(beta[1], se_b),
            }
        })
        .collect()
}

/// Richardson extrapolation of the regression coefficients to `Δt → 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdeExtrapolation {
    /// Rebalancing intervals of the two levels combined (coarse, fine).
    pub levels: [usize; 2],
    /// Extrapolated drift coefficient.
    pub drift_coef: f64,
    /// Batch-means standard error of `drift_coef`.
    pub drift_se: f64,
    /// Extrapolated diffusion coefficient.
    pub diffusion_coef: f64,
    /// Batch-means standard error of `diffusion_coef`.
    pub diffusion_se: f64,
    /// Whether both lie within 3 standard errors of 1.
    pub consistent: bool,
}

/// Removes the leading `O(Δt)` term of the regression coefficients by
/// combining the two finest strides, `β* = (h_c β_f − h_f β_c)/(h_c − h_f)`.
/// Standard errors come from [`N_BATCHES`] independent batches of paths.
/// `None` with fewer than two strides.
pub fn sde_extrapolation(sim: &SimResult) -> Option<SdeExtrapolation> {
    let mut order: Vec<&StrideResult> = sim.strides.iter().collect();
    order.sort_by_key(|sr| sr.stride);
    let (fine, coarse) = (order.first()?, order.get(1)?);
    let (hf, hc) = (
        1.0 / fine.n_rebalances as f64,
        1.0 / coarse.n_rebalances as f64,
    );
    let combine = |bf: f64, bc: f64| (hc * bf - hf * bc) / (hc - hf);
    let (bf, _, _) = fit(&fine.regression);
    let (bc, _, _) = fit(&coarse.regression);
    let point = [combine(bf[0], bc[0]), combine(bf[1], bc[1])];
    let batches: Vec<[f64; 2]> = fine
        .batch_regression
        .iter()
        .zip(&coarse.batch_regression)
        .filter(|(f, c)| f.n > 0 && c.n > 0)
        .map(|(f, c)| {
            let (bf, _, _) = fit(f);
            let (bc, _, _) = fit(c);
            [combine(bf[0], bc[0]), combine(bf[1], bc[1])]
        })
        .collect();
    let se = |i: usize| {
        let v: Vec<f64> = batches.iter().map(|b| b[i]).collect();
        mean_se(&v).1
    };
    let (se_a, se_b) = (se(0), se(1));
    Some(SdeExtrapolation {
        levels: [coarse.n_rebalances, fine.n_rebalances],
        drift_coef: point[0],
        drift_se: se_a,
        diffusion_coef: point[1],
        diffusion_se: se_b,
        consistent: within_3se(point[0], se_a) && within_3se(point[1], se_b),
    })
}

/// Sample mean of `L` at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckpointStat {
    /// Checkpoint time.
    pub t: f64,
    /// Sample mean of `L_t`.
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    /// Whether `|mean + 1| ≤ 3 se` (exact equality counts at `t = 0`).
    pub within_3se: bool,
    /// Sample mean of the forward utility `−exp(−γϱ_t + A_t/2)`.
    pub forward_utility: f64,
    /// Standard error of `forward_utility`.
    pub forward_utility_se: f64,
}

/// Checks that the mean of `L` stays at `L₀ = −1` (first stride).
pub fn paerr_martingale_check(sim: &SimResult) -> Vec<CheckpointStat> {
    let sr = &sim.strides[0];
    let gamma = sim.gamma;
    sr.checkpoint_times
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let l: Vec<f64> = sr.paths.iter().map(|p| p.l_checkpoints[c]).collect();
            let u: Vec<f64> = sr
                .paths
                .iter()
                .map(|p| -(-gamma * p.rho_checkpoints[c] + 0.5 * p.a_checkpoints[c]).exp())
                .collect();
            let (mean, se) = mean_se(&l);
            let (fu, fu_se) = mean_se(&u);
            let dev = (mean + 1.0).abs();
            CheckpointStat {
                t,
                mean,
                se,
                within_3se: dev == 0.0 || dev <= 3.0 * se,
                forward_utility: fu,
                forward_utility_se: fu_se,
            }
        })
        .collect()
}

/// Residual statistics for one stride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualStat {
    /// Rebalancing intervals.
    pub n_rebalances: usize,
    /// Root mean square residual.
    pub rms: f64,
    /// Mean residual.
    pub mean: f64,
    /// Largest absolute residual.
    pub max_abs: f64,
}

/// Refinement study of a terminal residual across strides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    /// Statistics per stride.
    pub levels: Vec<ResidualStat>,
    /// Least-squares slope of `log rms` against `log Δt` (NaN with fewer
    /// than two levels or vanishing residuals).
    pub order: f64,
}

fn refinement(levels: Vec<ResidualStat>) -> RefinementReport {
    let usable: Vec<&ResidualStat> = levels.iter().filter(|l| l.rms > 0.0).collect();
    let order = if usable.len() >= 2 {
        let xs: Vec<f64> = usable
            .iter()
            .map(|l| (1.0 / l.n_rebalances as f64).ln())
            .collect();
        let ys: Vec<f64> = usable.iter().map(|l| l.rms.ln()).collect();
        ols_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    RefinementReport { levels, order }
}

fn residual_stat(n_rebalances: usize, v: &[f64]) -> ResidualStat {
    ResidualStat {
        n_rebalances,
        rms: rms(v),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        max_abs: v.iter().fold(0.0, |m: f64, x| m.max(x.abs())),
    }
}

/// Terminal residual of `C = p₀ + ∫θᴴdS + N_T − ½γ⟨N⟩_T` per stride.
pub fn payoff_decomposition_check(sim: &SimResult) -> RefinementReport {
    refinement(
        sim.strides
            .iter()
            .map(|sr| {
                residual_stat(
                    sr.n_rebalances,
                    &sr.paths
                        .iter()
                        .map(|p| p.decomposition_residual)
                        .collect::<Vec<_>>(),
                )
            })
            .collect(),
    )
}

/// Terminal residual of the Föllmer–Schweizer–Sondermann decomposition
/// `C = p₀ᴹ + ∫θᴹdS + Nᴹ_T` per stride; `None` without a marginal surface.
pub fn fss_decomposition_check(sim: &SimResult) -> Option<RefinementReport> {
    let levels: Option<Vec<ResidualStat>> = sim
        .strides
        .iter()
        .map(|sr| {
            let v: Option<Vec<f64>> = sr.paths.iter().map(|p| p.fss_residual).collect();
            v.map(|v| residual_stat(sr.n_rebalances, &v))
        })
        .collect();
    levels.map(refinement)
}

/// Refinement of the largest terminal residual risk `max |ϱ_T|` of the
/// policy across strides (perfect-correlation check).
pub fn terminal_error_refinement(sim: &SimResult) -> RefinementReport {
    let levels: Vec<ResidualStat> = sim
        .strides
        .iter()
        .map(|sr| {
            residual_stat(
                sr.n_rebalances,
                &sr.paths
                    .iter()
                    .map(|p| p.terminal_error)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let usable: Vec<&ResidualStat> = levels.iter().filter(|l| l.max_abs > 0.0).collect();
    let mut report = refinement(levels.clone());
    report.order = if usable.len() >= 2 {
        let xs: Vec<f64> = usable
            .iter()
            .map(|l| (1.0 / l.n_rebalances as f64).ln())
            .collect();
        let ys: Vec<f64> = usable.iter().map(|l| l.max_abs.ln()).collect();
        ols_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    report
}

/// Outcome of [`price_representation_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepresentationCheck {
    /// Indifference price from the PDE surface.
    pub lhs: f64,
    /// `p^M + ½γ E^{Q^M}[⟨N⟩_{t,T}]` with the expectation simulated.
    pub rhs: f64,
    /// Standard error of `rhs`.
    pub se: f64,
    /// Whether `|lhs − rhs| ≤ 3 se`.
    pub within_3se: bool,
    /// Set when the standard error exceeds [`REPRESENTATION_MAX_REL_SE`]
    /// of the correction term, so that agreement is not informative.
    pub inconclusive: bool,
}

/// Relative standard error of the correction term above which the
/// representation check is inconclusive.
pub const REPRESENTATION_MAX_REL_SE: f64 = 0.05;

/// Compares the PDE price with its representation
/// `p = p^M + ½γ E^{Q^M}[∫(1−ρ²)(σʸY p_y)² du]`, the expectation taken by
/// stratified simulation under the minimal martingale measure along the
/// gradient of the same surface.
///
/// # Errors
/// Surfaces with different models, or invalid simulation settings.
pub fn price_representation_check(
    surface: &PriceSurface,
    marginal: &PriceSurface,
    t: f64,
    s: f64,
    y: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<RepresentationCheck> {
    ensure(marginal.gamma == 0.0, || {
        "the marginal surface must be solved with gamma = 0".into()
    })?;
    ensure(
        surface.params == marginal.params && surface.mode == marginal.mode,
        || "surfaces must share the model".into(),
    )?;
    ensure(n_paths >= 2, || "need at least two paths".into())?;
    let params = surface.params;
    let gamma = surface.gamma;
    let lhs = surface.price(t, s, y);
    let pm = marginal.price(t, s, y);
    if gamma == 0.0 {
        return Ok(RepresentationCheck {
            lhs,
            rhs: pm,
            se: 0.0,
            within_3se: (lhs - pm).abs() == 0.0,
            inconclusive: false,
        });
    }
    let k = 1.0 - params.rho * params.rho;
    let pairs = crate::euro_pricer::qm_stratified_pairs(
        surface,
        t,
        s,
        y,
        n_steps,
        n_paths / 2,
        seed,
        |_, _, yv, pt| {
            let g = params.sigma_y * yv * pt.p_y;
            k * g * g
        },
    )?;
    let (mean, se) = crate::euro_pricer::stratified_mean(
        &pairs
            .iter()
            .map(|p| [p[0].integral, p[1].integral])
            .collect::<Vec<_>>(),
    );
    let correction = 0.5 * gamma * mean;
    let se = 0.5 * gamma * se;
    let rhs = pm + correction;
    Ok(RepresentationCheck {
        lhs,
        rhs,
        se,
        within_3se: (lhs - rhs).abs() <= 3.0 * se,
        inconclusive: se > REPRESENTATION_MAX_REL_SE * correction.abs().max(f64::MIN_POSITIVE),
    })
}

/// Scale factors of the residual-risk dynamics for one correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationRow {
    /// Correlation.
    pub rho: f64,
    /// Drift scale `1 − ρ²`.
    pub one_minus_rho2: f64,
    /// Diffusion scale `√(1 − ρ²)`.
    pub sqrt_one_minus_rho2: f64,
}

/// Tabulates `(ρ, 1−ρ², √(1−ρ²))` for a ladder of correlations.
///
/// # Errors
/// Correlations outside `[−1, 1]`.
pub fn correlation_sensitivity(rho_ladder: &[f64]) -> Result<Vec<CorrelationRow>> {
    rho_ladder
        .iter()
        .map(|&rho| {
            ensure(rho.abs() <= 1.0, || {
                format!("correlation must lie in [-1, 1], got {rho}")
            })?;
            let v = (1.0 - rho * rho).max(0.0);
            Ok(CorrelationRow {
                rho,
                one_minus_rho2: v,
                sqrt_one_minus_rho2: v.sqrt(),
            })
        })
        .collect()
}

/// Writes correlation rows as CSV with columns
/// `rho,one_minus_rho2,sqrt_one_minus_rho2`.
pub fn write_correlation_csv<W: Write>(rows: &[CorrelationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the full ledgers as CSV with columns
/// `path_id,t,S,Y,theta,X,p,rho_resid,L`.
pub fn write_ledger_csv<W: Write>(sim: &SimResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if sim.ledgers.is_empty() {
        w.write_record([
            "path_id",
            "t",
            "S",
            "Y",
            "theta",
            "X",
            "p",
            "rho_resid",
            "L",
        ])?;
    }
    for r in &sim.ledgers {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Distribution summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distribution {
    /// Mean.
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    /// Standard error of the mean.
    pub se: f64,
    /// 5%, 25%, 50%, 75% and 95% quantiles.
    pub quantiles: [f64; 5],
}

impl Distribution {
    /// Summarises a non-empty sample.
    pub fn of(v: &[f64]) -> Self {
        let (mean, se) = mean_se(v);
        let mut sorted = v.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        Self {
            mean,
            sd: se * (v.len() as f64).sqrt(),
            se,
            quantiles: [q(0.05), q(0.25), q(0.5), q(0.75), q(0.95)],
        }
    }
}

/// Summary statistics of a simulation for one stride.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrideSummary {
    /// Rebalancing intervals.
    pub n_rebalances: usize,
    /// Terminal hedging error `X_T − C(Y_T)`.
    pub terminal_error: Distribution,
    /// Pay-off decomposition residual.
    pub decomposition_residual: Distribution,
    /// FSS residual (when the marginal surface was supplied).
    pub fss_residual: Option<Distribution>,
    /// Largest self-financing bookkeeping gap over all paths.
    pub max_self_financing_gap: f64,
}

/// Summary statistics of a whole simulation (the JSON artefact).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    /// Hedging rule.
    pub policy: PolicyKind,
    /// Risk aversion.
    pub gamma: f64,
    /// Seed.
    pub seed: u64,
    /// Paths.
    pub n_paths: usize,
    /// Initial price.
    pub p0: f64,
    /// Paths that left a surface grid.
    pub clamped_paths: usize,
    /// Per-stride statistics.
    pub strides: Vec<StrideSummary>,
    /// PAERR and forward utility per checkpoint (first stride).
    pub paerr: Vec<CheckpointStat>,
    /// Residual-risk regression per stride.
    pub sde_regression: Vec<SdeRegression>,
    /// Bias-corrected regression coefficients (two or more strides).
    pub sde_extrapolation: Option<SdeExtrapolation>,
    /// Pay-off decomposition refinement.
    pub decomposition: RefinementReport,
    /// FSS decomposition refinement.
    pub fss: Option<RefinementReport>,
}

/// Computes the summary statistics of a simulation.
pub fn summarize(sim: &SimResult) -> SimSummary {
    let strides = sim
        .strides
        .iter()
        .map(|sr| {
            let col = |f: &dyn Fn(&PathSummary) -> f64| sr.paths.iter().map(f).collect::<Vec<_>>();
            let fss: Option<Vec<f64>> = sr.paths.iter().map(|p| p.fss_residual).collect();
            StrideSummary {
                n_rebalances: sr.n_rebalances,
                terminal_error: Distribution::of(&col(&|p| p.terminal_error)),
                decomposition_residual: Distribution::of(&col(&|p| p.decomposition_residual)),
                fss_residual: fss.map(|v| Distribution::of(&v)),
                max_self_financing_gap: sr
                    .paths
                    .iter()
                    .fold(0.0, |m: f64, p| m.max(p.self_financing_gap.abs())),
            }
        })
        .collect();
    SimSummary {
        policy: sim.policy,
        gamma: sim.gamma,
        seed: sim.seed,
        n_paths: sim.strides[0].paths.len(),
        p0: sim.p0,
        clamped_paths: sim.clamped_paths,
        strides,
        paerr: paerr_martingale_check(sim),
        sde_regression: residual_risk_sde_check(sim),
        sde_extrapolation: sde_extrapolation(sim),
        decomposition: payoff_decomposition_check(sim),
        fss: fss_decomposition_check(sim),
    }
}
