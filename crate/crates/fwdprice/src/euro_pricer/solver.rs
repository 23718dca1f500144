//! Backward time stepping of the semi-linear pricing equation
//!
//! ```text
//! p_t + 𝒜 p + ½ γ (1−ρ²) (σʸ y p_y)² = 0,     p(T, s, y) = C(y),
//! ```
//!
//! where `𝒜` is the generator of `(S, Y)` under the minimal martingale
//! measure, optionally with the obstacle `p ≥ C`.
//!
//! * Full information: the coefficients do not depend on `s`, so the
//!   problem is one-dimensional in `y` and solved with a θ-scheme
//!   (Crank–Nicolson after a few fully implicit start-up steps).
//! * Partial information: the filtered Sharpe ratios depend on `(t, s, y)`
//!   and the problem is solved on the `(s, y)` plane with the Douglas
//!   alternating-direction scheme; the mixed derivative is explicit.
//!
//! In both cases the quadratic term is lagged (explicit) inside an implicit
//! step, optionally refined by fixed-point iterations. At the edges of the
//! grid the price is taken linear in the price variable (`p_yy = 0`,
//! `p_ss = 0`); the resulting extrapolation is eliminated into the
//! tridiagonal systems so that they stay tridiagonal.

use serde::{Deserialize, Serialize};

use super::grid::{Axis, GridSpec, PricingMode, QmModel, SolverConfig};
use super::payoff::{PayoffSpec, PiecewiseLinear};
use super::surface::{PriceSurface, StepDiagnostic};
use crate::error::{ensure, Error, Result};
use crate::market_model::MarketParams;
use crate::numerics::solve_tridiagonal;

/// Method used to impose the early-exercise obstacle `p ≥ C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleMethod {
    /// Projected successive over-relaxation on each tridiagonal system.
    Psor {
        /// Relaxation factor in `(0, 2)`.
        omega: f64,
        /// Tolerance on the scaled complementarity residual.
        tol: f64,
        /// Maximum number of sweeps per system.
        max_sweeps: usize,
    },
    /// Penalty iteration: `(M + P·1{x<C}) x = r + P·1{x<C}·C` until the
    /// active set settles.
    Penalty {
        /// Penalty parameter.
        penalty: f64,
        /// Maximum number of active-set iterations per system.
        max_iter: usize,
    },
}

impl Default for ObstacleMethod {
    fn default() -> Self {
        ObstacleMethod::Psor {
            omega: 1.2,
            tol: 1e-8,
            max_sweeps: 500,
        }
    }
}

impl ObstacleMethod {
    /// Checks the settings against a pay-off scale.
    pub fn validate(&self, payoff_sup: f64) -> Result<()> {
        match *self {
            ObstacleMethod::Psor {
                omega,
                tol,
                max_sweeps,
            } => {
                ensure(omega > 0.0 && omega < 2.0, || {
                    format!("PSOR relaxation must lie in (0, 2), got {omega}")
                })?;
                ensure(tol > 0.0 && max_sweeps >= 1, || {
                    "PSOR needs a positive tolerance and at least one sweep".into()
                })
            }
            ObstacleMethod::Penalty { penalty, max_iter } => {
                ensure(max_iter >= 1, || {
                    "penalty iteration needs at least one iteration".into()
                })?;
                let scale = penalty * payoff_sup.max(1.0);
                if !(penalty > 0.0) || !scale.is_finite() || penalty > 1e12 {
                    return Err(Error::Config(format!(
                        "penalty parameter {penalty} is non-positive or overflows the linear system (limit 1e12)"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Result of a solve: the surface plus obstacle statistics.
pub(crate) struct SolveOutput {
    pub surface: PriceSurface,
    /// Maximum scaled complementarity residual over all steps (0 without obstacle).
    pub complementarity: f64,
}

/// Tridiagonal system `lo·x_{k−1} + di·x_k + up·x_{k+1} = rhs`.
struct Tri {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

impl Tri {
    /// Assembles `I − θΔτ L` on the interior nodes of a line with boundary
    /// elimination, where `L = conv·D₁ + diff·D₂`.
    fn assemble(axis: &Axis, conv: &[f64], diff: &[f64], theta_dt: f64) -> Self {
        let n = axis.len();
        let m = n - 2;
        let h = axis.h;
        let mut lo = vec![0.0; m];
        let mut di = vec![0.0; m];
        let mut up = vec![0.0; m];
        for i in 0..m {
            let k = i + 1;
            let a = -conv[k] / (2.0 * h) + diff[k] / (h * h);
            let c = conv[k] / (2.0 * h) + diff[k] / (h * h);
            lo[i] = -theta_dt * a;
            di[i] = 1.0 + theta_dt * 2.0 * diff[k] / (h * h);
            up[i] = -theta_dt * c;
        }
        let (a1, a2) = axis.extrapolation_low();
        di[0] += lo[0] * a1;
        up[0] += lo[0] * a2;
        lo[0] = 0.0;
        let (b1, b2) = axis.extrapolation_high();
        di[m - 1] += up[m - 1] * b1;
        lo[m - 1] += up[m - 1] * b2;
        up[m - 1] = 0.0;
        Self { lo, di, up }
    }

    fn residual(&self, x: &[f64], rhs: &[f64], k: usize) -> f64 {
        let m = x.len();
        let mut v = self.di[k] * x[k] - rhs[k];
        if k > 0 {
            v += self.lo[k] * x[k - 1];
        }
        if k + 1 < m {
            v += self.up[k] * x[k + 1];
        }
        v
    }
}

/// `conv·D₁p + diff·D₂p` at interior node `k` of a line.
#[inline]
fn line_op(p: &[f64], k: usize, conv: f64, diff: f64, h: f64) -> f64 {
    conv * (p[k + 1] - p[k - 1]) / (2.0 * h) + diff * (p[k + 1] - 2.0 * p[k] + p[k - 1]) / (h * h)
}

/// Sets the two end values of a line from linearity in the price.
fn apply_line_bc(axis: &Axis, p: &mut [f64]) {
    let n = p.len();
    let (a1, a2) = axis.extrapolation_low();
    p[0] = a1 * p[1] + a2 * p[2];
    let (b1, b2) = axis.extrapolation_high();
    p[n - 1] = b1 * p[n - 2] + b2 * p[n - 3];
}

/// Solves one tridiagonal system, with or without the obstacle. `x` holds
/// the warm start on entry and the solution on exit. Returns the number of
/// iterations and the scaled complementarity residual.
fn solve_system(
    tri: &Tri,
    rhs: &[f64],
    x: &mut [f64],
    obstacle: Option<(&[f64], &ObstacleMethod)>,
    dt: f64,
) -> Result<(usize, f64)> {
    let Some((c, method)) = obstacle else {
        let sol = solve_tridiagonal(&tri.lo, &tri.di, &tri.up, rhs)
            .ok_or_else(|| Error::SolverFailure("zero pivot in tridiagonal solve".into()))?;
        x.copy_from_slice(&sol);
        return Ok((1, 0.0));
    };
    let m = x.len();
    let complementarity = |x: &[f64]| -> f64 {
        (0..m)
            .map(|k| (tri.residual(x, rhs, k) / dt).min(x[k] - c[k]).abs() / x[k].abs().max(1.0))
            .fold(0.0, f64::max)
    };
    match *method {
        ObstacleMethod::Psor {
            omega,
            tol,
            max_sweeps,
        } => {
            for k in 0..m {
                x[k] = x[k].max(c[k]);
            }
            for sweep in 1..=max_sweeps {
                for k in 0..m {
                    let mut s = rhs[k];
                    if k > 0 {
                        s -= tri.lo[k] * x[k - 1];
                    }
                    if k + 1 < m {
                        s -= tri.up[k] * x[k + 1];
                    }
                    let gs = s / tri.di[k];
                    x[k] = c[k].max(x[k] + omega * (gs - x[k]));
                }
                let res = complementarity(x);
                if !res.is_finite() {
                    return Err(Error::SolverFailure(
                        "projected relaxation produced non-finite values".into(),
                    ));
                }
                if res <= tol {
                    return Ok((sweep, res));
                }
            }
            Err(Error::SolverFailure(format!(
                "projected relaxation did not reach tolerance {tol} in {max_sweeps} sweeps (residual {:.3e})",
                complementarity(x)
            )))
        }
        ObstacleMethod::Penalty { penalty, max_iter } => {
            let mut active: Vec<bool> = (0..m).map(|k| x[k] < c[k]).collect();
            for it in 1..=max_iter {
                let di: Vec<f64> = (0..m)
                    .map(|k| tri.di[k] + if active[k] { penalty } else { 0.0 })
                    .collect();
                let r: Vec<f64> = (0..m)
                    .map(|k| rhs[k] + if active[k] { penalty * c[k] } else { 0.0 })
                    .collect();
                let sol = solve_tridiagonal(&tri.lo, &di, &tri.up, &r)
                    .ok_or_else(|| Error::SolverFailure("zero pivot in penalty solve".into()))?;
                x.copy_from_slice(&sol);
                let next: Vec<bool> = (0..m).map(|k| x[k] < c[k]).collect();
                if next == active {
                    return Ok((it, complementarity(x)));
                }
                active = next;
            }
            Err(Error::SolverFailure(format!(
                "penalty iteration did not settle in {max_iter} iterations"
            )))
        }
    }
}

fn max_rel_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn check_finite(p: &[f64], step: usize) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SolverFailure(format!(
            "non-finite values after step {step}; refine the time grid"
        )))
    }
}

/// Solves the pricing equation on all time levels of the grid.
pub(crate) fn solve(
    payoff: &PayoffSpec,
    grid: &GridSpec,
    gamma: f64,
    mode: &PricingMode,
    params: &MarketParams,
    cfg: &SolverConfig,
    obstacle: Option<&ObstacleMethod>,
) -> Result<SolveOutput> {
    ensure(gamma >= 0.0 && gamma.is_finite(), || {
        format!("gamma must be non-negative, got {gamma}")
    })?;
    cfg.validate()?;
    let pw = payoff.piecewise()?;
    if let Some(m) = obstacle {
        m.validate(pw.sup().min(1e300))?;
    }
    let model = QmModel::new(params, mode)?;
    let two_d = model.is_state_dependent();
    grid.validate(two_d)?;
    ensure(grid.n_y >= 5, || {
        "the solver needs at least 5 nodes in y".into()
    })?;
    if two_d {
        ensure(grid.n_s >= 5, || {
            "the partial-information solver needs at least 5 nodes in s".into()
        })?;
        solve_2d(payoff, &pw, grid, gamma, mode, &model, cfg, obstacle)
    } else {
        solve_1d(payoff, &pw, grid, gamma, mode, &model, cfg, obstacle)
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_1d(
    payoff: &PayoffSpec,
    pw: &PiecewiseLinear,
    grid: &GridSpec,
    gamma: f64,
    mode: &PricingMode,
    model: &QmModel,
    cfg: &SolverConfig,
    obstacle: Option<&ObstacleMethod>,
) -> Result<SolveOutput> {
    let params = &model.params;
    let ya = Axis::new(grid.y_min, grid.y_max, grid.n_y, grid.log_space);
    let sa = Axis::point(params.s0, grid.log_space);
    let n = ya.len();
    let h = ya.h;
    let mu = model.drift_rate_y(0.0, params.s0, params.y0);
    let vol: Vec<f64> = (0..n).map(|k| ya.coord_vol(k, params.sigma_y)).collect();
    let conv: Vec<f64> = (0..n)
        .map(|k| ya.coord_drift(k, mu, params.sigma_y))
        .collect();
    let diff: Vec<f64> = vol.iter().map(|v| 0.5 * v * v).collect();
    let nlc = 0.5 * gamma * (1.0 - params.rho * params.rho);
    let mut warnings = Vec::new();
    let peclet = (1..n - 1)
        .map(|k| conv[k].abs() * h / (2.0 * diff[k]))
        .fold(0.0, f64::max);
    if peclet > 1.0 {
        warnings.push(format!("cell Péclet number {peclet:.2} exceeds 1; central convection is not monotone, refine the y grid"));
    }
    let payoff_nodes: Vec<f64> = ya.prices.iter().map(|&y| pw.value(y)).collect();
    let c_interior = &payoff_nodes[1..n - 1];
    let times = grid.times();
    let nt = grid.n_t;
    let mut levels = vec![Vec::new(); nt + 1];
    levels[nt] = payoff_nodes.clone();
    let mut p = payoff_nodes.clone();
    let mut diagnostics = Vec::with_capacity(nt);
    let mut complementarity: f64 = 0.0;
    let mut tri_cache: Option<(f64, f64, Tri)> = None;

    for step in 1..=nt {
        let it = nt - step;
        let dt = times[it + 1] - times[it];
        let theta = if step <= cfg.rannacher_steps {
            1.0
        } else {
            cfg.theta
        };
        let reuse = matches!(&tri_cache, Some((th, d, _)) if *th == theta && *d == dt);
        if !reuse {
            tri_cache = Some((theta, dt, Tri::assemble(&ya, &conv, &diff, theta * dt)));
        }
        let tri = &tri_cache.as_ref().expect("assembled above").2;
        let explicit: Vec<f64> = (1..n - 1)
            .map(|k| p[k] + (1.0 - theta) * dt * line_op(&p, k, conv[k], diff[k], h))
            .collect();
        let nl = |q: &[f64]| -> Vec<f64> {
            (1..n - 1)
                .map(|k| {
                    let g = vol[k] * (q[k + 1] - q[k - 1]) / (2.0 * h);
                    nlc * g * g
                })
                .collect()
        };
        let mut pstar = p.clone();
        let mut next = p.clone();
        let mut iterations = 0;
        let mut change = 0.0;
        let mut sweeps;
        let mut comp;
        loop {
            iterations += 1;
            let rhs: Vec<f64> = if nlc > 0.0 {
                explicit
                    .iter()
                    .zip(nl(&pstar))
                    .map(|(e, q)| e + dt * q)
                    .collect()
            } else {
                explicit.clone()
            };
            let mut x: Vec<f64> = next[1..n - 1].to_vec();
            let (sw, res) = solve_system(tri, &rhs, &mut x, obstacle.map(|m| (c_interior, m)), dt)?;
            sweeps = sw;
            comp = res;
            let prev = next.clone();
            next[1..n - 1].copy_from_slice(&x);
            apply_line_bc(&ya, &mut next);
            if obstacle.is_some() {
                next[0] = next[0].max(payoff_nodes[0]);
                next[n - 1] = next[n - 1].max(payoff_nodes[n - 1]);
            }
            if nlc == 0.0 || iterations >= cfg.picard_max_iter {
                if iterations > 1 {
                    change = max_rel_change(&next, &prev);
                }
                break;
            }
            change = max_rel_change(&next, &prev);
            if iterations > 1 && change <= cfg.picard_tol {
                break;
            }
            for k in 0..n {
                pstar[k] = theta * next[k] + (1.0 - theta) * p[k];
            }
        }
        check_finite(&next, step)?;
        complementarity = complementarity.max(comp);
        let residual = if obstacle.is_some() { comp } else { change };
        let iters = if obstacle.is_some() {
            sweeps
        } else {
            iterations
        };
        diagnostics.push(StepDiagnostic {
            step,
            t: times[it],
            residual,
            iterations: iters,
        });
        p = next;
        levels[it] = p.clone();
    }
    let surface = PriceSurface::new(
        grid.clone(),
        sa,
        ya,
        levels,
        gamma,
        *mode,
        *params,
        payoff.clone(),
        diagnostics,
        warnings,
    );
    Ok(SolveOutput {
        surface,
        complementarity,
    })
}

/// Sets the edge values of a 2D field `[s][y]` from linearity in each price.
fn apply_plane_bc(sa: &Axis, ya: &Axis, p: &mut [f64]) {
    let (ns, ny) = (sa.len(), ya.len());
    let (a1, a2) = sa.extrapolation_low();
    let (b1, b2) = sa.extrapolation_high();
    for k in 1..ny - 1 {
        p[k] = a1 * p[ny + k] + a2 * p[2 * ny + k];
        p[(ns - 1) * ny + k] = b1 * p[(ns - 2) * ny + k] + b2 * p[(ns - 3) * ny + k];
    }
    for j in 0..ns {
        apply_line_bc(ya, &mut p[j * ny..(j + 1) * ny]);
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_2d(
    payoff: &PayoffSpec,
    pw: &PiecewiseLinear,
    grid: &GridSpec,
    gamma: f64,
    mode: &PricingMode,
    model: &QmModel,
    cfg: &SolverConfig,
    obstacle: Option<&ObstacleMethod>,
) -> Result<SolveOutput> {
    let params = &model.params;
    let sa = Axis::new(grid.s_min, grid.s_max, grid.n_s, grid.log_space);
    let ya = Axis::new(grid.y_min, grid.y_max, grid.n_y, grid.log_space);
    let (ns, ny) = (sa.len(), ya.len());
    let (hs, hy) = (sa.h, ya.h);
    let id = |j: usize, k: usize| j * ny + k;
    let vol_s: Vec<f64> = (0..ns).map(|j| sa.coord_vol(j, params.sigma_s)).collect();
    let conv_s: Vec<f64> = (0..ns)
        .map(|j| sa.coord_drift(j, 0.0, params.sigma_s))
        .collect();
    let diff_s: Vec<f64> = vol_s.iter().map(|v| 0.5 * v * v).collect();
    let vol_y: Vec<f64> = (0..ny).map(|k| ya.coord_vol(k, params.sigma_y)).collect();
    let diff_y: Vec<f64> = vol_y.iter().map(|v| 0.5 * v * v).collect();
    let rho = params.rho;
    let nlc = 0.5 * gamma * (1.0 - rho * rho);

    let mut warnings = Vec::new();
    let cross_ok = (1..ns - 1).all(|j| {
        (1..ny - 1).all(|k| {
            let cross = (rho * vol_s[j] * vol_y[k]).abs() / (hs * hy);
            cross <= vol_s[j] * vol_s[j] / (hs * hs) && cross <= vol_y[k] * vol_y[k] / (hy * hy)
        })
    });
    if !cross_ok {
        warnings.push("mixed-derivative term dominates an axis diffusion; the scheme is not monotone, refine the coarser axis".into());
    }

    let payoff_nodes: Vec<f64> = (0..ns)
        .flat_map(|_| ya.prices.iter().map(|&y| pw.value(y)))
        .collect();
    let times = grid.times();
    let nt = grid.n_t;
    let mut levels = vec![Vec::new(); nt + 1];
    levels[nt] = payoff_nodes.clone();
    let mut p = payoff_nodes.clone();
    let mut diagnostics = Vec::with_capacity(nt);
    let mut complementarity: f64 = 0.0;
    let mut conv_y = vec![0.0; ns * ny];
    let mut peclet_warned = false;

    for step in 1..=nt {
        let it = nt - step;
        let dt = times[it + 1] - times[it];
        let t_mid = 0.5 * (times[it] + times[it + 1]);
        let theta = if step <= cfg.rannacher_steps {
            1.0
        } else {
            cfg.theta
        };
        for j in 0..ns {
            for k in 0..ny {
                let mu = model.drift_rate_y(t_mid, sa.prices[j], ya.prices[k]);
                conv_y[id(j, k)] = ya.coord_drift(k, mu, params.sigma_y);
            }
        }
        if !peclet_warned {
            let pe = (0..ns)
                .flat_map(|j| (1..ny - 1).map(move |k| (j, k)))
                .map(|(j, k)| conv_y[id(j, k)].abs() * hy / (2.0 * diff_y[k]))
                .fold(0.0, f64::max);
            if pe > 1.0 {
                warnings.push(format!(
                    "cell Péclet number {pe:.2} exceeds 1 in y; refine the y grid"
                ));
                peclet_warned = true;
            }
        }
        // Axis operators applied to the old level (needed by every stage).
        let mut a1p = vec![0.0; ns * ny];
        let mut a2p = vec![0.0; ns * ny];
        let mut a0p = vec![0.0; ns * ny];
        for j in 1..ns - 1 {
            for k in 1..ny - 1 {
                a1p[id(j, k)] = conv_s[j] * (p[id(j + 1, k)] - p[id(j - 1, k)]) / (2.0 * hs)
                    + diff_s[j] * (p[id(j + 1, k)] - 2.0 * p[id(j, k)] + p[id(j - 1, k)])
                        / (hs * hs);
                a2p[id(j, k)] = conv_y[id(j, k)] * (p[id(j, k + 1)] - p[id(j, k - 1)]) / (2.0 * hy)
                    + diff_y[k] * (p[id(j, k + 1)] - 2.0 * p[id(j, k)] + p[id(j, k - 1)])
                        / (hy * hy);
                let cross = (p[id(j + 1, k + 1)] - p[id(j + 1, k - 1)] - p[id(j - 1, k + 1)]
                    + p[id(j - 1, k - 1)])
                    / (4.0 * hs * hy);
                a0p[id(j, k)] = rho * vol_s[j] * vol_y[k] * cross;
            }
        }
        let nl = |q: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; ns * ny];
            if nlc > 0.0 {
                for j in 1..ns - 1 {
                    for k in 1..ny - 1 {
                        let g = vol_y[k] * (q[id(j, k + 1)] - q[id(j, k - 1)]) / (2.0 * hy);
                        out[id(j, k)] = nlc * g * g;
                    }
                }
            }
            out
        };
        // s-direction systems do not depend on the line index.
        let tri_s = Tri::assemble(&sa, &conv_s, &diff_s, theta * dt);
        let tri_y: Vec<Tri> = (1..ns - 1)
            .map(|j| {
                let cy: Vec<f64> = (0..ny).map(|k| conv_y[id(j, k)]).collect();
                Tri::assemble(&ya, &cy, &diff_y, theta * dt)
            })
            .collect();

        let mut pstar = p.clone();
        let mut next = p.clone();
        let mut iterations = 0;
        let mut change = 0.0;
        let mut comp_step: f64;
        let mut sweeps_step;
        loop {
            iterations += 1;
            let src = nl(&pstar);
            let mut y0 = p.clone();
            for j in 1..ns - 1 {
                for k in 1..ny - 1 {
                    let i = id(j, k);
                    y0[i] = p[i] + dt * (a0p[i] + a1p[i] + a2p[i] + src[i]);
                }
            }
            apply_plane_bc(&sa, &ya, &mut y0);
            // Stage 1: implicit in s, one system per interior y node.
            let mut y1 = y0.clone();
            for k in 1..ny - 1 {
                let rhs: Vec<f64> = (1..ns - 1)
                    .map(|j| y0[id(j, k)] - theta * dt * a1p[id(j, k)])
                    .collect();
                let mut x: Vec<f64> = (1..ns - 1).map(|j| next[id(j, k)]).collect();
                solve_system(&tri_s, &rhs, &mut x, None, dt)?;
                for (i, j) in (1..ns - 1).enumerate() {
                    y1[id(j, k)] = x[i];
                }
            }
            apply_plane_bc(&sa, &ya, &mut y1);
            // Stage 2: implicit in y, one system per interior s node; the
            // obstacle is imposed here.
            let prev = next.clone();
            comp_step = 0.0;
            sweeps_step = 0;
            for (jj, j) in (1..ns - 1).enumerate() {
                let rhs: Vec<f64> = (1..ny - 1)
                    .map(|k| y1[id(j, k)] - theta * dt * a2p[id(j, k)])
                    .collect();
                let mut x: Vec<f64> = (1..ny - 1).map(|k| prev[id(j, k)]).collect();
                let c = &payoff_nodes[id(j, 1)..id(j, ny - 1)];
                let (sw, res) =
                    solve_system(&tri_y[jj], &rhs, &mut x, obstacle.map(|m| (c, m)), dt)?;
                comp_step = comp_step.max(res);
                sweeps_step = sweeps_step.max(sw);
                next[id(j, 1)..id(j, ny - 1)].copy_from_slice(&x);
            }
            apply_plane_bc(&sa, &ya, &mut next);
            if obstacle.is_some() {
                for (v, c) in next.iter_mut().zip(&payoff_nodes) {
                    *v = v.max(*c);
                }
            }
            if nlc == 0.0 || iterations >= cfg.picard_max_iter {
                if iterations > 1 {
                    change = max_rel_change(&next, &prev);
                }
                break;
            }
            change = max_rel_change(&next, &prev);
            if iterations > 1 && change <= cfg.picard_tol {
                break;
            }
            for i in 0..ns * ny {
                pstar[i] = theta * next[i] + (1.0 - theta) * p[i];
            }
        }
        check_finite(&next, step)?;
        complementarity = complementarity.max(comp_step);
        let (residual, iters) = if obstacle.is_some() {
            (comp_step, sweeps_step)
        } else {
            (change, iterations)
        };
        diagnostics.push(StepDiagnostic {
            step,
            t: times[it],
            residual,
            iterations: iters,
        });
        p = next;
        levels[it] = p.clone();
    }
    let surface = PriceSurface::new(
        grid.clone(),
        sa,
        ya,
        levels,
        gamma,
        *mode,
        *params,
        payoff.clone(),
        diagnostics,
        warnings,
    );
    Ok(SolveOutput {
        surface,
        complementarity,
    })
}
