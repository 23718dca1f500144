//! American forward indifference prices.
//!
//! The price of a claim that may be exercised at any time for `C(Y_τ)` is
//! taken to solve the variational inequality
//!
//! ```text
//! min( −(p_t + 𝒜^{Q^M} p + ½ γ (1−ρ²)(σʸ y p_y)²),  p − C ) = 0,   p(T) = C.
//! ```
//!
//! This characterisation is conjectural: it is the natural free-boundary
//! counterpart of the European equation rather than a proven result. The
//! same discretisation as the European solver is used, with the obstacle
//! imposed in the implicit systems by projected SOR (default) or by a
//! penalty iteration. The optimal stopping time is the first time the
//! price meets the exercise value.

use std::io::Write;

use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::euro_pricer::{
    solver, GridSpec, Monotonicity, ObstacleMethod, PayoffSpec, PriceSurface, PricingMode,
    SolverConfig,
};
use crate::market_model::{MarketParams, PathBundle};
use crate::numerics::locate_uniform;

/// Relative gap `p − C ≤ EXERCISE_TOL·max(1, C)` below which a node counts
/// as exercised.
pub const EXERCISE_TOL: f64 = 1e-8;

/// Solution of the obstacle problem.
#[derive(Debug, Clone)]
pub struct AmericanResult {
    /// Price surface with the obstacle imposed.
    pub surface: PriceSurface,
    /// Exercise indicator per node, laid out like the surface values
    /// (`[time][s-node][y-node]`): `p = C` and `C > 0`.
    pub exercise_region: Vec<bool>,
    /// Critical prices per time level and stock slice (monotone pay-offs
    /// only; empty otherwise).
    pub boundary: Vec<BoundaryPoint>,
    /// Largest scaled complementarity residual over all implicit systems,
    /// `|min((M x − r)/Δτ, x − C)| / max(1, |x|)`.
    pub complementarity_residual: f64,
    /// `max(0, −min(p − C))` over all nodes.
    pub obstacle_violation: f64,
}

/// A point of the exercise boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    /// Time.
    pub t: f64,
    /// Stock price of the slice (`s₀` in full-information mode).
    pub s_slice: f64,
    /// Critical price of `Y`, `None` when nothing is exercised.
    pub y_critical: Option<f64>,
}

/// Solves the obstacle problem with a static exercise value `C(y)`.
///
/// # Errors
/// Invalid inputs, an invalid obstacle method (e.g. an overflowing penalty
/// parameter), or failure of the projected iteration.
pub fn solve_vi_american(
    payoff: &PayoffSpec,
    grid: &GridSpec,
    gamma: f64,
    mode: &PricingMode,
    params: &MarketParams,
    cfg: &SolverConfig,
    method: &ObstacleMethod,
) -> Result<AmericanResult> {
    let out = solver::solve(payoff, grid, gamma, mode, params, cfg, Some(method))?;
    let surface = out.surface;
    let pw = payoff.piecewise()?;
    let (ns, ny) = (surface.s_axis.len(), surface.y_axis.len());
    let c: Vec<f64> = surface.y_axis.prices.iter().map(|&y| pw.value(y)).collect();
    let mut region = Vec::with_capacity(surface.times.len() * ns * ny);
    let mut violation: f64 = 0.0;
    for it in 0..surface.times.len() {
        let level = surface.level(it);
        for j in 0..ns {
            for k in 0..ny {
                let gap = level[j * ny + k] - c[k];
                violation = violation.max(-gap);
                region.push(c[k] > 0.0 && gap <= EXERCISE_TOL * c[k].max(1.0));
            }
        }
    }
    let mut result = AmericanResult {
        surface,
        exercise_region: region,
        boundary: Vec::new(),
        complementarity_residual: out.complementarity,
        obstacle_violation: violation.max(0.0),
    };
    if matches!(
        pw.monotonicity(),
        Monotonicity::NonIncreasing | Monotonicity::NonDecreasing
    ) {
        let mut boundary = Vec::new();
        for it in 0..result.surface.times.len() {
            boundary.extend(boundary_at_level(&result, it)?);
        }
        result.boundary = boundary;
    }
    Ok(result)
}

impl AmericanResult {
    /// Whether node `(it, is, iy)` lies in the exercise region.
    pub fn is_exercised(&self, it: usize, is: usize, iy: usize) -> bool {
        let (ns, ny) = (self.surface.s_axis.len(), self.surface.y_axis.len());
        self.exercise_region[(it * ns + is) * ny + iy]
    }
}

fn boundary_at_level(result: &AmericanResult, it: usize) -> Result<Vec<BoundaryPoint>> {
    let surface = &result.surface;
    let pw = surface.payoff.piecewise()?;
    let mono = pw.monotonicity();
    let put_like = match mono {
        Monotonicity::NonIncreasing => true,
        Monotonicity::NonDecreasing => false,
        Monotonicity::Constant => {
            let t = surface.times[it];
            return Ok((0..surface.s_axis.len())
                .map(|j| BoundaryPoint {
                    t,
                    s_slice: surface.s_axis.prices[j],
                    y_critical: None,
                })
                .collect());
        }
        Monotonicity::None => {
            return Err(Error::BoundaryUndefined(
                "exercise boundary needs a monotone pay-off".into(),
            ))
        }
    };
    let t = surface.times[it];
    let ys = &surface.y_axis.prices;
    let ny = ys.len();
    let last = it + 1 == surface.times.len();
    Ok((0..surface.s_axis.len())
        .map(|j| {
            let y_critical = if last {
                // At expiry p = C: exercise wherever the pay-off is positive.
                expiry_boundary(&pw, put_like)
            } else if put_like {
                (0..ny)
                    .take_while(|&k| result.is_exercised(it, j, k))
                    .last()
                    .map(|k| ys[k])
            } else {
                (0..ny)
                    .rev()
                    .take_while(|&k| result.is_exercised(it, j, k))
                    .last()
                    .map(|k| ys[k])
            };
            BoundaryPoint {
                t,
                s_slice: surface.s_axis.prices[j],
                y_critical,
            }
        })
        .collect())
}

/// Edge of `{C > 0}` for a monotone piecewise-linear pay-off.
fn expiry_boundary(pw: &crate::euro_pricer::PiecewiseLinear, put_like: bool) -> Option<f64> {
    let mut pts: Vec<f64> = pw.kinks.iter().map(|&(k, _)| k).collect();
    pts.sort_by(|a, b| a.total_cmp(b));
    if put_like {
        // Largest point where C reaches 0 from above.
        if pw.value(0.0) <= 0.0 {
            return None;
        }
        pts.into_iter()
            .find(|&k| pw.value(k) <= 0.0)
            .or(Some(f64::INFINITY))
    } else {
        pts.into_iter()
            .rev()
            .find(|&k| pw.value(k) <= 0.0)
            .or(Some(0.0))
    }
}

/// Exercise boundary at the time level nearest to `t`, one point per
/// stock slice: for a put the largest exercised `y`, for a call the
/// smallest.
///
/// # Errors
/// Non-monotone pay-offs.
pub fn exercise_boundary(result: &AmericanResult, t: f64) -> Result<Vec<BoundaryPoint>> {
    let times = &result.surface.times;
    let dt = result.surface.grid.horizon / (times.len() - 1) as f64;
    let (k, w, _) = locate_uniform(0.0, dt, times.len(), t);
    let it = if w > 0.5 { k + 1 } else { k };
    boundary_at_level(result, it)
}

/// Distribution of the first time the price meets the exercise value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingStats {
    /// Stopping time per path (maturity when never exercised early).
    pub tau: Vec<f64>,
    /// Mean stopping time.
    pub mean: f64,
    /// 10%, 50% and 90% quantiles.
    pub quantiles: [f64; 3],
    /// Fraction of paths stopped strictly before maturity.
    pub early_fraction: f64,
}

/// Applies the stopping rule `τ* = inf{t : p(t, S_t, Y_t) ≤ C(Y_t) +
/// tol·max(1, C(Y_t)), C(Y_t) > 0}` on the time grid of each path.
///
/// Off the grid nodes the surface is interpolated, and the interpolant of
/// a pay-off that is linear in `y` differs from it by a small amount on a
/// log-price grid; `tol` must exceed that interpolation error (`10⁻⁶` is
/// ample on practical grids) for the rule to stop inside the region.
///
/// # Errors
/// Empty path set or negative tolerance.
pub fn stopping_rule_check(
    result: &AmericanResult,
    paths: &[PathBundle],
    tol: f64,
) -> Result<StoppingStats> {
    ensure(!paths.is_empty(), || "need at least one path".into())?;
    ensure(tol >= 0.0, || {
        format!("tolerance must be non-negative, got {tol}")
    })?;
    let surface = &result.surface;
    let pw = surface.payoff.piecewise()?;
    let horizon = surface.grid.horizon;
    let tau: Vec<f64> = paths
        .iter()
        .map(|path| {
            path.times
                .iter()
                .enumerate()
                .filter(|(_, &t)| t <= horizon)
                .find(|&(i, &t)| {
                    let c = pw.value(path.y[i]);
                    c > 0.0 && surface.price(t, path.s[i], path.y[i]) <= c + tol * c.max(1.0)
                })
                .map_or(horizon, |(_, &t)| t)
        })
        .collect();
    let mut sorted = tau.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    Ok(StoppingStats {
        mean: tau.iter().sum::<f64>() / tau.len() as f64,
        quantiles: [q(0.1), q(0.5), q(0.9)],
        early_fraction: tau.iter().filter(|&&t| t < horizon).count() as f64 / tau.len() as f64,
        tau,
    })
}

/// Writes the boundary as CSV with columns `t,s_slice,y_critical`; an empty
/// `y_critical` field means no exercise.
pub fn write_boundary_csv<W: Write>(boundary: &[BoundaryPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "s_slice", "y_critical"])?;
    for b in boundary {
        w.write_record([
            b.t.to_string(),
            b.s_slice.to_string(),
            b.y_critical.map(|y| y.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the exercise region as CSV with columns `t,s,y,exercise`
/// (`exercise` is 0 or 1), every `time_stride`-th time level.
pub fn write_region_csv<W: Write>(
    result: &AmericanResult,
    writer: W,
    time_stride: usize,
) -> Result<()> {
    let surface = &result.surface;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "s", "y", "exercise"])?;
    let nt = surface.times.len();
    let stride = time_stride.max(1);
    for it in (0..nt).filter(|it| it % stride == 0 || it + 1 == nt) {
        for (j, &s) in surface.s_axis.prices.iter().enumerate() {
            for (k, &y) in surface.y_axis.prices.iter().enumerate() {
                let e = if result.is_exercised(it, j, k) {
                    "1"
                } else {
                    "0"
                };
                w.write_record([
                    surface.times[it].to_string(),
                    s.to_string(),
                    y.to_string(),
                    e.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
