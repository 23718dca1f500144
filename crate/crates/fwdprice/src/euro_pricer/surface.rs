//! Discretised price surfaces `p(t, s, y)` with derivative access and the
//! hedge and control fields derived from them.

use std::io::Write;

use serde::Serialize;

use super::grid::{Axis, GridSpec, PricingMode};
use super::payoff::PayoffSpec;
use crate::error::Result;
use crate::market_model::MarketParams;
use crate::numerics::{gradient, hermite, locate_uniform};

/// Per-step diagnostics of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostic {
    /// Step counter, 1 at the first step back from maturity.
    pub step: usize,
    /// Time level reached by the step.
    pub t: f64,
    /// Last fixed-point change (0 with a single lagged evaluation) or, for
    /// American solves, the complementarity residual.
    pub residual: f64,
    /// Fixed-point iterations (or projected relaxation sweeps).
    pub iterations: usize,
}

/// Value and first derivatives of a surface at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    /// Price.
    pub p: f64,
    /// `∂p/∂s`.
    pub p_s: f64,
    /// `∂p/∂y`.
    pub p_y: f64,
    /// Whether the point was outside the grid and had to be clamped.
    pub clamped: bool,
}

/// A price surface on all time levels of a grid.
///
/// Values are stored per time level as `[s-node][y-node]`. In
/// full-information mode the stock axis is a single node and `p_s = 0`.
/// Off-node values use cubic Hermite interpolation in the `y` coordinate
/// (with central-difference node slopes), linear interpolation in the `s`
/// coordinate and linear interpolation in time; the returned derivatives
/// are exact derivatives of that interpolant, so they are consistent with
/// the interpolated prices along simulated paths.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    /// Grid of the solve.
    pub grid: GridSpec,
    /// Time levels.
    pub times: Vec<f64>,
    /// Stock axis (one node in full-information mode).
    pub s_axis: Axis,
    /// Non-traded asset axis.
    pub y_axis: Axis,
    /// Risk aversion of the solve.
    pub gamma: f64,
    /// Information mode of the solve.
    pub mode: PricingMode,
    /// Market parameters of the solve.
    pub params: MarketParams,
    /// Pay-off of the claim.
    pub payoff: PayoffSpec,
    /// Per-step diagnostics.
    pub diagnostics: Vec<StepDiagnostic>,
    /// Non-fatal warnings raised during assembly.
    pub warnings: Vec<String>,
    values: Vec<f64>,
    slopes_y: Vec<f64>,
}

impl PriceSurface {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        grid: GridSpec,
        s_axis: Axis,
        y_axis: Axis,
        levels: Vec<Vec<f64>>,
        gamma: f64,
        mode: PricingMode,
        params: MarketParams,
        payoff: PayoffSpec,
        diagnostics: Vec<StepDiagnostic>,
        warnings: Vec<String>,
    ) -> Self {
        let ny = y_axis.len();
        let mut values = Vec::with_capacity(levels.len() * s_axis.len() * ny);
        let mut slopes_y = Vec::with_capacity(values.capacity());
        for level in &levels {
            values.extend_from_slice(level);
            for line in level.chunks(ny) {
                slopes_y.extend(gradient(line, y_axis.h));
            }
        }
        Self {
            times: grid.times(),
            grid,
            s_axis,
            y_axis,
            gamma,
            mode,
            params,
            payoff,
            diagnostics,
            warnings,
            values,
            slopes_y,
        }
    }

    fn idx(&self, it: usize, is: usize, iy: usize) -> usize {
        (it * self.s_axis.len() + is) * self.y_axis.len() + iy
    }

    /// Node value `p(t_it, s_is, y_iy)`.
    pub fn node(&self, it: usize, is: usize, iy: usize) -> f64 {
        self.values[self.idx(it, is, iy)]
    }

    /// All node values of one time level, as `[s-node][y-node]`.
    pub fn level(&self, it: usize) -> &[f64] {
        let n = self.s_axis.len() * self.y_axis.len();
        &self.values[it * n..(it + 1) * n]
    }

    /// Central-difference `∂p/∂y` at a node.
    pub fn node_p_y(&self, it: usize, is: usize, iy: usize) -> f64 {
        self.slopes_y[self.idx(it, is, iy)] * self.y_axis.jacobian(self.y_axis.prices[iy])
    }

    /// Central-difference `∂p/∂s` at a node (0 in full-information mode).
    pub fn node_p_s(&self, it: usize, is: usize, iy: usize) -> f64 {
        let ns = self.s_axis.len();
        if ns < 3 {
            return 0.0;
        }
        let h = self.s_axis.h;
        let f = |j: usize| self.node(it, j, iy);
        let d = if is == 0 {
            (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
        } else if is == ns - 1 {
            (3.0 * f(ns - 1) - 4.0 * f(ns - 2) + f(ns - 3)) / (2.0 * h)
        } else {
            (f(is + 1) - f(is - 1)) / (2.0 * h)
        };
        d * self.s_axis.jacobian(self.s_axis.prices[is])
    }

    /// Whether the surface carries a stock dimension.
    pub fn has_s_dimension(&self) -> bool {
        self.s_axis.len() > 1
    }

    /// Price and derivatives at an arbitrary point.
    pub fn eval(&self, t: f64, s: f64, y: f64) -> SurfacePoint {
        let nt = self.times.len();
        let dt = self.grid.horizon / (nt - 1) as f64;
        let (it, wt, t_out) = locate_uniform(0.0, dt, nt, t);
        let (p0, ps0, pv0, c0) = self.eval_level(it, s, y);
        let (p, pu, pv, clamped) = if wt == 0.0 {
            (p0, ps0, pv0, c0)
        } else {
            let (p1, ps1, pv1, c1) = self.eval_level(it + 1, s, y);
            (
                (1.0 - wt) * p0 + wt * p1,
                (1.0 - wt) * ps0 + wt * ps1,
                (1.0 - wt) * pv0 + wt * pv1,
                c0 || c1,
            )
        };
        SurfacePoint {
            p,
            p_s: pu * self.s_axis.jacobian(s),
            p_y: pv * self.y_axis.jacobian(y),
            clamped: clamped || t_out,
        }
    }

    /// Value and coordinate derivatives on one time level.
    fn eval_level(&self, it: usize, s: f64, y: f64) -> (f64, f64, f64, bool) {
        let ya = &self.y_axis;
        let (k, w, y_out) = locate_uniform(ya.coords[0], ya.h, ya.len(), ya.coord(y));
        let line = |is: usize| {
            let i0 = self.idx(it, is, k);
            hermite(
                self.values[i0],
                self.values[i0 + 1],
                self.slopes_y[i0],
                self.slopes_y[i0 + 1],
                ya.h,
                w,
            )
        };
        if self.s_axis.len() == 1 {
            let (p, pv) = line(0);
            return (p, 0.0, pv, y_out);
        }
        let sa = &self.s_axis;
        let (j, ws, s_out) = locate_uniform(sa.coords[0], sa.h, sa.len(), sa.coord(s));
        let (pa, pva) = line(j);
        let (pb, pvb) = line(j + 1);
        (
            (1.0 - ws) * pa + ws * pb,
            (pb - pa) / sa.h,
            (1.0 - ws) * pva + ws * pvb,
            y_out || s_out,
        )
    }

    /// Price at a point.
    pub fn price(&self, t: f64, s: f64, y: f64) -> f64 {
        self.eval(t, s, y).p
    }
}

/// Optimal hedge `θᴴ = p_s + ρ (σʸ y)/(σˢ s) p_y`, in shares of stock, for a
/// short position in the claim.
pub fn hedge_ratio(surface: &PriceSurface, t: f64, s: f64, y: f64, params: &MarketParams) -> f64 {
    let pt = surface.eval(t, s, y);
    hedge_from_derivatives(pt.p_s, pt.p_y, s, y, params)
}

/// `θ = p_s + ρ (σʸ y)/(σˢ s) p_y` from given derivatives.
pub fn hedge_from_derivatives(p_s: f64, p_y: f64, s: f64, y: f64, params: &MarketParams) -> f64 {
    p_s + params.rho * params.sigma_y * y / (params.sigma_s * s) * p_y
}

/// Optimal orthogonal control `ψᴴ = −γ √(1−ρ²) σʸ y p_y`.
pub fn optimal_control(
    surface: &PriceSurface,
    t: f64,
    s: f64,
    y: f64,
    gamma: f64,
    params: &MarketParams,
) -> f64 {
    let pt = surface.eval(t, s, y);
    -gamma * params.rho_perp() * params.sigma_y * y * pt.p_y
}

/// Writes the surface as CSV with columns
/// `t,s,y,p,p_s,p_y,theta_h,psi_h` on every `time_stride`-th level (the
/// maturity level is always included).
pub fn write_surface_csv<W: Write>(
    surface: &PriceSurface,
    writer: W,
    time_stride: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "s", "y", "p", "p_s", "p_y", "theta_h", "psi_h"])?;
    let stride = time_stride.max(1);
    let nt = surface.times.len();
    let params = &surface.params;
    for it in (0..nt).filter(|&i| i % stride == 0 || i == nt - 1) {
        for (is, &s) in surface.s_axis.prices.iter().enumerate() {
            for (iy, &y) in surface.y_axis.prices.iter().enumerate() {
                let p_s = surface.node_p_s(it, is, iy);
                let p_y = surface.node_p_y(it, is, iy);
                let theta = hedge_from_derivatives(p_s, p_y, s, y, params);
                let psi = -surface.gamma * params.rho_perp() * params.sigma_y * y * p_y;
                w.serialize((
                    surface.times[it],
                    s,
                    y,
                    surface.node(it, is, iy),
                    p_s,
                    p_y,
                    theta,
                    psi,
                ))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the per-step diagnostics as JSON lines `{"step","t","residual","iterations"}`.
pub fn write_diagnostics_jsonl<W: Write>(
    diagnostics: &[StepDiagnostic],
    mut writer: W,
) -> Result<()> {
    for d in diagnostics {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
