//! Deterministic forward utilities `u(x, t)` with asymptotically linear
//! local risk tolerance, their limiting members, and residual-based
//! verification of the equations they satisfy.
//!
//! The time argument is the mean-variance trade-off clock `A`, so the
//! forward performance process is `U(x, t) = u(x, Aₜ)`. Every member of the
//! family solves
//!
//! ```text
//! u_t u_xx = ½ u_x²              (utility equation)
//! u_t + ½ r u_x = 0              (transport equation)
//! r_t + ½ r² r_xx = 0            (fast diffusion)
//! γ_t − ½ (1/γ)_xx = 0           (risk aversion)
//! ```
//!
//! with local risk tolerance `r = −u_x/u_xx = √(αx² + βe^{−αt})` and local
//! risk aversion `γ = 1/r`. The residual operators evaluate these equations
//! with central differences, so the same harness can verify any
//! user-supplied utility.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Preference parameters as configured by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceParams {
    /// Risk aversion of the exponential forward performance (> 0 for
    /// utility evaluation; the pricers also accept 0 as the marginal limit).
    pub gamma: f64,
    /// Slope parameter of the risk tolerance (> 0).
    #[serde(default = "one")]
    pub alpha: f64,
    /// Level parameter of the risk tolerance (> 0).
    #[serde(default = "one")]
    pub beta: f64,
    /// Scale constant of the general utility (> 0).
    #[serde(default = "one")]
    pub m: f64,
    /// Shift constant of the general utility.
    #[serde(default)]
    pub n: f64,
}

fn one() -> f64 {
    1.0
}

impl PreferenceParams {
    /// Checks the invariants of the type.
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.alpha, self.beta, self.m, self.n];
        ensure(all.iter().all(|v| v.is_finite()), || {
            "preference parameters must be finite".into()
        })?;
        ensure(self.gamma >= 0.0, || {
            format!("gamma must be non-negative, got {}", self.gamma)
        })?;
        ensure(self.alpha > 0.0 && self.beta > 0.0, || {
            "alpha and beta must be positive".into()
        })?;
        ensure(self.m > 0.0, || "m must be positive".into())
    }

    /// The general family member described by `(alpha, beta, m, n)`.
    pub fn general_kind(&self) -> UtilityKind {
        UtilityKind::General {
            alpha: self.alpha,
            beta: self.beta,
            m: self.m,
            n: self.n,
        }
    }

    /// The exponential member with risk aversion `gamma` (`β = 1/γ²`).
    pub fn exponential_kind(&self) -> UtilityKind {
        UtilityKind::Exponential {
            beta: 1.0 / (self.gamma * self.gamma),
        }
    }
}

/// Members of the asymptotically linear family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityKind {
    /// `α → 0`: constant risk tolerance `√β`, risk aversion `γ = 1/√β`.
    Exponential {
        /// Squared risk tolerance.
        beta: f64,
    },
    /// `β → 0`: risk tolerance `√α·x` on `x ≥ 0`.
    Power {
        /// Squared slope of the risk tolerance.
        alpha: f64,
    },
    /// `α = 1, β → 0`: risk tolerance `x` on `x > 0`.
    Logarithmic,
    /// Full family with risk tolerance `√(αx² + βe^{−αt})`.
    General {
        /// Squared asymptotic slope.
        alpha: f64,
        /// Level at `x = 0`, `t = 0`.
        beta: f64,
        /// Scale constant (> 0).
        m: f64,
        /// Shift constant.
        n: f64,
    },
}

impl UtilityKind {
    /// Checks parameter invariants.
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilityKind::Exponential { beta } => {
                ensure(beta > 0.0, || "beta must be positive".into())
            }
            UtilityKind::Power { alpha } => ensure(alpha > 0.0 && alpha != 1.0, || {
                "power utility needs alpha > 0, alpha ≠ 1".into()
            }),
            UtilityKind::Logarithmic => Ok(()),
            UtilityKind::General { alpha, beta, m, n } => ensure(
                alpha > 0.0 && beta > 0.0 && m > 0.0 && n.is_finite(),
                || "general utility needs alpha, beta, m > 0".into(),
            ),
        }
    }

    /// Checks that `x` lies in the wealth domain.
    pub fn check_domain(&self, x: f64) -> Result<()> {
        match self {
            UtilityKind::Power { .. } if x < 0.0 => {
                Err(Error::Domain(format!("power utility needs x ≥ 0, got {x}")))
            }
            UtilityKind::Logarithmic if x <= 0.0 => {
                Err(Error::Domain(format!("log utility needs x > 0, got {x}")))
            }
            _ if !x.is_finite() => Err(Error::Domain("wealth must be finite".into())),
            _ => Ok(()),
        }
    }

    /// Smallest wealth at which a stencil point may be placed.
    fn open_lower_bound(&self) -> Option<f64> {
        match self {
            UtilityKind::Power { .. } | UtilityKind::Logarithmic => Some(0.0),
            _ => None,
        }
    }
}

/// `(√αx + √(αx² + b))`, computed without cancellation for negative `x`.
fn linear_plus_root(sa: f64, x: f64, b: f64) -> f64 {
    let lin = sa * x;
    let root = (lin * lin + b).sqrt();
    if lin >= 0.0 {
        lin + root
    } else {
        b / (root - lin)
    }
}

/// Local risk tolerance `r(x, t) = −u_x/u_xx`.
pub fn risk_tolerance(kind: &UtilityKind, x: f64, t: f64) -> Result<f64> {
    kind.validate()?;
    kind.check_domain(x)?;
    Ok(match *kind {
        UtilityKind::Exponential { beta } => beta.sqrt(),
        UtilityKind::Power { alpha } => alpha.sqrt() * x,
        UtilityKind::Logarithmic => x,
        UtilityKind::General { alpha, beta, .. } => {
            (alpha * x * x + beta * (-alpha * t).exp()).sqrt()
        }
    })
}

/// Local risk aversion `γ(x, t) = 1/r(x, t)`.
pub fn risk_aversion(kind: &UtilityKind, x: f64, t: f64) -> Result<f64> {
    let r = risk_tolerance(kind, x, t)?;
    if r == 0.0 {
        return Err(Error::Domain(
            "risk aversion is infinite at zero risk tolerance".into(),
        ));
    }
    Ok(1.0 / r)
}

/// Forward utility `u(x, t)`.
pub fn utility(kind: &UtilityKind, x: f64, t: f64) -> Result<f64> {
    kind.validate()?;
    kind.check_domain(x)?;
    ensure(t >= 0.0, || {
        format!("time argument must be non-negative, got {t}")
    })?;
    Ok(utility_unchecked(kind, x, t))
}

fn utility_unchecked(kind: &UtilityKind, x: f64, t: f64) -> f64 {
    match *kind {
        UtilityKind::Exponential { beta } => -(-x / beta.sqrt() + 0.5 * t).exp(),
        UtilityKind::Power { alpha } => {
            let delta = (alpha.sqrt() - 1.0) / alpha.sqrt();
            x.powf(delta) / delta * (-0.5 * delta * t / (1.0 - delta)).exp()
        }
        UtilityKind::Logarithmic => x.ln() - 0.5 * t,
        UtilityKind::General { alpha, beta, m, n } => {
            let b = beta * (-alpha * t).exp();
            if alpha == 1.0 {
                let q = linear_plus_root(1.0, x, b);
                // x (x − √(x² + b)) = −x b / (x + √(x² + b))
                let x_minus = -x * b / q;
                0.5 * m * (q.ln() - t.exp() / beta * x_minus - 0.5 * t) + n
            } else {
                let sa = alpha.sqrt();
                let q = linear_plus_root(sa, x, b);
                let expo = 1.0 + 1.0 / sa;
                let pre = m * sa.powf(expo) / (alpha - 1.0) * ((1.0 - sa) * 0.5 * t).exp();
                pre * (b / sa + (1.0 + sa) * x * q) / q.powf(expo) + n
            }
        }
    }
}

/// Exponential forward performance `U = −exp(−γx + a/2)`.
pub fn forward_performance(x: f64, a: f64, gamma: f64) -> Result<f64> {
    ensure(a >= 0.0, || {
        format!("trade-off value must be non-negative, got {a}")
    })?;
    ensure(gamma > 0.0, || {
        format!("gamma must be positive, got {gamma}")
    })?;
    Ok(-(-gamma * x + 0.5 * a).exp())
}

/// Optimal cash amount in the stock, `π* = −(λ̂ˢ/σˢ)·u_x/u_xx = (λ̂ˢ/σˢ)·r(x, a)`.
pub fn merton_allocation(
    lambda_hat_s: f64,
    sigma_s: f64,
    x: f64,
    a: f64,
    kind: &UtilityKind,
) -> Result<f64> {
    ensure(sigma_s > 0.0, || {
        format!("sigma_s must be positive, got {sigma_s}")
    })?;
    Ok(lambda_hat_s / sigma_s * risk_tolerance(kind, x, a)?)
}

/// Central-difference residual of `u_t u_xx − ½ u_x²` for any smooth `u`.
pub fn u_pde_residual_fn(u: impl Fn(f64, f64) -> f64, x: f64, t: f64, h: f64) -> f64 {
    let ut = (u(x, t + h) - u(x, t - h)) / (2.0 * h);
    let (um, u0, up) = (u(x - h, t), u(x, t), u(x + h, t));
    let ux = (up - um) / (2.0 * h);
    let uxx = (up - 2.0 * u0 + um) / (h * h);
    ut * uxx - 0.5 * ux * ux
}

/// Central-difference residual of `u_t + ½ r u_x`.
pub fn transport_residual_fn(
    u: impl Fn(f64, f64) -> f64,
    r: impl Fn(f64, f64) -> f64,
    x: f64,
    t: f64,
    h: f64,
) -> f64 {
    let ut = (u(x, t + h) - u(x, t - h)) / (2.0 * h);
    let ux = (u(x + h, t) - u(x - h, t)) / (2.0 * h);
    ut + 0.5 * r(x, t) * ux
}

/// Central-difference residual of `r_t + ½ r² r_xx`.
pub fn fast_diffusion_residual_fn(r: impl Fn(f64, f64) -> f64, x: f64, t: f64, h: f64) -> f64 {
    let rt = (r(x, t + h) - r(x, t - h)) / (2.0 * h);
    let r0 = r(x, t);
    let rxx = (r(x + h, t) - 2.0 * r0 + r(x - h, t)) / (h * h);
    rt + 0.5 * r0 * r0 * rxx
}

/// Central-difference residual of `γ_t − ½ (1/γ)_xx`.
pub fn risk_aversion_residual_fn(g: impl Fn(f64, f64) -> f64, x: f64, t: f64, h: f64) -> f64 {
    let gt = (g(x, t + h) - g(x, t - h)) / (2.0 * h);
    let inv = |x: f64| 1.0 / g(x, t);
    let inv_xx = (inv(x + h) - 2.0 * inv(x) + inv(x - h)) / (h * h);
    gt - 0.5 * inv_xx
}

fn check_stencil(kind: &UtilityKind, x: f64, t: f64, h: f64) -> Result<()> {
    kind.validate()?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    if t - h < 0.0 {
        return Err(Error::Stencil(format!(
            "time stencil [{}, {}] leaves t ≥ 0",
            t - h,
            t + h
        )));
    }
    if let Some(lb) = kind.open_lower_bound() {
        if x - h <= lb {
            return Err(Error::Stencil(format!(
                "wealth stencil reaches {} at or below {lb}",
                x - h
            )));
        }
    }
    kind.check_domain(x)
}

/// Default finite-difference step `10⁻⁴·max(1, |x|)`.
pub fn default_step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Residual of the utility equation for a family member.
pub fn u_pde_residual(kind: &UtilityKind, x: f64, t: f64, h: f64) -> Result<f64> {
    check_stencil(kind, x, t, h)?;
    Ok(u_pde_residual_fn(
        |x, t| utility_unchecked(kind, x, t),
        x,
        t,
        h,
    ))
}

/// Residual of the transport equation for a family member.
pub fn transport_residual(kind: &UtilityKind, x: f64, t: f64, h: f64) -> Result<f64> {
    check_stencil(kind, x, t, h)?;
    let r0 = risk_tolerance(kind, x, t)?;
    Ok(transport_residual_fn(
        |x, t| utility_unchecked(kind, x, t),
        |_, _| r0,
        x,
        t,
        h,
    ))
}

/// Residual of the fast-diffusion equation for a family member's risk tolerance.
pub fn fast_diffusion_residual(kind: &UtilityKind, x: f64, t: f64, h: f64) -> Result<f64> {
    check_stencil(kind, x, t, h)?;
    Ok(fast_diffusion_residual_fn(
        |x, t| tolerance_unchecked(kind, x, t),
        x,
        t,
        h,
    ))
}

/// Residual of the risk-aversion equation for a family member.
pub fn risk_aversion_residual(kind: &UtilityKind, x: f64, t: f64, h: f64) -> Result<f64> {
    check_stencil(kind, x, t, h)?;
    Ok(risk_aversion_residual_fn(
        |x, t| 1.0 / tolerance_unchecked(kind, x, t),
        x,
        t,
        h,
    ))
}

fn tolerance_unchecked(kind: &UtilityKind, x: f64, t: f64) -> f64 {
    match *kind {
        UtilityKind::Exponential { beta } => beta.sqrt(),
        UtilityKind::Power { alpha } => alpha.sqrt() * x,
        UtilityKind::Logarithmic => x,
        UtilityKind::General { alpha, beta, .. } => {
            (alpha * x * x + beta * (-alpha * t).exp()).sqrt()
        }
    }
}

/// Step used by [`utility_by_characteristics`].
pub const CHARACTERISTIC_STEP: f64 = 1e-3;

/// Reconstructs `u(x, t)` from the risk tolerance and the initial utility by
/// the method of characteristics.
///
/// The transport equation keeps `u` constant along `dx/dt = ½ r(x, t)`, so
/// the characteristic through `(x, t)` is followed back to `t = 0` with the
/// classical fourth-order Runge–Kutta rule and `u(x, t) = u(x₀, 0)`.
/// Intended as an independent cross-check of the closed forms.
pub fn utility_by_characteristics(kind: &UtilityKind, x: f64, t: f64, dt: f64) -> Result<f64> {
    kind.validate()?;
    kind.check_domain(x)?;
    ensure(t >= 0.0 && dt > 0.0, || {
        "need t ≥ 0 and a positive step".into()
    })?;
    let f = |x: f64, t: f64| 0.5 * tolerance_unchecked(kind, x, t);
    let mut xc = x;
    let mut tc = t;
    while tc > 0.0 {
        let h = -dt.min(tc);
        let k1 = f(xc, tc);
        let k2 = f(xc + 0.5 * h * k1, tc + 0.5 * h);
        let k3 = f(xc + 0.5 * h * k2, tc + 0.5 * h);
        let k4 = f(xc + h * k3, tc + h);
        xc += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        tc += h;
        if tc.abs() < 1e-15 {
            tc = 0.0;
        }
    }
    kind.check_domain(xc)?;
    Ok(utility_unchecked(kind, xc, 0.0))
}

/// One row of the utility table artifact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilityRow {
    /// Wealth.
    pub x: f64,
    /// Time argument (trade-off clock).
    pub t: f64,
    /// Utility value.
    pub u: f64,
    /// Local risk tolerance.
    pub r: f64,
    /// Local risk aversion.
    pub gamma: f64,
}

/// Tabulates `(x, t, u, r, γ)` on a product grid.
pub fn utility_table(kind: &UtilityKind, xs: &[f64], ts: &[f64]) -> Result<Vec<UtilityRow>> {
    let mut rows = Vec::with_capacity(xs.len() * ts.len());
    for &t in ts {
        for &x in xs {
            let r = risk_tolerance(kind, x, t)?;
            rows.push(UtilityRow {
                x,
                t,
                u: utility(kind, x, t)?,
                r,
                gamma: if r > 0.0 { 1.0 / r } else { f64::INFINITY },
            });
        }
    }
    Ok(rows)
}

/// Writes the utility table as CSV with columns `x,t,u,r,gamma`.
pub fn write_utility_csv<W: Write>(rows: &[UtilityRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "t", "u", "r", "gamma"])?;
    for r in rows {
        w.serialize((r.x, r.t, r.u, r.r, r.gamma))?;
    }
    w.flush()?;
    Ok(())
}
