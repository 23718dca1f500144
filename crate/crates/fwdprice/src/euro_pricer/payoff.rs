//! Claim pay-offs `C(y)` on the non-traded asset.
//!
//! Every supported pay-off is continuous and piecewise linear in `y`, so it
//! is stored internally as `a + b·y + Σ wᵢ (y − kᵢ)⁺`. That single form
//! gives exact log-normal expectations and deltas (used by the naive hedge
//! and the full-information closed forms) and the kink locations needed to
//! split quadratures.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::norm_cdf;

/// Pay-off specification as configured by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    /// `(K − y)⁺`.
    Put {
        /// Strike.
        strike: f64,
    },
    /// `min((y − K)⁺, cap)`; without a cap the pay-off is unbounded and its
    /// exponential moments are infinite.
    Call {
        /// Strike.
        strike: f64,
        /// Optional upper bound on the pay-off.
        #[serde(default)]
        cap: Option<f64>,
    },
    /// Linear interpolation through `(y, C)` points, flat outside the table,
    /// optionally clamped at `cap`.
    Tabulated {
        /// Points `[y, C]` with strictly increasing `y ≥ 0` and `C ≥ 0`.
        points: Vec<[f64; 2]>,
        /// Optional upper bound on the pay-off.
        #[serde(default)]
        cap: Option<f64>,
    },
}

impl PayoffSpec {
    /// The identically zero pay-off.
    pub fn zero() -> Self {
        PayoffSpec::Tabulated {
            points: vec![[1.0, 0.0]],
            cap: None,
        }
    }

    /// The constant pay-off `C ≡ k`.
    pub fn constant(k: f64) -> Self {
        PayoffSpec::Tabulated {
            points: vec![[1.0, k]],
            cap: None,
        }
    }

    /// Checks the invariants and builds the piecewise-linear representation.
    pub fn piecewise(&self) -> Result<PiecewiseLinear> {
        match self {
            PayoffSpec::Put { strike } => {
                ensure(*strike > 0.0 && strike.is_finite(), || {
                    format!("strike must be positive, got {strike}")
                })?;
                Ok(PiecewiseLinear {
                    a: *strike,
                    b: -1.0,
                    kinks: vec![(*strike, 1.0)],
                })
            }
            PayoffSpec::Call { strike, cap } => {
                ensure(*strike > 0.0 && strike.is_finite(), || {
                    format!("strike must be positive, got {strike}")
                })?;
                let mut kinks = vec![(*strike, 1.0)];
                if let Some(c) = cap {
                    ensure(*c > 0.0 && c.is_finite(), || {
                        format!("cap must be positive, got {c}")
                    })?;
                    kinks.push((strike + c, -1.0));
                }
                Ok(PiecewiseLinear {
                    a: 0.0,
                    b: 0.0,
                    kinks,
                })
            }
            PayoffSpec::Tabulated { points, cap } => {
                ensure(!points.is_empty(), || {
                    "tabulated pay-off needs at least one point".into()
                })?;
                ensure(
                    points.iter().all(|p| {
                        p[0] >= 0.0 && p[1] >= 0.0 && p[0].is_finite() && p[1].is_finite()
                    }),
                    || "tabulated points need y ≥ 0 and C ≥ 0".into(),
                )?;
                ensure(points.windows(2).all(|w| w[1][0] > w[0][0]), || {
                    "tabulated y values must be strictly increasing".into()
                })?;
                let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
                if let Some(c) = cap {
                    ensure(*c >= 0.0 && c.is_finite(), || {
                        format!("cap must be non-negative, got {c}")
                    })?;
                    pts = clamp_polyline(&pts, *c);
                }
                Ok(PiecewiseLinear::from_points(&pts))
            }
        }
    }
}

/// Clamps a polyline at `cap`, inserting the crossing points.
pub fn clamp_polyline(pts: &[(f64, f64)], cap: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(pts.len() + 2);
    for (i, &(y, v)) in pts.iter().enumerate() {
        if i > 0 {
            let (y0, v0) = pts[i - 1];
            if (v0 - cap) * (v - cap) < 0.0 {
                let w = (cap - v0) / (v - v0);
                out.push((y0 + w * (y - y0), cap));
            }
        }
        out.push((y, v.min(cap)));
    }
    out
}

/// `C(y) = a + b·y + Σ wᵢ (y − kᵢ)⁺` on `y > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    /// Constant term.
    pub a: f64,
    /// Linear term.
    pub b: f64,
    /// Kinks `(kᵢ, wᵢ)` with `kᵢ > 0`, sorted by location.
    pub kinks: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    fn from_points(pts: &[(f64, f64)]) -> Self {
        let mut a = pts[0].1;
        let mut b = 0.0;
        let mut kinks = Vec::new();
        let mut slope_left = 0.0;
        for i in 0..pts.len() {
            let slope_right = if i + 1 < pts.len() {
                (pts[i + 1].1 - pts[i].1) / (pts[i + 1].0 - pts[i].0)
            } else {
                0.0
            };
            let w = slope_right - slope_left;
            if w != 0.0 {
                if pts[i].0 > 0.0 {
                    kinks.push((pts[i].0, w));
                } else {
                    // A kink at y = 0 is a plain linear term on y > 0.
                    b += w;
                    a -= w * pts[i].0;
                }
            }
            slope_left = slope_right;
        }
        Self { a, b, kinks }
    }

    /// Pay-off value.
    ///
    /// Evaluated along the segment that contains `y`, anchored at its left
    /// kink, so that flat segments are reproduced exactly (a put is exactly
    /// zero above its strike and exactly `K − y` below it).
    pub fn value(&self, y: f64) -> f64 {
        let (mut y0, mut v0, mut slope) = (0.0, self.a, self.b);
        for &(k, w) in self.kinks.iter().take_while(|&&(k, _)| k <= y) {
            v0 += slope * (k - y0);
            y0 = k;
            slope += w;
        }
        let v = v0 + slope * (y - y0);
        // Remove negative rounding noise so that C ≥ 0 holds exactly.
        if v < 0.0 && v > -1e-12 * (1.0 + self.a.abs()) {
            0.0
        } else {
            v
        }
    }

    /// Right derivative `C'(y)`.
    pub fn slope(&self, y: f64) -> f64 {
        self.b
            + self
                .kinks
                .iter()
                .filter(|&&(k, _)| y >= k)
                .map(|&(_, w)| w)
                .sum::<f64>()
    }

    /// Slope as `y → ∞`.
    pub fn terminal_slope(&self) -> f64 {
        self.b + self.kinks.iter().map(|&(_, w)| w).sum::<f64>()
    }

    /// Whether the pay-off is bounded on `y > 0`.
    pub fn is_bounded(&self) -> bool {
        self.terminal_slope().abs() < 1e-12
    }

    /// Supremum over `y > 0` (infinite for unbounded pay-offs).
    pub fn sup(&self) -> f64 {
        if !self.is_bounded() {
            return f64::INFINITY;
        }
        let mut m = self.a.max(0.0);
        for &(k, _) in &self.kinks {
            m = m.max(self.value(k));
        }
        m
    }

    /// Whether the pay-off is non-increasing (put type), non-decreasing
    /// (call type), or neither.
    pub fn monotonicity(&self) -> Monotonicity {
        let mut slopes = vec![self.b];
        let mut acc = self.b;
        for &(_, w) in &self.kinks {
            acc += w;
            slopes.push(acc);
        }
        let tol = 1e-12;
        if slopes.iter().all(|&s| s.abs() <= tol) {
            Monotonicity::Constant
        } else if slopes.iter().all(|&s| s <= tol) {
            Monotonicity::NonIncreasing
        } else if slopes.iter().all(|&s| s >= -tol) {
            Monotonicity::NonDecreasing
        } else {
            Monotonicity::None
        }
    }

    /// `E[C(Y_τ)]` for `Y_τ = y·exp((μ − σ²/2)τ + σWτ)`.
    pub fn lognormal_expectation(&self, y: f64, mu: f64, sigma: f64, tau: f64) -> f64 {
        if tau <= 0.0 || sigma == 0.0 {
            return self.value(y * (mu * tau.max(0.0)).exp());
        }
        let fwd = y * (mu * tau).exp();
        let sd = sigma * tau.sqrt();
        let calls: f64 = self
            .kinks
            .iter()
            .map(|&(k, w)| {
                let d1 = ((fwd / k).ln() + 0.5 * sd * sd) / sd;
                w * (fwd * norm_cdf(d1) - k * norm_cdf(d1 - sd))
            })
            .sum();
        self.a + self.b * fwd + calls
    }

    /// `∂/∂y E[C(Y_τ)]` for the same law as [`Self::lognormal_expectation`].
    pub fn lognormal_delta(&self, y: f64, mu: f64, sigma: f64, tau: f64) -> f64 {
        let growth = (mu * tau.max(0.0)).exp();
        if tau <= 0.0 || sigma == 0.0 {
            return growth * self.slope(y * growth);
        }
        let fwd = y * growth;
        let sd = sigma * tau.sqrt();
        let calls: f64 = self
            .kinks
            .iter()
            .map(|&(k, w)| {
                let d1 = ((fwd / k).ln() + 0.5 * sd * sd) / sd;
                w * norm_cdf(d1)
            })
            .sum();
        growth * (self.b + calls)
    }
}

/// Monotonicity class of a pay-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    /// Constant pay-off.
    Constant,
    /// Put type.
    NonIncreasing,
    /// Call type.
    NonDecreasing,
    /// Neither.
    None,
}

impl PiecewiseLinear {
    /// Error unless the pay-off is bounded.
    pub fn require_bounded(&self) -> Result<()> {
        if self.is_bounded() {
            Ok(())
        } else {
            Err(Error::Divergence(
                "pay-off grows linearly; its exponential moments are infinite (configure a cap)"
                    .into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn representations_match_definitions() {
        let put = PayoffSpec::Put { strike: 100.0 }.piecewise().unwrap();
        assert_eq!(put.value(80.0), 20.0);
        assert_eq!(put.value(120.0), 0.0);
        let call = PayoffSpec::Call {
            strike: 100.0,
            cap: Some(30.0),
        }
        .piecewise()
        .unwrap();
        assert_eq!(call.value(90.0), 0.0);
        assert_eq!(call.value(110.0), 10.0);
        assert_eq!(call.value(200.0), 30.0);
        let tab = PayoffSpec::Tabulated {
            points: vec![[50.0, 10.0], [100.0, 0.0], [150.0, 20.0]],
            cap: Some(15.0),
        }
        .piecewise()
        .unwrap();
        for (y, c) in [
            (10.0, 10.0),
            (75.0, 5.0),
            (100.0, 0.0),
            (125.0, 10.0),
            (137.5, 15.0),
            (500.0, 15.0),
        ] {
            assert!(
                (tab.value(y) - c).abs() < 1e-12,
                "C({y}) = {} ≠ {c}",
                tab.value(y)
            );
        }
        assert_eq!(
            PayoffSpec::constant(7.0).piecewise().unwrap().value(3.0),
            7.0
        );
        let ident = PayoffSpec::Tabulated {
            points: vec![[0.0, 0.0], [1e4, 1e4]],
            cap: None,
        }
        .piecewise()
        .unwrap();
        assert_eq!(ident.value(123.0), 123.0);
    }

    #[test]
    fn classification() {
        let put = PayoffSpec::Put { strike: 1.0 }.piecewise().unwrap();
        assert_eq!(put.monotonicity(), Monotonicity::NonIncreasing);
        assert!(put.is_bounded());
        assert_eq!(put.sup(), 1.0);
        let call = PayoffSpec::Call {
            strike: 1.0,
            cap: None,
        }
        .piecewise()
        .unwrap();
        assert_eq!(call.monotonicity(), Monotonicity::NonDecreasing);
        assert!(call.require_bounded().is_err());
        assert_eq!(
            PayoffSpec::zero().piecewise().unwrap().monotonicity(),
            Monotonicity::Constant
        );
    }

    #[test]
    fn lognormal_expectation_is_put_call_consistent() {
        let put = PayoffSpec::Put { strike: 100.0 }.piecewise().unwrap();
        let call = PayoffSpec::Call {
            strike: 100.0,
            cap: None,
        }
        .piecewise()
        .unwrap();
        let (y, mu, s, tau) = (95.0, 0.03, 0.2, 1.5);
        let parity =
            call.lognormal_expectation(y, mu, s, tau) - put.lognormal_expectation(y, mu, s, tau);
        assert!((parity - (y * (mu * tau).exp() - 100.0)).abs() < 1e-10);
        let h = 1e-4;
        let fd = (put.lognormal_expectation(y + h, mu, s, tau)
            - put.lognormal_expectation(y - h, mu, s, tau))
            / (2.0 * h);
        assert!((fd - put.lognormal_delta(y, mu, s, tau)).abs() < 1e-8);
    }
}
