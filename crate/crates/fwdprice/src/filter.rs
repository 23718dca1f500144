//! Two-dimensional Kalman–Bucy filter for the unknown Sharpe ratios.
//!
//! The agent observes prices only. The observation processes
//!
//! ```text
//! ξᵢₜ = (1/σⁱ) log(Pⁱₜ/Pⁱ₀) + σⁱ t / 2 = λⁱ t + Wⁱₜ,     i ∈ {S, Y},
//! ```
//!
//! are linear in the Gaussian signal `Λ = (λˢ, λʸ) ~ N(Λ₀, Σ₀)`, so the
//! conditional law of `Λ` is Gaussian with closed-form mean and covariance.
//! The closed forms are keyed on which asset has the smaller prior
//! variance; with `(i, j)` the (smaller, larger) labels
//!
//! ```text
//! λ̂ⁱ = (λ₀ⁱ + z₀ⁱ ξⁱ)/(1 + z₀ⁱ t)
//! λ̂ʲ = (λ₀ʲ + w₀ ξʲ)/(1 + w₀ t) − ρ [(λ₀ⁱ + w₀ ξⁱ)/(1 + w₀ t) − λ̂ⁱ]
//! w₀ = (z₀ʲ − ρ² z₀ⁱ)/(1 − ρ²)   (w₀ = z₀ⁱ when the variances are equal)
//! ```

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::market_model::{MarketParams, PathBundle};

/// Gaussian prior of the Sharpe-ratio vector.
///
/// The prior covariance is `Σ₀ = [[z0_s, c0], [c0, z0_y]]` with
/// `c0 = ρ·min(z0_s, z0_y)`, which is positive semi-definite whenever
/// `|ρ| ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorParams {
    /// Prior mean of `λˢ`.
    pub lambda0_s: f64,
    /// Prior mean of `λʸ`.
    pub lambda0_y: f64,
    /// Prior variance of `λˢ` (≥ 0; 0 means the value is known).
    pub z0_s: f64,
    /// Prior variance of `λʸ` (≥ 0).
    pub z0_y: f64,
}

impl PriorParams {
    /// A point-mass prior: the drifts are known exactly.
    pub fn known(lambda_s: f64, lambda_y: f64) -> Self {
        Self {
            lambda0_s: lambda_s,
            lambda0_y: lambda_y,
            z0_s: 0.0,
            z0_y: 0.0,
        }
    }

    /// Checks the invariants of the type.
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda0_s, self.lambda0_y, self.z0_s, self.z0_y];
        ensure(all.iter().all(|v| v.is_finite()), || {
            "prior parameters must be finite".into()
        })?;
        ensure(self.z0_s >= 0.0 && self.z0_y >= 0.0, || {
            "prior variances must be non-negative".into()
        })
    }

    /// Prior covariance `c0 = ρ·min(z0_s, z0_y)`.
    pub fn c0(&self, rho: f64) -> f64 {
        rho * self.z0_s.min(self.z0_y)
    }

    /// Draws `(λˢ, λʸ)` from the prior with a Cholesky factor of `Σ₀`.
    pub fn sample<R: Rng + ?Sized>(&self, rho: f64, rng: &mut R) -> (f64, f64) {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        let l11 = self.z0_s.sqrt();
        let l21 = if l11 > 0.0 { self.c0(rho) / l11 } else { 0.0 };
        let l22 = (self.z0_y - l21 * l21).max(0.0).sqrt();
        (self.lambda0_s + l11 * a, self.lambda0_y + l21 * a + l22 * b)
    }
}

/// Filtered state at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterState {
    /// Time.
    pub t: f64,
    /// Observation `ξˢ`.
    pub xi_s: f64,
    /// Observation `ξʸ`.
    pub xi_y: f64,
    /// Conditional mean of `λˢ`.
    pub lambda_hat_s: f64,
    /// Conditional mean of `λʸ`.
    pub lambda_hat_y: f64,
    /// Conditional variance of `λˢ`.
    pub z_s: f64,
    /// Conditional variance of `λʸ`.
    pub z_y: f64,
    /// Auxiliary variance `wₜ = w₀/(1 + w₀t)`.
    pub w: f64,
    /// Conditional covariance of `λˢ` and `λʸ`.
    pub c: f64,
    /// Accumulated mean-variance trade-off `∫₀ᵗ (λ̂ˢ)² du`; zero unless the
    /// state comes from [`filter_path`].
    pub a: f64,
}

/// Observations `(ξˢ, ξʸ)` from prices at time `t`.
pub fn observation_from_prices(
    t: f64,
    s: f64,
    y: f64,
    params: &MarketParams,
) -> Result<(f64, f64)> {
    ensure(s > 0.0 && y > 0.0, || {
        format!("prices must be positive, got s={s}, y={y}")
    })?;
    ensure(t >= 0.0, || format!("time must be non-negative, got {t}"))?;
    ensure(params.sigma_s > 0.0, || {
        "observations need sigma_s > 0".into()
    })?;
    Ok((
        observation(t, s, params.s0, params.sigma_s),
        observation(t, y, params.y0, params.sigma_y),
    ))
}

fn observation(t: f64, p: f64, p0: f64, sigma: f64) -> f64 {
    (p / p0).ln() / sigma + 0.5 * sigma * t
}

/// Conditional variance `z0/(1 + z0·t)` of a one-dimensional filter.
pub fn covariance_decay(t: f64, z0: f64) -> f64 {
    z0 / (1.0 + z0 * t)
}

/// Precomputed closed-form filter for one prior and correlation.
///
/// Evaluating the filter inside PDE and simulation loops only needs the
/// regime split and `w₀` once.
#[derive(Debug, Clone, Copy)]
pub struct KalmanBucy {
    prior: PriorParams,
    rho: f64,
    /// True when `S` carries the smaller (or equal) prior variance.
    s_is_i: bool,
    w0: f64,
}

impl KalmanBucy {
    /// Builds the filter; `|ρ| = 1` with unequal prior variances is outside
    /// the regime of the closed forms and is rejected.
    pub fn new(prior: PriorParams, rho: f64) -> Result<Self> {
        prior.validate()?;
        ensure(rho.abs() <= 1.0, || {
            format!("rho must lie in [-1, 1], got {rho}")
        })?;
        let s_is_i = prior.z0_s <= prior.z0_y;
        let (zi, zj) = if s_is_i {
            (prior.z0_s, prior.z0_y)
        } else {
            (prior.z0_y, prior.z0_s)
        };
        let w0 = if zi == zj {
            zi
        } else if rho.abs() == 1.0 {
            return Err(Error::UnsupportedRegime(
                "|rho| = 1 with unequal prior variances is not covered by the closed-form filter"
                    .into(),
            ));
        } else {
            (zj - rho * rho * zi) / (1.0 - rho * rho)
        };
        Ok(Self {
            prior,
            rho,
            s_is_i,
            w0,
        })
    }

    /// The prior the filter was built with.
    pub fn prior(&self) -> &PriorParams {
        &self.prior
    }

    /// Conditional means `(λ̂ˢ, λ̂ʸ)` given the observations at time `t`.
    pub fn means(&self, t: f64, xi_s: f64, xi_y: f64) -> (f64, f64) {
        let p = &self.prior;
        let (li, lj, zi, xi, xj) = if self.s_is_i {
            (p.lambda0_s, p.lambda0_y, p.z0_s, xi_s, xi_y)
        } else {
            (p.lambda0_y, p.lambda0_s, p.z0_y, xi_y, xi_s)
        };
        let w0 = self.w0;
        let hat_i = (li + zi * xi) / (1.0 + zi * t);
        let hat_j =
            (lj + w0 * xj) / (1.0 + w0 * t) - self.rho * ((li + w0 * xi) / (1.0 + w0 * t) - hat_i);
        if self.s_is_i {
            (hat_i, hat_j)
        } else {
            (hat_j, hat_i)
        }
    }

    /// Conditional covariance entries `(z_s, z_y, w, c)` at time `t`.
    pub fn covariances(&self, t: f64) -> (f64, f64, f64, f64) {
        let zi0 = if self.s_is_i {
            self.prior.z0_s
        } else {
            self.prior.z0_y
        };
        let zi = covariance_decay(t, zi0);
        let w = covariance_decay(t, self.w0);
        let zj = self.rho * self.rho * zi + (1.0 - self.rho * self.rho) * w;
        let c = self.rho * zi;
        if self.s_is_i {
            (zi, zj, w, c)
        } else {
            (zj, zi, w, c)
        }
    }

    /// Full filtered state (with `a = 0`).
    pub fn state(&self, t: f64, xi_s: f64, xi_y: f64) -> FilterState {
        let (lambda_hat_s, lambda_hat_y) = self.means(t, xi_s, xi_y);
        let (z_s, z_y, w, c) = self.covariances(t);
        FilterState {
            t,
            xi_s,
            xi_y,
            lambda_hat_s,
            lambda_hat_y,
            z_s,
            z_y,
            w,
            c,
            a: 0.0,
        }
    }
}

/// Closed-form filter estimates at time `t` from the observations.
pub fn filter_estimates(
    t: f64,
    xi_s: f64,
    xi_y: f64,
    prior: &PriorParams,
    rho: f64,
) -> Result<FilterState> {
    ensure(t >= 0.0, || format!("time must be non-negative, got {t}"))?;
    Ok(KalmanBucy::new(*prior, rho)?.state(t, xi_s, xi_y))
}

/// Trapezoidal accumulation of `∫₀ᵗ (λ̂ˢ)² du` along a path.
pub fn accumulate_tradeoff(times: &[f64], lambda_hat_s: &[f64]) -> Result<Vec<f64>> {
    ensure(times.len() == lambda_hat_s.len(), || {
        "times and estimates differ in length".into()
    })?;
    ensure(times.windows(2).all(|w| w[1] > w[0]), || {
        "time grid must be strictly increasing".into()
    })?;
    let mut a = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    if !times.is_empty() {
        a.push(0.0);
    }
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        acc += 0.5 * dt * (lambda_hat_s[k - 1].powi(2) + lambda_hat_s[k].powi(2));
        a.push(acc);
    }
    Ok(a)
}

/// Filtered Sharpe ratios as functions of the state `(t, s, y)`.
pub fn mpr_fields(
    t: f64,
    s: f64,
    y: f64,
    prior: &PriorParams,
    params: &MarketParams,
) -> Result<(f64, f64)> {
    let (xs, xy) = observation_from_prices(t, s, y, params)?;
    Ok(KalmanBucy::new(*prior, params.rho)?.means(t, xs, xy))
}

/// Runs the filter along a simulated path, including the trade-off clock.
pub fn filter_path(
    bundle: &PathBundle,
    prior: &PriorParams,
    params: &MarketParams,
) -> Result<Vec<FilterState>> {
    let kb = KalmanBucy::new(*prior, params.rho)?;
    let mut states = Vec::with_capacity(bundle.times.len());
    for k in 0..bundle.times.len() {
        let (xs, xy) = observation_from_prices(bundle.times[k], bundle.s[k], bundle.y[k], params)?;
        states.push(kb.state(bundle.times[k], xs, xy));
    }
    let hats: Vec<f64> = states.iter().map(|s| s.lambda_hat_s).collect();
    let a = accumulate_tradeoff(&bundle.times, &hats)?;
    for (st, ak) in states.iter_mut().zip(a) {
        st.a = ak;
    }
    Ok(states)
}

/// Writes filter traces as CSV with columns
/// `t,xi_s,xi_y,lambda_hat_s,lambda_hat_y,z_s,z_y,w,c,a`.
pub fn write_filter_csv<W: Write>(states: &[FilterState], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t",
        "xi_s",
        "xi_y",
        "lambda_hat_s",
        "lambda_hat_y",
        "z_s",
        "z_y",
        "w",
        "c",
        "a",
    ])?;
    for s in states {
        w.serialize((
            s.t,
            s.xi_s,
            s.xi_y,
            s.lambda_hat_s,
            s.lambda_hat_y,
            s.z_s,
            s.z_y,
            s.w,
            s.c,
            s.a,
        ))?;
    }
    w.flush()?;
    Ok(())
}
