//! Market parameters, exact simulation of the two correlated geometric
//! Brownian motions under the physical measure, and the elementary
//! statistical helpers used to argue about drift uncertainty.
//!
//! The traded stock `S` and the non-traded asset `Y` follow
//!
//! ```text
//! dS = σˢ S (λˢ dt + dWˢ),   dY = σʸ Y (λʸ dt + dWʸ),   Wʸ = ρ Wˢ + √(1−ρ²) W⊥
//! ```
//!
//! with a zero riskless rate. Paths are generated with the exact log-normal
//! transition, so prices carry no time-discretisation error.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::filter::PriorParams;

/// Parameters of the full-information basis-risk market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Volatility of the traded stock (per √year, > 0).
    pub sigma_s: f64,
    /// Volatility of the non-traded asset (per √year, > 0).
    pub sigma_y: f64,
    /// Instantaneous correlation of the two drivers, in `[-1, 1]`.
    pub rho: f64,
    /// True Sharpe ratio of the stock (per √year).
    pub lambda_s_true: f64,
    /// True Sharpe ratio of the non-traded asset (per √year).
    pub lambda_y_true: f64,
    /// Initial stock price (> 0).
    pub s0: f64,
    /// Initial non-traded asset price (> 0).
    pub y0: f64,
    /// Riskless rate; the model is formulated in discounted units and
    /// requires exactly zero.
    #[serde(default)]
    pub rate: f64,
}

impl MarketParams {
    /// Builds validated parameters with a zero rate.
    pub fn new(
        sigma_s: f64,
        sigma_y: f64,
        rho: f64,
        lambda_s_true: f64,
        lambda_y_true: f64,
        s0: f64,
        y0: f64,
    ) -> Result<Self> {
        let p = Self {
            sigma_s,
            sigma_y,
            rho,
            lambda_s_true,
            lambda_y_true,
            s0,
            y0,
            rate: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks the invariants of the type.
    ///
    /// `sigma_s = 0` is tolerated as a degenerate simulation input; the
    /// pricing routines reject it separately where they divide by it.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_s,
            self.sigma_y,
            self.rho,
            self.lambda_s_true,
            self.lambda_y_true,
            self.s0,
            self.y0,
            self.rate,
        ];
        ensure(all.iter().all(|v| v.is_finite()), || {
            "market parameters must be finite".into()
        })?;
        ensure(self.sigma_s >= 0.0, || {
            format!("sigma_s must be non-negative, got {}", self.sigma_s)
        })?;
        ensure(self.sigma_y > 0.0, || {
            format!("sigma_y must be positive, got {}", self.sigma_y)
        })?;
        ensure(self.rho.abs() <= 1.0, || {
            format!("rho must lie in [-1, 1], got {}", self.rho)
        })?;
        ensure(self.s0 > 0.0 && self.y0 > 0.0, || {
            "initial prices must be positive".into()
        })?;
        ensure(self.rate == 0.0, || {
            format!("rate must be 0 (discounted units), got {}", self.rate)
        })?;
        Ok(())
    }

    /// Checks the stricter invariants needed by the pricing routines.
    pub fn validate_for_pricing(&self) -> Result<()> {
        self.validate()?;
        ensure(self.sigma_s > 0.0, || "pricing requires sigma_s > 0".into())
    }

    /// `√(1−ρ²)`, the weight of the unhedgeable driver.
    pub fn rho_perp(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }
}

/// Source of the true Sharpe ratios used to drive a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSource {
    /// Use `lambda_s_true`, `lambda_y_true` from [`MarketParams`] on every path.
    Fixed,
    /// Draw `(λˢ, λʸ)` per path from the Gaussian prior, as the filter assumes.
    Prior(PriorParams),
}

/// One simulated path of `(S, Y)` with the Brownian increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    /// Index of the path; selects the random substream.
    pub path_id: u64,
    /// Master seed of the simulation.
    pub seed: u64,
    /// Strictly increasing time grid, starting at 0.
    pub times: Vec<f64>,
    /// Stock prices on `times`.
    pub s: Vec<f64>,
    /// Non-traded asset prices on `times`.
    pub y: Vec<f64>,
    /// Increments of `Wˢ`; `w_s[k]` drives the step from `times[k]` to
    /// `times[k+1]`, and `w_s[len-1]` is 0 so that all series share a length.
    pub w_s: Vec<f64>,
    /// Increments of `W⊥`, laid out as `w_s`.
    pub w_perp: Vec<f64>,
    /// Sharpe ratio of `S` that drove this path.
    pub lambda_s: f64,
    /// Sharpe ratio of `Y` that drove this path.
    pub lambda_y: f64,
}

impl PathBundle {
    /// Increments of `Wʸ = ρWˢ + √(1−ρ²)W⊥` reconstructed from the stored drivers.
    pub fn w_y(&self, rho: f64) -> Vec<f64> {
        let rp = (1.0 - rho * rho).max(0.0).sqrt();
        self.w_s
            .iter()
            .zip(&self.w_perp)
            .map(|(a, b)| rho * a + rp * b)
            .collect()
    }

    /// Horizon of the path.
    pub fn horizon(&self) -> f64 {
        *self
            .times
            .last()
            .expect("paths have at least one time point")
    }
}

/// Random generator for one path: a ChaCha8 stream selected by the path id,
/// so any partition of paths across threads reproduces the same numbers.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Uniform time grid with `n_steps` steps on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, n_steps: usize) -> Result<Vec<f64>> {
    ensure(horizon > 0.0 && horizon.is_finite(), || {
        format!("horizon must be positive, got {horizon}")
    })?;
    ensure(n_steps >= 1, || "n_steps must be at least 1".into())?;
    Ok((0..=n_steps)
        .map(|k| horizon * k as f64 / n_steps as f64)
        .collect())
}

/// Simulates `n_paths` paths on a uniform grid with the true drifts of `params`.
pub fn simulate_paths(
    params: &MarketParams,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathBundle>> {
    let times = uniform_grid(horizon, n_steps)?;
    simulate_paths_on_grid(params, &times, n_paths, seed, DriftSource::Fixed)
}

/// Simulates `n_paths` paths on an arbitrary strictly increasing grid
/// starting at 0.
pub fn simulate_paths_on_grid(
    params: &MarketParams,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    drift: DriftSource,
) -> Result<Vec<PathBundle>> {
    params.validate()?;
    ensure(times.len() >= 2, || {
        "time grid needs at least two points".into()
    })?;
    ensure(times[0] == 0.0, || "time grid must start at 0".into())?;
    ensure(times.windows(2).all(|w| w[1] > w[0]), || {
        "time grid must be strictly increasing".into()
    })?;
    ensure(n_paths >= 1, || "n_paths must be at least 1".into())?;
    if let DriftSource::Prior(prior) = drift {
        prior.validate()?;
    }
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|id| simulate_path(params, times, seed, id, drift))
        .collect())
}

/// Simulates path `path_id` of the stream family `seed`; identical to the
/// corresponding element of [`simulate_paths_on_grid`]. Inputs are assumed
/// validated.
pub(crate) fn simulate_path(
    params: &MarketParams,
    times: &[f64],
    seed: u64,
    path_id: u64,
    drift: DriftSource,
) -> PathBundle {
    let mut rng = path_rng(seed, path_id);
    let (lambda_s, lambda_y) = match drift {
        DriftSource::Fixed => (params.lambda_s_true, params.lambda_y_true),
        DriftSource::Prior(prior) => prior.sample(params.rho, &mut rng),
    };
    let n = times.len();
    let rp = params.rho_perp();
    let (ss, sy) = (params.sigma_s, params.sigma_y);
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w_s = Vec::with_capacity(n);
    let mut w_perp = Vec::with_capacity(n);
    s.push(params.s0);
    y.push(params.y0);
    for k in 0..n - 1 {
        let dt = times[k + 1] - times[k];
        let sq = dt.sqrt();
        let zs: f64 = StandardNormal.sample(&mut rng);
        let zp: f64 = StandardNormal.sample(&mut rng);
        let dws = sq * zs;
        let dwp = sq * zp;
        let dwy = params.rho * dws + rp * dwp;
        s.push(s[k] * (ss * ((lambda_s - 0.5 * ss) * dt + dws)).exp());
        y.push(y[k] * (sy * ((lambda_y - 0.5 * sy) * dt + dwy)).exp());
        w_s.push(dws);
        w_perp.push(dwp);
    }
    w_s.push(0.0);
    w_perp.push(0.0);
    PathBundle {
        path_id,
        seed,
        times: times.to_vec(),
        s,
        y,
        w_s,
        w_perp,
        lambda_s,
        lambda_y,
    }
}

/// Sharpe ratio `(mu − rate)/sigma`.
pub fn sharpe_ratio(mu: f64, rate: f64, sigma: f64) -> Result<f64> {
    ensure(sigma > 0.0, || {
        format!("sigma must be positive, got {sigma}")
    })?;
    Ok((mu - rate) / sigma)
}

/// Years of observation needed before a confidence interval of half-width
/// `half_width` (in Sharpe-ratio units) at normal quantile `z_score`
/// excludes nothing wider: `(z/h)²`.
///
/// The estimator of a Sharpe ratio from `t` years of prices has standard
/// error `1/√t`, independent of sampling frequency.
pub fn years_for_confidence(half_width: f64, z_score: f64) -> Result<f64> {
    ensure(half_width > 0.0 && z_score > 0.0, || {
        "half_width and z_score must be positive".into()
    })?;
    Ok((z_score / half_width).powi(2))
}

/// Realized volatility and correlation estimates of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolCorrEstimate {
    /// Estimated stock volatility.
    pub sigma_s_hat: f64,
    /// Estimated non-traded asset volatility.
    pub sigma_y_hat: f64,
    /// Estimated correlation of log-returns.
    pub rho_hat: f64,
}

/// Realized-variance and realized-covariation estimators over a path.
///
/// The drift is removed as a constant rate fitted across the path, so a path
/// whose log-price moves linearly in time (no diffusion at all) carries zero
/// information and is reported as degenerate. Works on non-uniform grids.
pub fn estimate_vol_corr(bundle: &PathBundle) -> Result<VolCorrEstimate> {
    let n = bundle.times.len();
    ensure(n >= 3, || {
        "need at least three time points (two returns)".into()
    })?;
    ensure(bundle.s.len() == n && bundle.y.len() == n, || {
        "series lengths differ from the time grid".into()
    })?;
    let dts: Vec<f64> = bundle.times.windows(2).map(|w| w[1] - w[0]).collect();
    let rs: Vec<f64> = bundle.s.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let ry: Vec<f64> = bundle.y.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let total: f64 = dts.iter().sum();
    let m = dts.len() as f64;
    let detrend = |r: &[f64]| -> (Vec<f64>, f64) {
        let rate = r.iter().sum::<f64>() / total;
        let raw: f64 = r.iter().map(|x| x * x).sum();
        (
            r.iter().zip(&dts).map(|(x, dt)| x - rate * dt).collect(),
            raw,
        )
    };
    let (es, raw_s) = detrend(&rs);
    let (ey, raw_y) = detrend(&ry);
    let vs: f64 = es.iter().map(|x| x * x).sum();
    let vy: f64 = ey.iter().map(|x| x * x).sum();
    let cov: f64 = es.iter().zip(&ey).map(|(a, b)| a * b).sum();
    // Relative threshold: rounding noise of a perfectly deterministic path.
    let degenerate = |v: f64, raw: f64| v <= 1e-24 * raw || v == 0.0;
    if degenerate(vs, raw_s) || degenerate(vy, raw_y) {
        return Err(Error::EstimationDegenerate(
            "zero realized variance; correlation undefined".into(),
        ));
    }
    // One degree of freedom is spent on the fitted drift rate.
    let scale = m / ((m - 1.0) * total);
    Ok(VolCorrEstimate {
        sigma_s_hat: (vs * scale).sqrt(),
        sigma_y_hat: (vy * scale).sqrt(),
        rho_hat: (cov / (vs * vy).sqrt()).clamp(-1.0, 1.0),
    })
}

/// Writes paths as CSV with columns `path_id,t,S,Y`.
pub fn write_paths_csv<W: Write>(paths: &[PathBundle], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["path_id", "t", "S", "Y"])?;
    for p in paths {
        for k in 0..p.times.len() {
            w.serialize((p.path_id, p.times[k], p.s[k], p.y[k]))?;
        }
    }
    w.flush()?;
    Ok(())
}
