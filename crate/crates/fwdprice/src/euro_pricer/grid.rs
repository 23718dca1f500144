//! Discretisation inputs shared by the European and American solvers: the
//! grid, the information mode, the solver settings, and the coefficients of
//! the minimal-martingale-measure generator.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::filter::{observation_from_prices, KalmanBucy, PriorParams};
use crate::market_model::MarketParams;

/// Spatial and temporal grid of a PDE solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Lower stock bound (> 0).
    pub s_min: f64,
    /// Upper stock bound.
    pub s_max: f64,
    /// Lower non-traded asset bound (> 0).
    pub y_min: f64,
    /// Upper non-traded asset bound.
    pub y_max: f64,
    /// Stock nodes (≥ 3; unused in full-information mode).
    pub n_s: usize,
    /// Non-traded asset nodes (≥ 3).
    pub n_y: usize,
    /// Time steps (≥ 1).
    pub n_t: usize,
    /// Maturity `T` of the claim; the surface covers `[0, T]`.
    pub horizon: f64,
    /// Uniform spacing in log-prices (default) rather than in prices.
    #[serde(default = "yes")]
    pub log_space: bool,
}

fn yes() -> bool {
    true
}

impl GridSpec {
    /// Log-price grid centred on the initial prices, spanning `±n_sd`
    /// terminal standard deviations. With an odd node count the initial
    /// price is a node.
    pub fn centered(
        params: &MarketParams,
        horizon: f64,
        n_s: usize,
        n_y: usize,
        n_t: usize,
        n_sd: f64,
    ) -> Self {
        let ws = n_sd * params.sigma_s * horizon.sqrt();
        let wy = n_sd * params.sigma_y * horizon.sqrt();
        Self {
            s_min: params.s0 * (-ws).exp(),
            s_max: params.s0 * ws.exp(),
            y_min: params.y0 * (-wy).exp(),
            y_max: params.y0 * wy.exp(),
            n_s,
            n_y,
            n_t,
            horizon,
            log_space: true,
        }
    }

    /// Checks the invariants of the type. `need_s` is false in
    /// full-information mode, where the stock dimension collapses.
    pub fn validate(&self, need_s: bool) -> Result<()> {
        ensure(self.horizon > 0.0 && self.horizon.is_finite(), || {
            format!("horizon must be positive, got {}", self.horizon)
        })?;
        ensure(
            self.y_min > 0.0 && self.y_max > self.y_min && self.y_max.is_finite(),
            || "need 0 < y_min < y_max".into(),
        )?;
        ensure(self.n_y >= 3, || {
            format!("n_y must be at least 3, got {}", self.n_y)
        })?;
        ensure(self.n_t >= 1, || "n_t must be at least 1".into())?;
        if need_s {
            ensure(
                self.s_min > 0.0 && self.s_max > self.s_min && self.s_max.is_finite(),
                || "need 0 < s_min < s_max".into(),
            )?;
            ensure(self.n_s >= 3, || {
                format!("n_s must be at least 3, got {}", self.n_s)
            })?;
        }
        Ok(())
    }

    /// Time levels `0 = t₀ < … < t_{n_t} = T`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_t)
            .map(|k| self.horizon * k as f64 / self.n_t as f64)
            .collect()
    }
}

/// One spatial axis: nodes uniform in the coordinate (log-price or price).
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    /// Coordinate values of the nodes.
    pub coords: Vec<f64>,
    /// Node prices.
    pub prices: Vec<f64>,
    /// Coordinate spacing.
    pub h: f64,
    /// Whether the coordinate is the log-price.
    pub log: bool,
}

impl Axis {
    /// Builds an axis with `n` nodes on `[lo, hi]`.
    pub fn new(lo: f64, hi: f64, n: usize, log: bool) -> Self {
        let (a, b) = if log { (lo.ln(), hi.ln()) } else { (lo, hi) };
        let h = (b - a) / (n - 1) as f64;
        let coords: Vec<f64> = (0..n)
            .map(|k| if k == n - 1 { b } else { a + h * k as f64 })
            .collect();
        let prices = coords
            .iter()
            .map(|&c| if log { c.exp() } else { c })
            .collect();
        Self {
            coords,
            prices,
            h,
            log,
        }
    }

    /// A single-node axis (collapsed dimension).
    pub fn point(price: f64, log: bool) -> Self {
        Self {
            coords: vec![if log { price.ln() } else { price }],
            prices: vec![price],
            h: 1.0,
            log,
        }
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    /// Whether the axis is empty.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Coordinate of a price.
    pub fn coord(&self, price: f64) -> f64 {
        if self.log {
            price.ln()
        } else {
            price
        }
    }

    /// `d(coordinate)/d(price)` at a price.
    pub fn jacobian(&self, price: f64) -> f64 {
        if self.log {
            1.0 / price
        } else {
            1.0
        }
    }

    /// Volatility of the coordinate when the price has log-volatility `sigma`.
    pub fn coord_vol(&self, k: usize, sigma: f64) -> f64 {
        if self.log {
            sigma
        } else {
            sigma * self.prices[k]
        }
    }

    /// Drift of the coordinate at node `k` when the price has drift rate
    /// `mu` (per unit price) and log-volatility `sigma`.
    pub fn coord_drift(&self, k: usize, mu: f64, sigma: f64) -> f64 {
        if self.log {
            mu - 0.5 * sigma * sigma
        } else {
            mu * self.prices[k]
        }
    }

    /// Weights `(w1, w2)` such that linearity in the price gives
    /// `p₀ = w1·p₁ + w2·p₂` at the lower end.
    pub fn extrapolation_low(&self) -> (f64, f64) {
        let p = &self.prices;
        let e = (p[0] - p[1]) / (p[2] - p[1]);
        (1.0 - e, e)
    }

    /// Weights `(w1, w2)` such that `p_{n−1} = w1·p_{n−2} + w2·p_{n−3}`.
    pub fn extrapolation_high(&self) -> (f64, f64) {
        let p = &self.prices;
        let n = p.len();
        let e = (p[n - 1] - p[n - 2]) / (p[n - 3] - p[n - 2]);
        (1.0 - e, e)
    }
}

/// Information regime of the pricing problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PricingMode {
    /// Sharpe ratios known and equal to the true values in [`MarketParams`].
    FullInfo,
    /// Sharpe ratios filtered from prices under the given prior.
    PartialInfo {
        /// Gaussian prior of the Sharpe ratios.
        prior: PriorParams,
    },
}

/// Settings of the time-stepping schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Implicitness of the θ-scheme (½ is Crank–Nicolson).
    pub theta: f64,
    /// Number of initial fully implicit steps that damp the pay-off kink.
    pub rannacher_steps: usize,
    /// Maximum fixed-point iterations on the quadratic term per step; 1
    /// means a single lagged evaluation.
    pub picard_max_iter: usize,
    /// Fixed-point tolerance, relative to `max(1, |p|)`.
    pub picard_tol: f64,
    /// Accuracy target of a solve, relative to `max(1, |p|)`; used for the
    /// American complementarity check and the small-γ consistency check.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            rannacher_steps: 2,
            picard_max_iter: 1,
            picard_tol: 1e-10,
            tolerance: 1e-6,
        }
    }
}

impl SolverConfig {
    /// Checks the invariants of the type.
    pub fn validate(&self) -> Result<()> {
        ensure((0.5..=1.0).contains(&self.theta), || {
            format!("theta must lie in [0.5, 1], got {}", self.theta)
        })?;
        ensure(self.picard_max_iter >= 1, || {
            "picard_max_iter must be at least 1".into()
        })?;
        ensure(self.picard_tol > 0.0 && self.tolerance > 0.0, || {
            "tolerances must be positive".into()
        })
    }
}

/// Coefficients of the generator of `(S, Y)` under the minimal martingale
/// measure, in price units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorCoeffs {
    /// Drift of `S` (always 0: the stock is a martingale).
    pub drift_s: f64,
    /// Drift of `Y`, `σʸ y (λ̂ʸ − ρλ̂ˢ)`.
    pub drift_y: f64,
    /// `½ (σˢ s)²`.
    pub diff_ss: f64,
    /// `½ (σʸ y)²`.
    pub diff_yy: f64,
    /// `ρ σˢ σʸ s y`.
    pub diff_sy: f64,
}

/// Drift model of `Y` under the minimal martingale measure.
#[derive(Debug, Clone, Copy)]
pub struct QmModel {
    /// Market parameters.
    pub params: MarketParams,
    filter: Option<KalmanBucy>,
}

impl QmModel {
    /// Builds the model for a pricing mode.
    pub fn new(params: &MarketParams, mode: &PricingMode) -> Result<Self> {
        params.validate_for_pricing()?;
        let filter = match mode {
            PricingMode::FullInfo => None,
            PricingMode::PartialInfo { prior } => Some(KalmanBucy::new(*prior, params.rho)?),
        };
        Ok(Self {
            params: *params,
            filter,
        })
    }

    /// Whether the drift depends on the state (partial information).
    pub fn is_state_dependent(&self) -> bool {
        self.filter.is_some()
    }

    /// Sharpe ratios `(λ̂ˢ, λ̂ʸ)` seen by the agent at `(t, s, y)`.
    pub fn sharpe(&self, t: f64, s: f64, y: f64) -> (f64, f64) {
        match &self.filter {
            None => (self.params.lambda_s_true, self.params.lambda_y_true),
            Some(kb) => {
                let p = &self.params;
                let xs = (s / p.s0).ln() / p.sigma_s + 0.5 * p.sigma_s * t;
                let xy = (y / p.y0).ln() / p.sigma_y + 0.5 * p.sigma_y * t;
                kb.means(t, xs, xy)
            }
        }
    }

    /// Drift rate of `Y` per unit price, `σʸ(λ̂ʸ − ρλ̂ˢ)`.
    pub fn drift_rate_y(&self, t: f64, s: f64, y: f64) -> f64 {
        let (ls, ly) = self.sharpe(t, s, y);
        self.params.sigma_y * (ly - self.params.rho * ls)
    }
}

/// Generator coefficients of `(S, Y)` under the minimal martingale measure
/// at `(t, s, y)`.
pub fn qm_generator_coeffs(
    t: f64,
    s: f64,
    y: f64,
    mode: &PricingMode,
    params: &MarketParams,
) -> Result<GeneratorCoeffs> {
    if let PricingMode::PartialInfo { .. } = mode {
        observation_from_prices(t, s, y, params)?;
    }
    ensure(s > 0.0 && y > 0.0, || {
        format!("prices must be positive, got s={s}, y={y}")
    })?;
    let model = QmModel::new(params, mode)?;
    let (ss, sy) = (params.sigma_s * s, params.sigma_y * y);
    Ok(GeneratorCoeffs {
        drift_s: 0.0,
        drift_y: y * model.drift_rate_y(t, s, y),
        diff_ss: 0.5 * ss * ss,
        diff_yy: 0.5 * sy * sy,
        diff_sy: params.rho * ss * sy,
    })
}
