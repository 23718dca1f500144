//! Run configuration: a TOML document with one section per component.
//!
//! Every section rejects unknown keys so that a misspelt setting fails the
//! run instead of silently falling back to a default.

use fwdprice::euro_pricer::{GridSpec, ObstacleMethod, PayoffSpec, PricingMode, SolverConfig};
use fwdprice::filter::PriorParams;
use fwdprice::forward_utility::PreferenceParams;
use fwdprice::hedging_sim::{PolicyKind, QvMode};
use fwdprice::market_model::MarketParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of every stochastic component; `--seed` overrides it.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Information regime of the pricers.
    #[serde(default)]
    pub mode: ModeKind,
    #[serde(default)]
    pub market: Option<MarketParams>,
    /// Prior of the Sharpe ratios; required in partial-information mode
    /// and by prior-driven simulations.
    #[serde(default)]
    pub prior: Option<PriorParams>,
    #[serde(default)]
    pub preference: Option<PreferenceParams>,
    #[serde(default)]
    pub payoff: Option<PayoffSpec>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub american: AmericanConfig,
    #[serde(default)]
    pub distortion: DistortionConfig,
    #[serde(default)]
    pub expansion: ExpansionSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub corr: CorrSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Information regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    /// Sharpe ratios known.
    #[default]
    FullInfo,
    /// Sharpe ratios filtered under `[prior]`.
    PartialInfo,
}

/// Grid settings: a log-price box centred on the initial prices unless
/// explicit bounds are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_y: usize,
    pub n_t: usize,
    #[serde(default = "default_n_s")]
    pub n_s: usize,
    /// Half-width of the box in terminal standard deviations.
    #[serde(default = "default_n_sd")]
    pub n_sd: f64,
    #[serde(default)]
    pub y_min: Option<f64>,
    #[serde(default)]
    pub y_max: Option<f64>,
    #[serde(default)]
    pub s_min: Option<f64>,
    #[serde(default)]
    pub s_max: Option<f64>,
    #[serde(default = "yes")]
    pub log_space: bool,
}

fn default_n_s() -> usize {
    41
}

fn default_n_sd() -> f64 {
    5.0
}

fn yes() -> bool {
    true
}

impl GridConfig {
    /// The solver grid for the given market.
    pub fn spec(&self, market: &MarketParams) -> GridSpec {
        let mut g = GridSpec::centered(
            market,
            self.horizon,
            self.n_s,
            self.n_y,
            self.n_t,
            self.n_sd,
        );
        g.y_min = self.y_min.unwrap_or(g.y_min);
        g.y_max = self.y_max.unwrap_or(g.y_max);
        g.s_min = self.s_min.unwrap_or(g.s_min);
        g.s_max = self.s_max.unwrap_or(g.s_max);
        g.log_space = self.log_space;
        g
    }
}

/// Early-exercise settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmericanConfig {
    pub obstacle: ObstacleMethod,
    /// Paths for the stopping-rule statistics; 0 skips them.
    pub stopping_paths: usize,
    /// Time steps of the stopping-rule paths.
    pub stopping_steps: usize,
    /// Tolerance of the stopping rule, relative to `max(1, C)`.
    pub stopping_tol: f64,
}

impl Default for AmericanConfig {
    fn default() -> Self {
        Self {
            obstacle: ObstacleMethod::default(),
            stopping_paths: 0,
            stopping_steps: 250,
            stopping_tol: 1e-6,
        }
    }
}

/// Points at which the closed-form distortion price is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortionConfig {
    pub t: f64,
    /// Levels of `Y`; empty means the initial price only.
    pub y: Vec<f64>,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            t: 0.0,
            y: Vec::new(),
        }
    }
}

/// Small-γ expansion study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionSection {
    pub gammas: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
}

impl Default for ExpansionSection {
    fn default() -> Self {
        Self {
            gammas: vec![0.01, 0.02, 0.05, 0.1, 0.2],
            n_paths: 10_000,
            n_steps: 200,
        }
    }
}

/// Drift of the simulated paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// The true Sharpe ratios of `[market]`.
    #[default]
    Fixed,
    /// Sharpe ratios drawn per path from `[prior]`.
    Prior,
}

/// Hedging experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub strides: Vec<usize>,
    pub n_checkpoints: usize,
    pub ledger_paths: usize,
    pub qv_mode: QvMode,
    pub drift: DriftKind,
    pub policies: Vec<PolicyKind>,
    /// Paths of the price-representation check; 0 skips it.
    pub representation_paths: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 250,
            strides: vec![1],
            n_checkpoints: 8,
            ledger_paths: 4,
            qv_mode: QvMode::Model,
            drift: DriftKind::Fixed,
            policies: vec![
                PolicyKind::Naive,
                PolicyKind::Marginal,
                PolicyKind::OptimalForward,
            ],
            representation_paths: 0,
        }
    }
}

/// Filter demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    /// Paths whose full trace is written.
    pub trace_paths: usize,
    pub drift: DriftKind,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            n_steps: 100,
            horizon: 1.0,
            trace_paths: 4,
            drift: DriftKind::Prior,
        }
    }
}

/// Correlation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrSection {
    pub rho: Vec<f64>,
}

impl Default for CorrSection {
    fn default() -> Self {
        Self {
            rho: vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 0.98, 0.99, 1.0],
        }
    }
}

/// Artefact settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Every how many time levels a surface is written.
    pub time_stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { time_stride: 10 }
    }
}

impl RunConfig {
    /// Parses a configuration document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn market(&self) -> Result<MarketParams, CliError> {
        let m = self.market.ok_or_else(|| missing("market"))?;
        m.validate()
            .map_err(|e| CliError::Config(format!("[market]: {e}")))?;
        Ok(m)
    }

    pub fn prior(&self) -> Result<PriorParams, CliError> {
        let p = self.prior.ok_or_else(|| missing("prior"))?;
        p.validate()
            .map_err(|e| CliError::Config(format!("[prior]: {e}")))?;
        Ok(p)
    }

    pub fn gamma(&self) -> Result<f64, CliError> {
        let p = self.preference.ok_or_else(|| missing("preference"))?;
        p.validate()
            .map_err(|e| CliError::Config(format!("[preference]: {e}")))?;
        Ok(p.gamma)
    }

    pub fn payoff(&self) -> Result<PayoffSpec, CliError> {
        let p = self.payoff.clone().ok_or_else(|| missing("payoff"))?;
        p.piecewise()
            .map_err(|e| CliError::Config(format!("[payoff]: {e}")))?;
        Ok(p)
    }

    pub fn pricing_mode(&self) -> Result<PricingMode, CliError> {
        Ok(match self.mode {
            ModeKind::FullInfo => PricingMode::FullInfo,
            ModeKind::PartialInfo => PricingMode::PartialInfo {
                prior: self.prior()?,
            },
        })
    }

    pub fn grid(&self, market: &MarketParams) -> Result<GridSpec, CliError> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| missing("grid"))?
            .spec(market);
        g.validate(self.mode == ModeKind::PartialInfo)
            .map_err(|e| CliError::Config(format!("[grid]: {e}")))?;
        Ok(g)
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        self.solver
            .validate()
            .map_err(|e| CliError::Config(format!("[solver]: {e}")))?;
        Ok(self.solver)
    }

    /// The seed of a stochastic run.
    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Config(
                "`seed` is required for stochastic runs (set it in the config or pass --seed)"
                    .into(),
            )
        })
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing section [{section}]"))
}
