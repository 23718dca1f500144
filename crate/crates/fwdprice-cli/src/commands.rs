//! One runner per subcommand. Each writes its artefacts into the output
//! directory and returns the check results that decide the exit status.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fwdprice::american_pricer::{
    solve_vi_american, stopping_rule_check, write_boundary_csv, write_region_csv,
};
use fwdprice::euro_pricer::{
    distortion_price, expansion_price, hedge_ratio, marginal_price, marginal_price_closed_form,
    solve_pde_euro, write_diagnostics_jsonl, write_surface_csv, ExpansionConfig, PriceSurface,
    PricingMode,
};
use fwdprice::filter::{filter_path, write_filter_csv};
use fwdprice::hedging_sim::{
    correlation_sensitivity, price_representation_check, run_hedge_sim, summarize,
    write_correlation_csv, write_ledger_csv, HedgePolicy, PolicyKind, SimConfig,
};
use fwdprice::market_model::{
    simulate_paths, simulate_paths_on_grid, uniform_grid, write_paths_csv, DriftSource,
    MarketParams,
};
use fwdprice::numerics::ols_slope;
use serde::Serialize;
use serde_json::json;

use crate::config::{DriftKind, RunConfig};
use crate::error::CliError;

/// Output directory of a run; records every file written.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.root.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn with<F>(&mut self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> fwdprice::Result<()>,
    {
        let mut w = self.create(name)?;
        write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Checks that ran without a decisive answer.
pub type Inconclusive = Vec<String>;

fn surface_point(surface: &PriceSurface, market: &MarketParams) -> serde_json::Value {
    let (s, y) = (market.s0, market.y0);
    json!({
        "t": 0.0,
        "s": s,
        "y": y,
        "price": surface.price(0.0, s, y),
        "hedge_ratio": hedge_ratio(surface, 0.0, s, y, market),
    })
}

fn write_surface(
    out: &mut OutDir,
    prefix: &str,
    surface: &PriceSurface,
    stride: usize,
) -> Result<(), CliError> {
    out.with(&format!("{prefix}surface.csv"), |w| {
        write_surface_csv(surface, w, stride)
    })?;
    out.with(&format!("{prefix}diagnostics.jsonl"), |w| {
        write_diagnostics_jsonl(&surface.diagnostics, w)
    })
}

pub fn price_euro(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let market = cfg.market()?;
    let (payoff, gamma, mode) = (cfg.payoff()?, cfg.gamma()?, cfg.pricing_mode()?);
    let surface = solve_pde_euro(
        &payoff,
        &cfg.grid(&market)?,
        gamma,
        &mode,
        &market,
        &cfg.solver()?,
    )?;
    write_surface(out, "", &surface, cfg.output.time_stride)?;
    out.json("price.json", &json!({ "gamma": gamma, "point": surface_point(&surface, &market), "warnings": surface.warnings }))?;
    Ok(Vec::new())
}

pub fn marginal(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let market = cfg.market()?;
    let (payoff, mode) = (cfg.payoff()?, cfg.pricing_mode()?);
    let grid = cfg.grid(&market)?;
    let surface = marginal_price(&payoff, &grid, &mode, &market, &cfg.solver()?)?;
    write_surface(out, "", &surface, cfg.output.time_stride)?;
    let closed_form = match mode {
        PricingMode::FullInfo => Some(marginal_price_closed_form(
            &payoff,
            grid.horizon,
            market.y0,
            &market,
        )?),
        PricingMode::PartialInfo { .. } => None,
    };
    out.json("price.json", &json!({ "gamma": 0.0, "point": surface_point(&surface, &market), "closed_form": closed_form }))?;
    Ok(Vec::new())
}

pub fn distortion(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let market = cfg.market()?;
    let (payoff, gamma) = (cfg.payoff()?, cfg.gamma()?);
    let horizon = cfg.grid.as_ref().map_or(1.0, |g| g.horizon);
    let ys = if cfg.distortion.y.is_empty() {
        vec![market.y0]
    } else {
        cfg.distortion.y.clone()
    };
    let t = cfg.distortion.t;
    let mut rows = Vec::with_capacity(ys.len());
    for &y in &ys {
        rows.push((
            t,
            y,
            distortion_price(&payoff, t, y, gamma, &market, horizon)?,
        ));
    }
    out.with("distortion.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["t", "y", "p"])?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Vec::new())
}

pub fn price_american(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let market = cfg.market()?;
    let (payoff, gamma, mode) = (cfg.payoff()?, cfg.gamma()?, cfg.pricing_mode()?);
    let (grid, solver) = (cfg.grid(&market)?, cfg.solver()?);
    let american = solve_vi_american(
        &payoff,
        &grid,
        gamma,
        &mode,
        &market,
        &solver,
        &cfg.american.obstacle,
    )?;
    let european = solve_pde_euro(&payoff, &grid, gamma, &mode, &market, &solver)?;
    let stride = cfg.output.time_stride;
    write_surface(out, "", &american.surface, stride)?;
    out.with("boundary.csv", |w| {
        write_boundary_csv(&american.boundary, w)
    })?;
    out.with("region.csv", |w| write_region_csv(&american, w, stride))?;
    let stopping = if cfg.american.stopping_paths > 0 {
        let paths = simulate_paths(
            &market,
            grid.horizon,
            cfg.american.stopping_steps,
            cfg.american.stopping_paths,
            cfg.seed()?,
        )?;
        let stats = stopping_rule_check(&american, &paths, cfg.american.stopping_tol)?;
        Some(
            json!({ "mean": stats.mean, "quantiles": stats.quantiles, "early_fraction": stats.early_fraction }),
        )
    } else {
        None
    };
    out.json(
        "american.json",
        &json!({
            "gamma": gamma,
            "american": surface_point(&american.surface, &market),
            "european": surface_point(&european, &market),
            "obstacle_violation": american.obstacle_violation,
            "complementarity_residual": american.complementarity_residual,
            "stopping": stopping,
        }),
    )?;
    Ok(Vec::new())
}

pub fn expansion(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let market = cfg.market()?;
    let (payoff, mode, seed) = (cfg.payoff()?, cfg.pricing_mode()?, cfg.seed()?);
    let (grid, solver) = (cfg.grid(&market)?, cfg.solver()?);
    let section = &cfg.expansion;
    if section.gammas.is_empty() || section.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(CliError::Config(
            "[expansion] gammas must be a non-empty list of positive values".into(),
        ));
    }
    let marginal = marginal_price(&payoff, &grid, &mode, &market, &solver)?;
    let ecfg = ExpansionConfig {
        n_paths: section.n_paths,
        n_steps: section.n_steps,
        seed,
    };
    let (s, y) = (market.s0, market.y0);
    let mut rows = Vec::new();
    let mut inconclusive = Vec::new();
    for &gamma in &section.gammas {
        let p_pde =
            solve_pde_euro(&payoff, &grid, gamma, &mode, &market, &solver)?.price(0.0, s, y);
        let e = expansion_price(&marginal, 0.0, s, y, gamma, &ecfg)?;
        if let Some(w) = &e.warning {
            inconclusive.push(format!("gamma={gamma}: {w}"));
        }
        rows.push((
            gamma,
            p_pde,
            e.expansion_value,
            (p_pde - e.expansion_value).abs(),
            e.coefficient,
            e.coefficient_se,
        ));
    }
    out.with("expansion.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "gamma",
            "p_pde",
            "p_expansion",
            "abs_diff",
            "coefficient",
            "coefficient_se",
        ])?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let (lg, ld): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.3 > 0.0)
        .map(|r| (r.0.ln(), r.3.ln()))
        .unzip();
    let slope = if lg.len() >= 2 {
        Some(ols_slope(&lg, &ld))
    } else {
        None
    };
    out.json("expansion.json", &json!({ "p_marginal": marginal.price(0.0, s, y), "log_log_slope": slope, "warnings": inconclusive }))?;
    Ok(inconclusive)
}

fn policy_name(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Naive => "naive",
        PolicyKind::Marginal => "marginal",
        PolicyKind::OptimalForward => "optimal_forward",
    }
}

fn drift_source(kind: DriftKind, cfg: &RunConfig) -> Result<DriftSource, CliError> {
    Ok(match kind {
        DriftKind::Fixed => DriftSource::Fixed,
        DriftKind::Prior => DriftSource::Prior(cfg.prior()?),
    })
}

pub fn hedge_sim(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let market = cfg.market()?;
    let (payoff, gamma, mode, seed) = (
        cfg.payoff()?,
        cfg.gamma()?,
        cfg.pricing_mode()?,
        cfg.seed()?,
    );
    let (grid, solver) = (cfg.grid(&market)?, cfg.solver()?);
    let sec = &cfg.sim;
    if sec.policies.is_empty() {
        return Err(CliError::Config("[sim] policies must not be empty".into()));
    }
    let surface = solve_pde_euro(&payoff, &grid, gamma, &mode, &market, &solver)?;
    let marginal = marginal_price(&payoff, &grid, &mode, &market, &solver)?;
    let sim_cfg = SimConfig {
        n_paths: sec.n_paths,
        n_steps: sec.n_steps,
        seed,
        strides: sec.strides.clone(),
        n_checkpoints: sec.n_checkpoints,
        ledger_paths: sec.ledger_paths,
        qv_mode: sec.qv_mode,
        drift: drift_source(sec.drift, cfg)?,
    };
    let mut inconclusive = Vec::new();
    for &kind in &sec.policies {
        let sim = run_hedge_sim(
            &market,
            &HedgePolicy {
                kind,
                surface: &surface,
                marginal: Some(&marginal),
            },
            &sim_cfg,
        )?;
        let name = policy_name(kind);
        out.with(&format!("ledger_{name}.csv"), |w| write_ledger_csv(&sim, w))?;
        out.json(&format!("summary_{name}.json"), &summarize(&sim))?;
    }
    if sec.representation_paths > 0 {
        let r = price_representation_check(
            &surface,
            &marginal,
            0.0,
            market.s0,
            market.y0,
            sec.representation_paths,
            sec.n_steps,
            seed,
        )?;
        if r.inconclusive {
            inconclusive.push(format!(
                "price representation: standard error {} too large relative to the correction",
                r.se
            ));
        }
        out.json("representation.json", &r)?;
    }
    Ok(inconclusive)
}

pub fn filter_demo(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let market = cfg.market()?;
    let (prior, seed) = (cfg.prior()?, cfg.seed()?);
    let sec = &cfg.filter;
    if sec.n_paths == 0 || sec.n_steps == 0 {
        return Err(CliError::Config(
            "[filter] n_paths and n_steps must be positive".into(),
        ));
    }
    let times = uniform_grid(sec.horizon, sec.n_steps)?;
    let paths = simulate_paths_on_grid(
        &market,
        &times,
        sec.n_paths,
        seed,
        drift_source(sec.drift, cfg)?,
    )?;
    let traces = paths
        .iter()
        .map(|p| filter_path(p, &prior, &market))
        .collect::<fwdprice::Result<Vec<_>>>()?;
    let shown = sec.trace_paths.min(paths.len());
    out.with("paths.csv", |w| write_paths_csv(&paths[..shown], w))?;
    for (i, trace) in traces.iter().take(shown).enumerate() {
        out.with(&format!("filter_trace_{i:04}.csv"), |w| {
            write_filter_csv(trace, w)
        })?;
    }
    // Posterior consistency: mean squared estimation error against the
    // filter's own posterior variance, on every time level.
    let n = paths.len() as f64;
    out.with("filter_check.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["t", "z_s", "mse_s", "se_s", "z_y", "mse_y", "se_y"])?;
        for k in 0..times.len() {
            let err = |f: &dyn Fn(usize) -> f64| {
                let v: Vec<f64> = (0..paths.len()).map(f).collect();
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (mean, (var / n).sqrt())
            };
            let (ms, ses) = err(&|i| (traces[i][k].lambda_hat_s - paths[i].lambda_s).powi(2));
            let (my, sey) = err(&|i| (traces[i][k].lambda_hat_y - paths[i].lambda_y).powi(2));
            let st = &traces[0][k];
            w.serialize((times[k], st.z_s, ms, ses, st.z_y, my, sey))?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Vec::new())
}

pub fn corr_table(cfg: &RunConfig, out: &mut OutDir) -> Result<Inconclusive, CliError> {
    let rows = correlation_sensitivity(&cfg.corr.rho)
        .map_err(|e| CliError::Config(format!("[corr]: {e}")))?;
    out.with("corr_table.csv", |w| write_correlation_csv(&rows, w))?;
    Ok(Vec::new())
}
