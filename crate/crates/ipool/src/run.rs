//! Runs the (policy × setting) grid of a configuration.

use std::fmt::Write as _;
use std::path::Path;

use ipool_core::aggregate::{aggregate, Aggregates};
use ipool_core::evidence::FitStatus;
use ipool_core::policy::PolicyKind;
use ipool_core::presets;
use ipool_core::sim::{generate_corpus, Environment, PopulationSetting};
use ipool_core::trial::{run_trial, Strategy, TrialConfig, TrialOutcome};
use ipool_core::FeatureMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::records;

pub fn environment(cfg: &RunConfig) -> Result<Environment> {
    let corpus = generate_corpus(&cfg.corpus.config, cfg.corpus.seed)?;
    Ok(Environment::new(corpus)?)
}

pub fn trial_config(cfg: &RunConfig, setting: PopulationSetting) -> TrialConfig {
    TrialConfig {
        setting,
        ..cfg.trial.clone()
    }
}

pub fn strategy(cfg: &RunConfig, env: &Environment, kind: PolicyKind) -> Strategy {
    let fmap = FeatureMap::default();
    Strategy::Thompson {
        learner: cfg.learner_config(kind, &fmap),
        prior: presets::prior_hyperparameters(env.corpus(), &fmap, kind, &cfg.prior),
    }
}

/// Seeds of the trials of every cell.
pub fn seeds(cfg: &RunConfig) -> impl Iterator<Item = u64> + '_ {
    (0..u64::from(cfg.run.trials)).map(|t| cfg.run.seed.wrapping_add(t))
}

/// All trials of one cell, in seed order, on `cfg.run.jobs` workers.
pub fn run_cell(
    env: &Environment,
    cfg: &RunConfig,
    policy: PolicyKind,
    setting: PopulationSetting,
) -> Result<Vec<TrialOutcome>> {
    let trial = trial_config(cfg, setting);
    let strat = strategy(cfg, env, policy);
    let seeds: Vec<u64> = seeds(cfg).collect();
    let work = || -> Result<Vec<TrialOutcome>> {
        seeds
            .par_iter()
            .map(|&s| run_trial(env, &trial, &strat, s).map_err(Error::from))
            .collect()
    };
    if cfg.run.jobs <= 1 {
        return seeds
            .iter()
            .map(|&s| run_trial(env, &trial, &strat, s).map_err(Error::from))
            .collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.jobs)
        .build()
        .map_err(|e| Error::Config(format!("run.jobs: {e}")))?
        .install(work)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitCounts {
    pub improved: usize,
    pub no_improvement: usize,
    pub insufficient_data: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: PolicyKind,
    pub setting: PopulationSetting,
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub file: String,
    pub aggregates: Aggregates,
    pub fits: FitCounts,
}

pub fn summarize(
    policy: PolicyKind,
    setting: PopulationSetting,
    outcomes: &[TrialOutcome],
    last_week: u32,
    file: String,
) -> CellSummary {
    let mut fits = FitCounts::default();
    for f in outcomes.iter().flat_map(|o| &o.fits) {
        match f.status {
            FitStatus::Improved => fits.improved += 1,
            FitStatus::NoImprovement => fits.no_improvement += 1,
            FitStatus::InsufficientData => fits.insufficient_data += 1,
        }
    }
    CellSummary {
        policy,
        setting,
        trials: outcomes.len(),
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        file,
        aggregates: aggregate(outcomes.iter().flat_map(|o| &o.records), last_week),
        fits,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
}

/// Runs every cell and writes `config.toml`, one CSV per cell and
/// `summary.json` into `out`.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    let echo = out.join("config.toml");
    let mut echoed = cfg.clone();
    echoed.run.out_dir = None;
    std::fs::write(&echo, echoed.to_toml()).map_err(Error::io(&echo))?;
    let env = environment(cfg)?;
    let mut cells = Vec::new();
    for &setting in &cfg.run.settings {
        for &policy in &cfg.run.policies {
            let outcomes = run_cell(&env, cfg, policy, setting)?;
            let name = records::file_name(policy, setting, cfg.run.seed);
            records::write(&out.join(&name), policy, setting, outcomes.iter().flat_map(|o| &o.records))?;
            cells.push(summarize(policy, setting, &outcomes, cfg.trial.weeks_per_user, name));
        }
    }
    let summary = Summary { cells };
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&path, text).map_err(Error::io(&path))?;
    Ok(summary)
}

/// Mean regret per decision by week in study, one column per cell.
pub fn regret_table(summary: &Summary) -> String {
    let mut out = String::new();
    let weeks = summary
        .cells
        .iter()
        .flat_map(|c| c.aggregates.regret_by_week.iter().map(|w| w.week))
        .max()
        .unwrap_or(0);
    let _ = write!(out, "{:>5}", "week");
    for c in &summary.cells {
        let _ = write!(out, "  {:>30}", format!("{}/{}", c.policy.name(), c.setting.name()));
    }
    out.push('\n');
    for week in 1..=weeks {
        let _ = write!(out, "{week:>5}");
        for c in &summary.cells {
            let cell = c
                .aggregates
                .regret_by_week
                .iter()
                .find(|w| w.week == week)
                .map(|w| format!("{:.4} ± {:.4}", w.regret.mean, w.regret.std_error))
                .unwrap_or_default();
            let _ = write!(out, "  {cell:>30}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:>5}", "total");
    for c in &summary.cells {
        let s = c.aggregates.cumulative_regret;
        let _ = write!(out, "  {:>30}", format!("{:.3} ± {:.3}", s.mean, s.std_error));
    }
    out.push('\n');
    out
}
