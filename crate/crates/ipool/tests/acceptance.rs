//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ipool::config::RunConfig;
use ipool::oracle::{self, OracleOptions};
use ipool::run;
use ipool_core::aggregate::{aggregate, Aggregates};
use ipool_core::policy::PolicyKind;
use ipool_core::sim::population::optimal_treatment;
use ipool_core::sim::{Environment, PopulationSetting};
use ipool_core::trial::TrialOutcome;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn criterion<F: FnOnce() -> Outcome>(n: u32, title: &str, results: &mut Vec<bool>, f: F) {
    let start = Instant::now();
    let o = f();
    println!(
        "{} criterion {n} ({title}): {} [{:.1} s]",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    results.push(o.passed);
}

fn closed_form() -> Outcome {
    let dev = oracle::two_user_closed_form(100, &OracleOptions::default());
    outcome(dev <= 1e-8, format!("max |Δ| = {dev:.2e} over 100 instances"))
}

fn stacked() -> Outcome {
    let dev = oracle::stacked_gaussian(25, &OracleOptions::default());
    outcome(dev <= 1e-8, format!("max |Δ| = {dev:.2e} over 25 instances"))
}

fn limits() -> Outcome {
    let opts = OracleOptions::default();
    let small = oracle::vanishing_random_effect(50, &opts);
    let large = oracle::huge_random_effect(50, &opts);
    outcome(
        small <= 1e-4 && large <= 1e-3,
        format!("max |Δπ| = {small:.2e} (σ_u² = 1e-12), max relative gap to Y/C = {large:.2e} (σ_u² = 1e8)"),
    )
}

fn likelihood() -> Outcome {
    let dev = oracle::density(20, &OracleOptions::default());
    let rec = oracle::variance_recovery(0..10);
    let (re, noise) = (rec.median_random_effect_error(), rec.median_noise_error());
    outcome(
        dev <= 1e-8 && re <= 0.3 && noise <= 0.3,
        format!("density max |Δ| = {dev:.2e}; median relative error σ_u² {re:.3}, σ_ε² {noise:.3}"),
    )
}

type Cells = BTreeMap<(PopulationSetting, PolicyKind), Vec<TrialOutcome>>;

fn run_grid(env: &Environment, cfg: &RunConfig) -> Cells {
    let mut cells = Cells::new();
    for &setting in &cfg.run.settings {
        for &policy in &cfg.run.policies {
            let out = run::run_cell(env, cfg, policy, setting).expect("trials run");
            cells.insert((setting, policy), out);
        }
    }
    cells
}

fn aggregates(cells: &Cells, last_week: u32) -> BTreeMap<(PopulationSetting, PolicyKind), Aggregates> {
    cells
        .iter()
        .map(|(k, v)| (*k, aggregate(v.iter().flat_map(|o| &o.records), last_week)))
        .collect()
}

fn ordering(agg: &BTreeMap<(PopulationSetting, PolicyKind), Aggregates>) -> Outcome {
    use PolicyKind::{Complete, IntelligentPooling as Ip, PersonSpecific as Ps};
    use PopulationSetting::*;
    let r = |s, p| agg[&(s, p)].cumulative_regret.mean;
    let smooth = r(Smooth, Ip) <= 0.9 * r(Smooth, Complete) && r(Smooth, Ip) <= 0.9 * r(Smooth, Ps);
    let homog = (r(Homogeneous, Ip) - r(Homogeneous, Complete)).abs() <= 0.1 * r(Homogeneous, Complete)
        && r(Homogeneous, Ip) <= 0.9 * r(Homogeneous, Ps)
        && r(Homogeneous, Complete) <= 0.9 * r(Homogeneous, Ps);
    let bimodal = r(BiModal, Ip) <= r(BiModal, Complete);
    let line = |s| format!("IP {:.2} / C {:.2} / PS {:.2}", r(s, Ip), r(s, Complete), r(s, Ps));
    outcome(
        smooth && homog && bimodal,
        format!(
            "smooth {} [{}]; homogeneous {} [{}]; bi-modal {} [{}]",
            line(Smooth),
            if smooth { "ok" } else { "violated" },
            line(Homogeneous),
            if homog { "ok" } else { "violated" },
            line(BiModal),
            if bimodal { "ok" } else { "violated" },
        ),
    )
}

fn personalization(agg: &BTreeMap<(PopulationSetting, PolicyKind), Aggregates>) -> Outcome {
    let frac = |p, g| agg[&(PopulationSetting::BiModal, p)].send_by_group[&g].fraction();
    let (i1, i2) = (frac(PolicyKind::IntelligentPooling, 1), frac(PolicyKind::IntelligentPooling, 2));
    let (c1, c2) = (frac(PolicyKind::Complete, 1), frac(PolicyKind::Complete, 2));
    outcome(
        i1 - i2 >= 0.1 && (c1 - c2).abs() < 0.05,
        format!("IP groups {i1:.3} / {i2:.3}; Complete groups {c1:.3} / {c2:.3}"),
    )
}

fn burden(env: &Environment, base: &RunConfig, trials: u32) -> Outcome {
    let mut cfg = base.clone();
    cfg.run.trials = trials;
    cfg.trial.burden = true;
    let last = cfg.trial.weeks_per_user;
    let agg = |p| {
        let out = run::run_cell(env, &cfg, p, PopulationSetting::Homogeneous).expect("trials run");
        aggregate(out.iter().flat_map(|o| &o.records), last)
    };
    let tv = agg(PolicyKind::IntelligentPoolingTv);
    let ip = agg(PolicyKind::IntelligentPooling);
    let cohorts = &tv.last_week_send_by_cohort;
    let first = cohorts.values().next().map_or(f64::NAN, |c| c.fraction());
    let final_ = cohorts.values().next_back().map_or(f64::NAN, |c| c.fraction());
    let (rtv, rip) = (tv.mean_weekly_regret(8, 10), ip.mean_weekly_regret(8, 10));
    outcome(
        final_ < first && rtv < rip,
        format!(
            "IP-TV last-week send fraction cohort 1 {first:.3} -> final cohort {final_:.3}; weeks 8-10 regret IP-TV {rtv:.4} vs IP {rip:.4} ({trials} trials)"
        ),
    )
}

fn files_equal(a: &Path, b: &Path) -> bool {
    let names = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .expect("run dir")
            .map(|e| e.expect("entry").file_name())
            .collect();
        v.sort();
        v
    };
    let (na, nb) = (names(a), names(b));
    na == nb
        && na
            .iter()
            .all(|n| std::fs::read(a.join(n)).expect("read") == std::fs::read(b.join(n)).expect("read"))
}

fn invariants(cells: &Cells, cfg: &RunConfig) -> Outcome {
    let records = || cells.values().flatten().flat_map(|o| &o.records);
    let probs_ok = records()
        .filter_map(|r| r.probability)
        .all(|p| (0.1..=0.8).contains(&p));
    let total = records().count();
    let available = records().filter(|r| r.available).count();
    let rate = available as f64 / total as f64;
    let regret_ok = records().all(|r| match r.action {
        Some(a) => r.regret >= 0.0 && (r.regret == 0.0) == (a.is_treatment() == optimal_treatment(r.effect)),
        None => r.regret == 0.0,
    });

    let mut small = cfg.clone();
    small.run.policies = PolicyKind::ALL.to_vec();
    small.run.trials = 1;
    let dir = tempfile::tempdir().expect("temp dir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run::simulate(&small, &a).expect("first run");
    run::simulate(&small, &b).expect("second run");
    let same = files_equal(&a, &b);

    outcome(
        probs_ok && (rate - 0.8).abs() <= 0.02 && regret_ok && same,
        format!(
            "probabilities in [0.1, 0.8]: {probs_ok}; availability {rate:.4} over {total} decisions; regret = 0 iff optimal: {regret_ok}; repeated full run byte-identical: {same}"
        ),
    )
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    criterion(1, "two-user closed form", &mut results, closed_form);
    criterion(2, "stacked Gaussian", &mut results, stacked);
    criterion(3, "pooling limits", &mut results, limits);
    criterion(4, "marginal likelihood", &mut results, likelihood);

    let cfg = RunConfig::default();
    let env = run::environment(&cfg).expect("environment");
    let start = Instant::now();
    let cells = run_grid(&env, &cfg);
    println!(
        "     ran {} trials × {} cells in {:.1} s",
        cfg.run.trials,
        cells.len(),
        start.elapsed().as_secs_f64()
    );
    let agg = aggregates(&cells, cfg.trial.weeks_per_user);
    criterion(5, "regret ordering", &mut results, || ordering(&agg));
    criterion(6, "bi-modal personalization", &mut results, || personalization(&agg));
    criterion(7, "burden adaptation", &mut results, || burden(&env, &cfg, 30));
    criterion(8, "protocol invariants", &mut results, || invariants(&cells, &cfg));

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
