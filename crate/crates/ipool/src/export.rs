//! Tidy tables for the plotting script, re-aggregated from run files.
//!
//! * `regret_curves.csv`: `setting, policy, week, mean_regret, std_error, n`
//! * `cumulative_regret.csv`: `setting, policy, mean, std_error, n`
//! * `send_fractions.csv`: `setting, policy, by, key, sent, available, fraction`
//!   where `by` is `group` or `cohort_last_week`
//! * `probabilities.csv`: `setting, policy, probability`, one row per
//!   available decision

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ipool_core::aggregate::{aggregate, Aggregates};
use ipool_core::policy::PolicyKind;
use ipool_core::sim::PopulationSetting;
use ipool_core::trial::TrialRecord;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::records;

type Key = (PopulationSetting, PolicyKind);

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    setting: &'a str,
    policy: &'a str,
    week: u32,
    mean_regret: f64,
    std_error: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct TotalRow<'a> {
    setting: &'a str,
    policy: &'a str,
    mean: f64,
    std_error: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct SendRow<'a> {
    setting: &'a str,
    policy: &'a str,
    by: &'a str,
    key: u32,
    sent: usize,
    available: usize,
    fraction: f64,
}

#[derive(Debug, Serialize)]
struct ProbabilityRow<'a> {
    setting: &'a str,
    policy: &'a str,
    probability: f64,
}

/// Run CSVs in `dir`, sorted by name.
pub fn run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(Error::io(dir))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(Error::io(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(".csv") && name.split('_').count() == 3 {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Records of every run file in `dir`, grouped by cell.
pub fn load(dir: &Path) -> Result<BTreeMap<Key, Vec<TrialRecord>>> {
    let files = run_files(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyInput(dir.to_path_buf()));
    }
    let mut cells: BTreeMap<Key, Vec<TrialRecord>> = BTreeMap::new();
    for f in files {
        for (policy, setting, r) in records::read(&f)? {
            cells.entry((setting, policy)).or_default().push(r);
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput(dir.to_path_buf()));
    }
    Ok(cells)
}

/// Aggregates and tables written by [`export`].
pub struct Export {
    pub aggregates: BTreeMap<Key, Aggregates>,
    pub files: Vec<PathBuf>,
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(Error::csv(path))
}

pub fn export(run_dir: &Path, out: &Path, last_week: u32) -> Result<Export> {
    let cells = load(run_dir)?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    let paths: Vec<PathBuf> = ["regret_curves.csv", "cumulative_regret.csv", "send_fractions.csv", "probabilities.csv"]
        .iter()
        .map(|n| out.join(n))
        .collect();
    let mut curves = writer(&paths[0])?;
    let mut totals = writer(&paths[1])?;
    let mut sends = writer(&paths[2])?;
    let mut probs = writer(&paths[3])?;

    let mut aggregates = BTreeMap::new();
    for ((setting, policy), recs) in &cells {
        let a = aggregate(recs, last_week);
        let (s, p) = (setting.name(), policy.name());
        for w in &a.regret_by_week {
            curves
                .serialize(CurveRow {
                    setting: s,
                    policy: p,
                    week: w.week,
                    mean_regret: w.regret.mean,
                    std_error: w.regret.std_error,
                    n: w.regret.n,
                })
                .map_err(Error::csv(&paths[0]))?;
        }
        totals
            .serialize(TotalRow {
                setting: s,
                policy: p,
                mean: a.cumulative_regret.mean,
                std_error: a.cumulative_regret.std_error,
                n: a.cumulative_regret.n,
            })
            .map_err(Error::csv(&paths[1]))?;
        let groups = a.send_by_group.iter().map(|(k, c)| ("group", u32::from(*k), c));
        let cohorts = a.last_week_send_by_cohort.iter().map(|(k, c)| ("cohort_last_week", *k, c));
        for (by, key, c) in groups.chain(cohorts) {
            sends
                .serialize(SendRow {
                    setting: s,
                    policy: p,
                    by,
                    key,
                    sent: c.sent,
                    available: c.available,
                    fraction: c.fraction(),
                })
                .map_err(Error::csv(&paths[2]))?;
        }
        for prob in recs.iter().filter_map(|r| r.probability) {
            probs
                .serialize(ProbabilityRow {
                    setting: s,
                    policy: p,
                    probability: prob,
                })
                .map_err(Error::csv(&paths[3]))?;
        }
        aggregates.insert((*setting, *policy), a);
    }
    for (w, path) in [curves, totals, sends, probs].iter_mut().zip(&paths) {
        w.flush().map_err(Error::io(path))?;
    }
    Ok(Export {
        aggregates,
        files: paths,
    })
}
