//! Flat CSV form of trial records.
//!
//! Columns, in order: `policy, setting, trial_seed, user, group, cohort,
//! day, minute, decision_index, week_in_study, afternoon, weekend, hot,
//! active, home_or_work, available, action, probability, reward, effect,
//! regret`. Booleans are 0/1; `decision_index`, `action` and `probability`
//! are empty at unavailable decision times.

use std::path::Path;

use ipool_core::model::ContextState;
use ipool_core::policy::PolicyKind;
use ipool_core::sim::PopulationSetting;
use ipool_core::trial::TrialRecord;
use ipool_core::{Action, UserId};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 21] = [
    "policy",
    "setting",
    "trial_seed",
    "user",
    "group",
    "cohort",
    "day",
    "minute",
    "decision_index",
    "week_in_study",
    "afternoon",
    "weekend",
    "hot",
    "active",
    "home_or_work",
    "available",
    "action",
    "probability",
    "reward",
    "effect",
    "regret",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub policy: String,
    pub setting: String,
    pub trial_seed: u64,
    pub user: u32,
    pub group: u8,
    pub cohort: u32,
    pub day: u32,
    pub minute: u32,
    pub decision_index: Option<u32>,
    pub week_in_study: u32,
    pub afternoon: u8,
    pub weekend: u8,
    pub hot: u8,
    pub active: u8,
    pub home_or_work: u8,
    pub available: u8,
    pub action: Option<u8>,
    pub probability: Option<f64>,
    pub reward: f64,
    pub effect: f64,
    pub regret: f64,
}

impl Row {
    pub fn new(policy: PolicyKind, setting: PopulationSetting, r: &TrialRecord) -> Self {
        Self {
            policy: policy.name().to_string(),
            setting: setting.name().to_string(),
            trial_seed: r.trial_seed,
            user: r.user.0,
            group: r.group,
            cohort: r.cohort,
            day: r.day,
            minute: r.minute,
            decision_index: r.decision_index,
            week_in_study: r.week_in_study,
            afternoon: r.state.afternoon.into(),
            weekend: r.state.weekend.into(),
            hot: r.state.hot.into(),
            active: r.state.active.into(),
            home_or_work: r.state.home_or_work.into(),
            available: r.available.into(),
            action: r.action.map(|a| a.is_treatment().into()),
            probability: r.probability,
            reward: r.reward,
            effect: r.effect,
            regret: r.regret,
        }
    }

    /// Checks the record invariants and converts back.
    pub fn to_record(&self) -> Result<(PolicyKind, PopulationSetting, TrialRecord), String> {
        let flag = |name: &str, v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(format!("{name} must be 0 or 1, got {v}")),
        };
        let policy: PolicyKind = self.policy.parse().map_err(|_| format!("unknown policy {}", self.policy))?;
        let setting: PopulationSetting = self
            .setting
            .parse()
            .map_err(|_| format!("unknown setting {}", self.setting))?;
        let available = flag("available", self.available)?;
        let action = self
            .action
            .map(|a| flag("action", a).map(Action::from_indicator))
            .transpose()?;
        if available != action.is_some() || available != self.probability.is_some() {
            return Err("action and probability must be present exactly at available times".into());
        }
        if available != self.decision_index.is_some() {
            return Err("decision_index must be present exactly at available times".into());
        }
        if let Some(p) = self.probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.regret.is_nan() || self.regret < 0.0 {
            return Err(format!("regret {} is negative", self.regret));
        }
        if !(self.group == 1 || self.group == 2) {
            return Err(format!("group must be 1 or 2, got {}", self.group));
        }
        if self.week_in_study == 0 || self.cohort == 0 {
            return Err("week_in_study and cohort are 1-based".into());
        }
        let record = TrialRecord {
            trial_seed: self.trial_seed,
            user: UserId(self.user),
            group: self.group,
            cohort: self.cohort,
            day: self.day,
            minute: self.minute,
            decision_index: self.decision_index,
            week_in_study: self.week_in_study,
            state: ContextState {
                afternoon: flag("afternoon", self.afternoon)?,
                weekend: flag("weekend", self.weekend)?,
                hot: flag("hot", self.hot)?,
                active: flag("active", self.active)?,
                home_or_work: flag("home_or_work", self.home_or_work)?,
            },
            available,
            action,
            probability: self.probability,
            reward: self.reward,
            effect: self.effect,
            regret: self.regret,
        };
        Ok((policy, setting, record))
    }
}

pub fn file_name(policy: PolicyKind, setting: PopulationSetting, seed: u64) -> String {
    format!("{}_{}_{}.csv", policy.name(), setting.name(), seed)
}

pub fn write<'a, I>(path: &Path, policy: PolicyKind, setting: PopulationSetting, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a TrialRecord>,
{
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    for r in records {
        w.serialize(Row::new(policy, setting, r)).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

/// Reads one run file; every row is validated.
pub fn read(path: &Path) -> Result<Vec<(PolicyKind, PopulationSetting, TrialRecord)>> {
    let mut rd = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let headers = rd.headers().map_err(Error::csv(path))?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::InvalidRecord {
            path: path.to_path_buf(),
            row: 0,
            message: format!("expected columns {}", COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let invalid = |message: String| Error::InvalidRecord {
            path: path.to_path_buf(),
            row: i + 1,
            message,
        };
        let row = row.map_err(|e| invalid(e.to_string()))?;
        out.push(row.to_record().map_err(invalid)?);
    }
    Ok(out)
}
