//! Summaries over trial records.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::model::UserId;
use crate::trial::TrialRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStat {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanStat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                std_error: 0.0,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            libm::sqrt(var / n as f64)
        } else {
            0.0
        };
        Self { mean, std_error, n }
    }
}

/// Treatments sent out of available decision times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SendCount {
    pub sent: usize,
    pub available: usize,
}

impl SendCount {
    pub fn fraction(&self) -> f64 {
        if self.available == 0 {
            0.0
        } else {
            self.sent as f64 / self.available as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeekRegret {
    pub week: u32,
    pub regret: MeanStat,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregates {
    /// Mean regret per available decision, averaged over (trial, user)
    /// units, by the user's own week in the study.
    pub regret_by_week: Vec<WeekRegret>,
    /// Total regret per (trial, user) unit.
    pub cumulative_regret: MeanStat,
    pub send_by_group: BTreeMap<u8, SendCount>,
    /// Sends in each cohort's final study week.
    pub last_week_send_by_cohort: BTreeMap<u32, SendCount>,
    pub decision_points: usize,
    pub available_points: usize,
}

impl Aggregates {
    pub fn availability_rate(&self) -> f64 {
        if self.decision_points == 0 {
            0.0
        } else {
            self.available_points as f64 / self.decision_points as f64
        }
    }

    /// Mean regret per decision over weeks `from..=to`, averaging the
    /// per-week means.
    pub fn mean_weekly_regret(&self, from: u32, to: u32) -> f64 {
        let xs: Vec<f64> = self
            .regret_by_week
            .iter()
            .filter(|w| w.week >= from && w.week <= to)
            .map(|w| w.regret.mean)
            .collect();
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    }
}

/// Folds records from any number of trials. `last_week` is the study week
/// counted as final for the per-cohort send fractions.
pub fn aggregate<'a, I>(records: I, last_week: u32) -> Aggregates
where
    I: IntoIterator<Item = &'a TrialRecord>,
{
    let mut unit_week: BTreeMap<(u32, u64, UserId), (f64, usize)> = BTreeMap::new();
    let mut unit_total: BTreeMap<(u64, UserId), f64> = BTreeMap::new();
    let mut send_by_group: BTreeMap<u8, SendCount> = BTreeMap::new();
    let mut last_week_send_by_cohort: BTreeMap<u32, SendCount> = BTreeMap::new();
    let mut decision_points = 0;
    let mut available_points = 0;

    for r in records {
        decision_points += 1;
        *unit_total.entry((r.trial_seed, r.user)).or_default() += r.regret;
        if !r.available {
            continue;
        }
        available_points += 1;
        let e = unit_week.entry((r.week_in_study, r.trial_seed, r.user)).or_default();
        e.0 += r.regret;
        e.1 += 1;
        let sent = r.action.is_some_and(|a| a.is_treatment()) as usize;
        let g = send_by_group.entry(r.group).or_default();
        g.sent += sent;
        g.available += 1;
        if r.week_in_study == last_week {
            let c = last_week_send_by_cohort.entry(r.cohort).or_default();
            c.sent += sent;
            c.available += 1;
        }
    }

    let mut by_week: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for ((week, _, _), (sum, n)) in unit_week {
        by_week.entry(week).or_default().push(sum / n as f64);
    }
    let totals: Vec<f64> = unit_total.into_values().collect();
    Aggregates {
        regret_by_week: by_week
            .into_iter()
            .map(|(week, xs)| WeekRegret {
                week,
                regret: MeanStat::of(&xs),
            })
            .collect(),
        cumulative_regret: MeanStat::of(&totals),
        send_by_group,
        last_week_send_by_cohort,
        decision_points,
        available_points,
    }
}
