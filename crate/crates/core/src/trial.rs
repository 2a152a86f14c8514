//! Simulated trials: staggered recruitment, a half-hourly calendar, and a
//! treatment rule deciding at the available decision times.
//!
//! Randomness is split into independent streams derived from the trial
//! seed (profiles, weather, each user's environment, the policy), so two
//! rules run on the same seed face the same users and the same weather.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PolicyError, TrialError};
use crate::evidence::FitStatus;
use crate::model::{Action, ContextState, Hyperparameters, Interaction, UserId};
use crate::policy::{Learner, LearnerConfig};
use crate::sim::corpus::{month_of, StepContext, Timestamp, DECISION_MINUTES, FIRST_TICK_MINUTE, TICK_MINUTES};
use crate::sim::population::{self, PopulationParams, PopulationSetting, UserProfile};
use crate::sim::Environment;
use crate::model::AFTERNOON_START_MINUTE;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrialConfig {
    pub n_users: u32,
    pub weeks_per_user: u32,
    pub trial_weeks: u32,
    /// Decision times in minutes after midnight, ascending.
    pub decision_minutes: Vec<u32>,
    pub availability_prob: f64,
    pub setting: PopulationSetting,
    pub population: PopulationParams,
    pub burden: bool,
    /// New users per week; derived from `n_users` when absent.
    pub recruitment: Option<Vec<u32>>,
    pub posterior_interval_days: u32,
    pub hyperparameter_interval_days: u32,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            n_users: 32,
            weeks_per_user: 10,
            trial_weeks: 15,
            decision_minutes: DECISION_MINUTES.to_vec(),
            availability_prob: 0.8,
            setting: PopulationSetting::Smooth,
            population: PopulationParams::default(),
            burden: false,
            recruitment: None,
            posterior_interval_days: 1,
            hyperparameter_interval_days: 7,
        }
    }
}

impl TrialConfig {
    pub fn schedule(&self) -> Vec<u32> {
        self.recruitment
            .clone()
            .unwrap_or_else(|| recruitment_schedule(self.n_users))
    }

    pub fn validate(&self) -> Result<(), TrialError> {
        if self.n_users == 0 {
            return Err(TrialError::Config("n_users must be positive"));
        }
        if self.weeks_per_user == 0 || self.trial_weeks == 0 {
            return Err(TrialError::Config("weeks_per_user and trial_weeks must be positive"));
        }
        if !(0.0..=1.0).contains(&self.availability_prob) {
            return Err(TrialError::Config("availability_prob must lie in [0, 1]"));
        }
        if self.decision_minutes.is_empty()
            || self.decision_minutes.windows(2).any(|w| w[0] >= w[1])
            || self.decision_minutes[0] < FIRST_TICK_MINUTE
            || *self.decision_minutes.last().expect("nonempty") >= 24 * 60
        {
            return Err(TrialError::Config(
                "decision_minutes must be ascending, after 8:30 and before midnight",
            ));
        }
        if self.posterior_interval_days == 0 || self.hyperparameter_interval_days == 0 {
            return Err(TrialError::Config("update intervals must be positive"));
        }
        let schedule = self.schedule();
        if schedule.iter().sum::<u32>() != self.n_users {
            return Err(TrialError::Config("recruitment counts must sum to n_users"));
        }
        let last_cohort = schedule.iter().rposition(|&c| c > 0).unwrap_or(0) as u32;
        if last_cohort + self.weeks_per_user > self.trial_weeks {
            return Err(TrialError::Config("every cohort must finish within trial_weeks"));
        }
        self.population.validate()?;
        Ok(())
    }
}

/// New users in each of the six recruitment weeks: about 30% in the second
/// week and the rest spread evenly, earlier weeks taking any remainder.
pub fn recruitment_schedule(n_users: u32) -> Vec<u32> {
    let second = libm::round(0.3 * f64::from(n_users)) as u32;
    let rest = n_users - second.min(n_users);
    let (each, extra) = (rest / 5, rest % 5);
    let mut out = Vec::with_capacity(6);
    let mut other = 0;
    for week in 0..6 {
        if week == 1 {
            out.push(second.min(n_users));
        } else {
            out.push(each + u32::from(other < extra));
            other += 1;
        }
    }
    out
}

/// How treatments are chosen in a trial.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Strategy {
    /// Clipped Thompson sampling with the given reward model and prior.
    Thompson {
        learner: LearnerConfig,
        prior: Hyperparameters,
    },
    /// Always the optimal action under the generative model.
    Oracle,
    /// Always the same action.
    Fixed(Action),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialRecord {
    pub trial_seed: u64,
    pub user: UserId,
    /// 1 = low activity, 2 = high activity.
    pub group: u8,
    /// 1-based week of the trial in which the user joined.
    pub cohort: u32,
    /// 0-based day of the trial.
    pub day: u32,
    pub minute: u32,
    /// 1-based count of the user's available decision times.
    pub decision_index: Option<u32>,
    /// 1-based week of the user's own study participation.
    pub week_in_study: u32,
    pub state: ContextState,
    pub available: bool,
    pub action: Option<Action>,
    pub probability: Option<f64>,
    pub reward: f64,
    /// True effect of treating now.
    pub effect: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitLog {
    pub day: u32,
    pub status: FitStatus,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    pub profiles: Vec<UserProfile>,
    pub records: Vec<TrialRecord>,
    pub fits: Vec<FitLog>,
}

mod streams {
    pub const PROFILES: u64 = 1;
    pub const WEATHER: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const CALENDAR: u64 = 4;
    pub const USERS: u64 = 1 << 16;
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct SimUser {
    id: UserId,
    profile: UserProfile,
    cohort: u32,
    join_day: u32,
    rng: ChaCha8Rng,
    home_or_work: Option<bool>,
    active: bool,
    decisions: u32,
}

enum Rule {
    Thompson(Box<Learner>),
    Oracle,
    Fixed(Action),
}

pub fn run_trial(
    env: &Environment,
    config: &TrialConfig,
    strategy: &Strategy,
    seed: u64,
) -> Result<TrialOutcome, TrialError> {
    config.validate()?;
    let policy_err = |day: u32| move |source: PolicyError| TrialError::Policy { seed, day, source };

    let mut rule = match strategy {
        Strategy::Thompson { learner, prior } => Rule::Thompson(Box::new(
            Learner::new(learner.clone(), prior.clone()).map_err(policy_err(0))?,
        )),
        Strategy::Oracle => Rule::Oracle,
        Strategy::Fixed(a) => Rule::Fixed(*a),
    };
    let mut profile_rng = stream(seed, streams::PROFILES);
    let mut weather_rng = stream(seed, streams::WEATHER);
    let mut policy_rng = stream(seed, streams::POLICY);
    let start_day_of_year: u32 = stream(seed, streams::CALENDAR).random_range(0..365);

    let mut users = Vec::with_capacity(config.n_users as usize);
    for (week, &count) in config.schedule().iter().enumerate() {
        for _ in 0..count {
            let idx = users.len() as u32;
            let profile = population::sample_user_profile(config.setting, &config.population, &mut profile_rng)?;
            let mut rng = stream(seed, streams::USERS + u64::from(idx));
            let active = rng.random::<bool>();
            users.push(SimUser {
                id: UserId(idx),
                profile,
                cohort: week as u32 + 1,
                join_day: week as u32 * 7,
                rng,
                home_or_work: None,
                active,
                decisions: 0,
            });
        }
    }

    let burden = config.burden.then_some(&config.population);
    let threshold = env.prior_threshold();
    let study_days = config.weeks_per_user * 7;
    let last_minute = *config.decision_minutes.last().expect("validated");
    let mut hot: Option<bool> = None;
    let mut records = Vec::new();
    let mut fits = Vec::new();

    for day in 0..config.trial_weeks * 7 {
        let in_study = |u: &SimUser| day >= u.join_day && day < u.join_day + study_days;
        if !users.iter().any(in_study) {
            continue;
        }
        if let Rule::Thompson(learner) = &mut rule {
            if day > 0 && day % config.hyperparameter_interval_days == 0 {
                if let Some(out) = learner
                    .update_hyperparameters(&mut policy_rng)
                    .map_err(policy_err(day))?
                {
                    fits.push(FitLog {
                        day,
                        status: out.status,
                        objective: out.objective,
                    });
                }
            }
            if day % config.posterior_interval_days == 0 {
                let targets: Vec<(UserId, f64)> = users
                    .iter()
                    .filter(|u| in_study(u))
                    .map(|u| (u.id, f64::from((day - u.join_day) / 7)))
                    .collect();
                learner.refresh(&targets).map_err(policy_err(day))?;
            }
        }

        let weekend = day % 7 >= 5;
        let month = month_of(start_day_of_year + day);
        let mut minute = FIRST_TICK_MINUTE;
        while minute <= last_minute {
            let afternoon = minute >= AFTERNOON_START_MINUTE;
            let decision = config.decision_minutes.contains(&minute);
            let ts = Timestamp {
                afternoon,
                weekend,
                month,
            };
            if decision || hot.is_none() {
                hot = Some(env.draw_temperature(ts, hot, &mut weather_rng));
            }
            let is_hot = hot.unwrap_or(false);
            for u in users.iter_mut().filter(|u| in_study(u)) {
                if decision || u.home_or_work.is_none() {
                    u.home_or_work = Some(env.draw_location(ts, u.profile.group, u.home_or_work, &mut u.rng));
                }
                let q = StepContext {
                    group: u.profile.group,
                    afternoon,
                    weekend,
                    hot: is_hot,
                    active: u.active,
                    home_or_work: u.home_or_work.unwrap_or(false),
                };
                let (mu, sigma) = env.step_statistics(q);
                let steps = if decision {
                    let week = (day - u.join_day) / 7;
                    let state = ContextState {
                        afternoon,
                        weekend,
                        hot: is_hot,
                        active: u.active,
                        home_or_work: q.home_or_work,
                    };
                    let available = u.rng.random::<f64>() < config.availability_prob;
                    let effect = population::total_effect(&u.profile, &state, week, burden);
                    let chosen = if available {
                        u.decisions += 1;
                        Some(match &rule {
                            Rule::Thompson(learner) => {
                                let (a, p) = learner
                                    .decide(u.id, f64::from(week), &state, &mut policy_rng)
                                    .map_err(policy_err(day))?;
                                (a, p)
                            }
                            Rule::Oracle => {
                                let treat = population::optimal_treatment(effect);
                                (Action::from_indicator(treat), f64::from(u8::from(treat)))
                            }
                            Rule::Fixed(a) => (*a, a.value()),
                        })
                    } else {
                        None
                    };
                    let treated = chosen.is_some_and(|(a, _)| a.is_treatment());
                    let reward = population::treated_reward(
                        mu,
                        sigma,
                        &state,
                        treated,
                        &u.profile,
                        week,
                        burden,
                        &mut u.rng,
                    );
                    if let (Some((action, probability)), Rule::Thompson(learner)) = (chosen, &mut rule) {
                        learner
                            .observe(&Interaction {
                                user: u.id,
                                decision_index: u.decisions,
                                study_week: week,
                                state,
                                action,
                                probability,
                                reward,
                            })
                            .map_err(policy_err(day))?;
                    }
                    records.push(TrialRecord {
                        trial_seed: seed,
                        user: u.id,
                        group: u.profile.group,
                        cohort: u.cohort,
                        day,
                        minute,
                        decision_index: available.then_some(u.decisions),
                        week_in_study: week + 1,
                        state,
                        available,
                        action: chosen.map(|c| c.0),
                        probability: chosen.map(|c| c.1),
                        reward,
                        effect,
                        regret: if available {
                            population::regret(effect, treated)
                        } else {
                            0.0
                        },
                    });
                    reward
                } else {
                    population::baseline_reward(mu, sigma, &mut u.rng)
                };
                u.active = steps > threshold;
            }
            minute += TICK_MINUTES;
        }
    }

    Ok(TrialOutcome {
        seed,
        profiles: users.iter().map(|u| u.profile).collect(),
        records,
        fits,
    })
}
