//! Synthetic historical corpus and the lookups the simulator builds on.
//!
//! Each corpus user is followed through 30-minute ticks from 8:30 to 17:00.
//! At the five decision windows the context is logged together with the
//! log step count of the following half hour and that of the half hour
//! before. Temperature and location move at the decision windows only.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::SimError;
use crate::model::AFTERNOON_START_MINUTE;

/// Decision windows, in minutes after midnight.
pub const DECISION_MINUTES: [u32; 5] = [540, 660, 780, 900, 1020];
pub const TICK_MINUTES: u32 = 30;
pub const FIRST_TICK_MINUTE: u32 = 510;
/// Minimum number of records a context needs before it is used as is.
pub const MATCH_THRESHOLD: usize = 30;

/// Month (0 = January) of a day of the year.
pub fn month_of(day_of_year: u32) -> u8 {
    ((day_of_year % 365) * 12 / 365) as u8
}

/// A conditioning variable of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    Group,
    TimeOfDay,
    DayOfWeek,
    Month,
    Temperature,
    Location,
    PriorLevel,
    Action,
    PrevTemperature,
    PrevLocation,
}

/// What [`state_functions`] returns for each matching record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Field(Field),
    LogSteps,
}

/// Conditioning context: a list of `(field, value)` constraints.
pub type Context = Vec<(Field, u8)>;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusRecord {
    pub user: u32,
    pub day: u32,
    pub minute: u32,
    /// 1 = low activity, 2 = high activity.
    pub group: u8,
    pub afternoon: bool,
    pub weekend: bool,
    pub month: u8,
    pub hot: bool,
    pub prev_hot: Option<bool>,
    pub home_or_work: bool,
    pub prev_home_or_work: Option<bool>,
    pub prior_log_steps: f64,
    pub active: bool,
    pub action: bool,
    pub log_steps: f64,
}

impl CorpusRecord {
    pub fn field(&self, f: Field) -> Option<u8> {
        Some(match f {
            Field::Group => self.group,
            Field::TimeOfDay => self.afternoon as u8,
            Field::DayOfWeek => self.weekend as u8,
            Field::Month => self.month,
            Field::Temperature => self.hot as u8,
            Field::Location => self.home_or_work as u8,
            Field::PriorLevel => self.active as u8,
            Field::Action => self.action as u8,
            Field::PrevTemperature => self.prev_hot? as u8,
            Field::PrevLocation => self.prev_home_or_work? as u8,
        })
    }

    pub fn matches(&self, ctx: &[(Field, u8)]) -> bool {
        ctx.iter().all(|&(f, v)| self.field(f) == Some(v))
    }
}

/// Generative truth behind the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CorpusConfig {
    pub users: u32,
    pub days: u32,
    /// Mean log step count of a half hour, by activity group.
    pub base_log_steps: [f64; 2],
    pub afternoon_shift: f64,
    pub weekend_shift: f64,
    pub hot_shift: f64,
    pub home_or_work_shift: f64,
    /// Pull of the previous half hour's log steps.
    pub persistence: f64,
    pub noise_sd: [f64; 2],
    /// Chance of hot weather: `mean + amplitude·(−cos(2π·month/12))`.
    pub hot_mean: f64,
    pub hot_amplitude: f64,
    pub hot_afternoon_shift: f64,
    pub hot_stickiness: f64,
    /// Chance of being at home or work, weekday and weekend.
    pub home_or_work: [f64; 2],
    pub home_or_work_afternoon_shift: f64,
    pub home_or_work_group2_shift: f64,
    pub location_stickiness: f64,
    pub treatment_probability: f64,
    pub match_threshold: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            users: 40,
            days: 42,
            base_log_steps: [3.1, 3.3],
            afternoon_shift: 0.3,
            weekend_shift: -0.3,
            hot_shift: -0.2,
            home_or_work_shift: -0.4,
            persistence: 0.3,
            noise_sd: [1.0, 1.0],
            hot_mean: 0.5,
            hot_amplitude: 0.3,
            hot_afternoon_shift: 0.1,
            hot_stickiness: 0.6,
            home_or_work: [0.7, 0.55],
            home_or_work_afternoon_shift: -0.1,
            home_or_work_group2_shift: -0.03,
            location_stickiness: 0.5,
            treatment_probability: 0.6,
            match_threshold: MATCH_THRESHOLD,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.users < 2 || self.days == 0 {
            return Err(SimError::Config("corpus needs at least two users and one day"));
        }
        if self.noise_sd.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(SimError::Config("corpus noise_sd must be non-negative"));
        }
        let probs = [
            self.hot_stickiness,
            self.location_stickiness,
            self.treatment_probability,
            self.home_or_work[0],
            self.home_or_work[1],
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SimError::Config("corpus probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    records: Vec<CorpusRecord>,
    prior_threshold: f64,
    match_threshold: usize,
}

fn bern<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p.clamp(0.0, 1.0)
}

fn sticky<R: Rng + ?Sized>(rng: &mut R, prev: Option<bool>, stickiness: f64, p: f64) -> bool {
    let p = match prev {
        Some(v) => stickiness * f64::from(u8::from(v)) + (1.0 - stickiness) * p,
        None => p,
    };
    bern(rng, p)
}

pub fn generate_corpus(config: &CorpusConfig, seed: u64) -> Result<SyntheticCorpus, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity((config.users * config.days) as usize * DECISION_MINUTES.len());
    for user in 0..config.users {
        let group: u8 = if user % 2 == 0 { 1 } else { 2 };
        let g = (group - 1) as usize;
        let start_day: u32 = rng.random_range(0..365);
        let start_weekday: u32 = rng.random_range(0..7);
        let noise = Normal::new(0.0, config.noise_sd[g]).map_err(|_| SimError::Config("noise_sd"))?;
        let mut hot: Option<bool> = None;
        let mut loc: Option<bool> = None;
        for day in 0..config.days {
            let weekend = (start_weekday + day) % 7 >= 5;
            let month = month_of(start_day + day);
            let season = -libm::cos(2.0 * PI * f64::from(month) / 12.0);
            let mut prev_steps = config.base_log_steps[g];
            let mut current_hot = hot.unwrap_or(false);
            let mut current_loc = loc.unwrap_or(true);
            let mut minute = FIRST_TICK_MINUTE;
            let mut pending_prior = prev_steps;
            while minute <= *DECISION_MINUTES.last().expect("nonempty") {
                let afternoon = minute >= AFTERNOON_START_MINUTE;
                let decision = DECISION_MINUTES.contains(&minute);
                let (prev_hot, prev_loc) = (hot, loc);
                if decision {
                    let p_hot = config.hot_mean
                        + config.hot_amplitude * season
                        + if afternoon { config.hot_afternoon_shift } else { 0.0 };
                    current_hot = sticky(&mut rng, hot, config.hot_stickiness, p_hot);
                    let p_loc = config.home_or_work[weekend as usize]
                        + if afternoon { config.home_or_work_afternoon_shift } else { 0.0 }
                        + if group == 2 { config.home_or_work_group2_shift } else { 0.0 };
                    current_loc = sticky(&mut rng, loc, config.location_stickiness, p_loc);
                    hot = Some(current_hot);
                    loc = Some(current_loc);
                }
                let mean = config.base_log_steps[g]
                    + if afternoon { config.afternoon_shift } else { 0.0 }
                    + if weekend { config.weekend_shift } else { 0.0 }
                    + if current_hot { config.hot_shift } else { 0.0 }
                    + if current_loc { config.home_or_work_shift } else { 0.0 }
                    + config.persistence * (prev_steps - config.base_log_steps[g]);
                let steps = (mean + noise.sample(&mut rng)).max(0.0);
                if decision {
                    records.push(CorpusRecord {
                        user,
                        day,
                        minute,
                        group,
                        afternoon,
                        weekend,
                        month,
                        hot: current_hot,
                        prev_hot,
                        home_or_work: current_loc,
                        prev_home_or_work: prev_loc,
                        prior_log_steps: pending_prior,
                        active: false,
                        action: bern(&mut rng, config.treatment_probability),
                        log_steps: steps,
                    });
                }
                pending_prior = steps;
                prev_steps = steps;
                minute += TICK_MINUTES;
            }
        }
    }
    let mut priors: Vec<f64> = records.iter().map(|r| r.prior_log_steps).collect();
    let threshold = median(&mut priors);
    for r in &mut records {
        r.active = r.prior_log_steps > threshold;
    }
    Ok(SyntheticCorpus {
        records,
        prior_threshold: threshold,
        match_threshold: config.match_threshold,
    })
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl SyntheticCorpus {
    /// A corpus from explicit records; `active` is recomputed from the
    /// median prior log step count.
    pub fn from_records(mut records: Vec<CorpusRecord>, match_threshold: usize) -> Self {
        let mut priors: Vec<f64> = records.iter().map(|r| r.prior_log_steps).collect();
        let threshold = median(&mut priors);
        for r in &mut records {
            r.active = r.prior_log_steps > threshold;
        }
        Self {
            records,
            prior_threshold: threshold,
            match_threshold,
        }
    }

    /// A corpus whose records are taken as they are, `active` included.
    pub fn from_coded_records(records: Vec<CorpusRecord>, prior_threshold: f64, match_threshold: usize) -> Self {
        Self {
            records,
            prior_threshold,
            match_threshold,
        }
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Median prior log step count: the high/low activity cut.
    pub fn prior_threshold(&self) -> f64 {
        self.prior_threshold
    }

    pub fn match_threshold(&self) -> usize {
        self.match_threshold
    }

    pub fn count(&self, ctx: &[(Field, u8)]) -> usize {
        self.records.iter().filter(|r| r.matches(ctx)).count()
    }

    pub fn mean_log_steps(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.log_steps).sum::<f64>() / self.records.len() as f64
    }

    pub fn log_steps_variance(&self) -> f64 {
        let n = self.records.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_log_steps();
        self.records.iter().map(|r| (r.log_steps - m) * (r.log_steps - m)).sum::<f64>() / (n - 1) as f64
    }
}

/// Values of `target` over the records matching `ctx` exactly.
pub fn state_functions(corpus: &SyntheticCorpus, ctx: &[(Field, u8)], target: Target) -> Vec<f64> {
    corpus
        .records
        .iter()
        .filter(|r| r.matches(ctx))
        .filter_map(|r| match target {
            Target::LogSteps => Some(r.log_steps),
            Target::Field(f) => r.field(f).map(f64::from),
        })
        .collect()
}

/// Index subsets of `0..d` of size `k`, in lexicographic order.
fn combinations(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            if d - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, d, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, d, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// The closest context with enough data: `ctx` itself if it has more than
/// the corpus threshold of records, otherwise the best-populated sub-context
/// of the largest size that clears the threshold. Ties go to the first
/// subset in lexicographic order of retained positions.
pub fn find_match(corpus: &SyntheticCorpus, ctx: &[(Field, u8)]) -> Result<Context, SimError> {
    let threshold = corpus.match_threshold;
    if corpus.count(ctx) > threshold {
        return Ok(ctx.to_vec());
    }
    let d = ctx.len();
    for k in (1..d).rev() {
        let mut best: Option<(usize, Context)> = None;
        for idx in combinations(d, k) {
            let sub: Context = idx.iter().map(|&i| ctx[i]).collect();
            let n = corpus.count(&sub);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, sub));
            }
        }
        if let Some((n, sub)) = best {
            if n > threshold {
                return Ok(sub);
            }
        }
    }
    Err(SimError::NoMatch { threshold })
}

/// Share of `target` values equal to 1 among the records matching `ctx`,
/// falling back to [`find_match`] when nothing matches exactly.
pub fn indicator_frequency(
    corpus: &SyntheticCorpus,
    ctx: &[(Field, u8)],
    target: Field,
) -> Result<f64, SimError> {
    let mut xs = state_functions(corpus, ctx, Target::Field(target));
    if xs.is_empty() {
        xs = state_functions(corpus, &find_match(corpus, ctx)?, Target::Field(target));
    }
    if xs.is_empty() {
        return Err(SimError::NoMatch {
            threshold: corpus.match_threshold,
        });
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Calendar position of a decision window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timestamp {
    pub afternoon: bool,
    pub weekend: bool,
    pub month: u8,
}

impl Timestamp {
    fn context(&self) -> Context {
        alloc::vec![
            (Field::TimeOfDay, self.afternoon as u8),
            (Field::DayOfWeek, self.weekend as u8),
            (Field::Month, self.month),
        ]
    }
}

/// Chance of hot weather at `ts` given the previous reading.
pub fn temperature_probability(
    corpus: &SyntheticCorpus,
    ts: Timestamp,
    prev_hot: Option<bool>,
) -> Result<f64, SimError> {
    let mut ctx = ts.context();
    if let Some(h) = prev_hot {
        ctx.push((Field::PrevTemperature, h as u8));
    }
    indicator_frequency(corpus, &ctx, Field::Temperature)
}

/// Draws the shared temperature for `ts`.
pub fn get_temperature<R: Rng + ?Sized>(
    corpus: &SyntheticCorpus,
    ts: Timestamp,
    prev_hot: Option<bool>,
    rng: &mut R,
) -> Result<bool, SimError> {
    Ok(bern(rng, temperature_probability(corpus, ts, prev_hot)?))
}

/// Chance that a user of `group` is at home or work at `ts`.
pub fn location_probability(
    corpus: &SyntheticCorpus,
    ts: Timestamp,
    group: u8,
    prev_home_or_work: Option<bool>,
) -> Result<f64, SimError> {
    let mut ctx = ts.context();
    ctx.insert(0, (Field::Group, group));
    if let Some(l) = prev_home_or_work {
        ctx.push((Field::PrevLocation, l as u8));
    }
    indicator_frequency(corpus, &ctx, Field::Location)
}

pub fn get_location<R: Rng + ?Sized>(
    corpus: &SyntheticCorpus,
    ts: Timestamp,
    group: u8,
    prev_home_or_work: Option<bool>,
    rng: &mut R,
) -> Result<bool, SimError> {
    Ok(bern(rng, location_probability(corpus, ts, group, prev_home_or_work)?))
}

/// Conditioning context of the step-count model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    pub group: u8,
    pub afternoon: bool,
    pub weekend: bool,
    pub hot: bool,
    pub active: bool,
    pub home_or_work: bool,
}

impl StepContext {
    pub fn context(&self) -> Context {
        alloc::vec![
            (Field::Group, self.group),
            (Field::TimeOfDay, self.afternoon as u8),
            (Field::DayOfWeek, self.weekend as u8),
            (Field::Temperature, self.hot as u8),
            (Field::PriorLevel, self.active as u8),
            (Field::Location, self.home_or_work as u8),
        ]
    }
}

/// Empirical mean and standard deviation of the log step counts of the
/// matched context.
pub fn step_statistics(corpus: &SyntheticCorpus, q: StepContext) -> Result<(f64, f64), SimError> {
    let ctx = find_match(corpus, &q.context())?;
    let xs = state_functions(corpus, &ctx, Target::LogSteps);
    Ok(mean_sd(&xs))
}

/// Mean and sample standard deviation; a single value has zero spread.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, libm::sqrt(v))
}
