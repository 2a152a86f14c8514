//! Lookup tables derived once from a corpus and shared by every trial.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::SimError;
use crate::sim::corpus::{self, StepContext, SyntheticCorpus, Timestamp};

/// Index of an optional previous reading: none, false, true.
fn prev_slot(prev: Option<bool>) -> usize {
    match prev {
        None => 0,
        Some(false) => 1,
        Some(true) => 2,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    corpus: SyntheticCorpus,
    /// `[afternoon][weekend][month][prev]`
    hot: Vec<f64>,
    /// `[group-1][afternoon][weekend][month][prev]`
    home_or_work: Vec<f64>,
    /// `[group-1][afternoon][weekend][hot][active][home_or_work]`
    steps: Vec<(f64, f64)>,
}

fn hot_index(ts: Timestamp, prev: Option<bool>) -> usize {
    ((ts.afternoon as usize * 2 + ts.weekend as usize) * 12 + ts.month as usize) * 3 + prev_slot(prev)
}

fn steps_index(q: StepContext) -> usize {
    let bits = [q.afternoon, q.weekend, q.hot, q.active, q.home_or_work];
    bits.iter()
        .fold((q.group - 1) as usize, |acc, b| acc * 2 + *b as usize)
}

fn timestamps() -> impl Iterator<Item = Timestamp> {
    (0..2u8).flat_map(|a| {
        (0..2u8).flat_map(move |w| {
            (0..12u8).map(move |m| Timestamp {
                afternoon: a == 1,
                weekend: w == 1,
                month: m,
            })
        })
    })
}

const PREVS: [Option<bool>; 3] = [None, Some(false), Some(true)];

impl Environment {
    pub fn new(corpus: SyntheticCorpus) -> Result<Self, SimError> {
        let mut hot = alloc::vec![0.0; 2 * 2 * 12 * 3];
        let mut home_or_work = alloc::vec![0.0; 2 * 2 * 2 * 12 * 3];
        for ts in timestamps() {
            for prev in PREVS {
                hot[hot_index(ts, prev)] = corpus::temperature_probability(&corpus, ts, prev)?;
                for group in [1u8, 2] {
                    home_or_work[(group as usize - 1) * 144 + hot_index(ts, prev)] =
                        corpus::location_probability(&corpus, ts, group, prev)?;
                }
            }
        }
        let mut steps = alloc::vec![(0.0, 0.0); 64];
        for code in 0..64usize {
            let bit = |k: usize| (code >> k) & 1 == 1;
            let q = StepContext {
                group: 1 + bit(5) as u8,
                afternoon: bit(4),
                weekend: bit(3),
                hot: bit(2),
                active: bit(1),
                home_or_work: bit(0),
            };
            steps[steps_index(q)] = corpus::step_statistics(&corpus, q)?;
        }
        Ok(Self {
            corpus,
            hot,
            home_or_work,
            steps,
        })
    }

    pub fn corpus(&self) -> &SyntheticCorpus {
        &self.corpus
    }

    pub fn prior_threshold(&self) -> f64 {
        self.corpus.prior_threshold()
    }

    pub fn hot_probability(&self, ts: Timestamp, prev: Option<bool>) -> f64 {
        self.hot[hot_index(ts, prev)]
    }

    pub fn home_or_work_probability(&self, ts: Timestamp, group: u8, prev: Option<bool>) -> f64 {
        self.home_or_work[(group as usize - 1) * 144 + hot_index(ts, prev)]
    }

    pub fn step_statistics(&self, q: StepContext) -> (f64, f64) {
        self.steps[steps_index(q)]
    }

    pub fn draw_temperature<R: Rng + ?Sized>(&self, ts: Timestamp, prev: Option<bool>, rng: &mut R) -> bool {
        rng.random::<f64>() < self.hot_probability(ts, prev)
    }

    pub fn draw_location<R: Rng + ?Sized>(
        &self,
        ts: Timestamp,
        group: u8,
        prev: Option<bool>,
        rng: &mut R,
    ) -> bool {
        rng.random::<f64>() < self.home_or_work_probability(ts, group, prev)
    }
}
