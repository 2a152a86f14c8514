//! Domain types shared by the policies and the simulator: context states,
//! actions, logged interactions, the action-centered feature map and the
//! hyperparameters of the mixed-effects reward model.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;

/// Number of entries in the full state vector, intercept included.
pub const STATE_LEN: usize = 6;

/// Positions of each entry in [`ContextState::vector`].
pub mod layout {
    pub const INTERCEPT: usize = 0;
    pub const TIME_OF_DAY: usize = 1;
    pub const DAY_OF_WEEK: usize = 2;
    pub const PRIOR_ACTIVITY: usize = 3;
    pub const LOCATION: usize = 4;
    pub const TEMPERATURE: usize = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The binary treatment. `Suggestion` (1) is the activity suggestion,
/// `Message` (0) the short anti-sedentary message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Action {
    Message,
    Suggestion,
}

impl Action {
    pub fn from_indicator(treat: bool) -> Self {
        if treat {
            Action::Suggestion
        } else {
            Action::Message
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Action::Message => 0.0,
            Action::Suggestion => 1.0,
        }
    }

    pub fn is_treatment(self) -> bool {
        self == Action::Suggestion
    }
}

/// Binary-coded context at a decision time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContextState {
    /// morning (9:00 to 15:00) = false, afternoon = true
    pub afternoon: bool,
    pub weekend: bool,
    pub hot: bool,
    /// step count over the preceding 30 minutes above the reference median
    pub active: bool,
    /// home or work = true, anywhere else = false
    pub home_or_work: bool,
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl ContextState {
    /// Intercept-augmented state vector in the fixed [`layout`] order.
    pub fn vector(&self) -> [f64; STATE_LEN] {
        [
            1.0,
            ind(self.afternoon),
            ind(self.weekend),
            ind(self.active),
            ind(self.home_or_work),
            ind(self.hot),
        ]
    }
}

/// Feature vector φ(S, A).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `φ = (S, π·S, (A − π)·S)`.
pub fn build_phi(state: &[f64], probability: f64, action: Action) -> FeatureVector {
    let centered = action.value() - probability;
    let mut out = Vec::with_capacity(3 * state.len());
    out.extend_from_slice(state);
    out.extend(state.iter().map(|s| probability * s));
    out.extend(state.iter().map(|s| centered * s));
    FeatureVector(out)
}

/// Which entries of the state vector feed φ. The default drops temperature,
/// which only drives the simulated step counts.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureMap {
    state_entries: Vec<usize>,
}

impl Default for FeatureMap {
    fn default() -> Self {
        Self {
            state_entries: alloc::vec![
                layout::INTERCEPT,
                layout::TIME_OF_DAY,
                layout::DAY_OF_WEEK,
                layout::PRIOR_ACTIVITY,
                layout::LOCATION,
            ],
        }
    }
}

impl FeatureMap {
    pub fn new(state_entries: Vec<usize>) -> Result<Self, ModelError> {
        if state_entries.is_empty() {
            return Err(ModelError::EmptyFeatureMask);
        }
        if let Some(&bad) = state_entries.iter().find(|&&e| e >= STATE_LEN) {
            return Err(ModelError::StateIndexOutOfRange(bad));
        }
        Ok(Self { state_entries })
    }

    /// Every state entry, temperature included.
    pub fn full() -> Self {
        Self {
            state_entries: (0..STATE_LEN).collect(),
        }
    }

    pub fn state_entries(&self) -> &[usize] {
        &self.state_entries
    }

    pub fn state_len(&self) -> usize {
        self.state_entries.len()
    }

    /// Length p of φ.
    pub fn dim(&self) -> usize {
        3 * self.state_entries.len()
    }

    pub fn state_vector(&self, state: &ContextState) -> Vec<f64> {
        let full = state.vector();
        self.state_entries.iter().map(|&e| full[e]).collect()
    }

    pub fn phi(&self, state: &ContextState, probability: f64, action: Action) -> FeatureVector {
        build_phi(&self.state_vector(state), probability, action)
    }

    /// `φ(s, 1) − φ(s, 0) = (0, 0, S)`, free of the randomization probability.
    pub fn action_contrast(&self, state: &ContextState) -> FeatureVector {
        let s = self.state_vector(state);
        let k = s.len();
        let mut out = alloc::vec![0.0; 3 * k];
        out[2 * k..].copy_from_slice(&s);
        FeatureVector(out)
    }

    /// Coordinate of φ holding `block` (0, 1 or 2) times the given state entry,
    /// or `None` if that entry is masked out.
    pub fn coordinate(&self, block: usize, entry: usize) -> Option<usize> {
        let pos = self.state_entries.iter().position(|&e| e == entry)?;
        (block < 3).then(|| block * self.state_len() + pos)
    }

    /// Intercept and location coefficients of the baseline and the
    /// action-centered blocks: the default random-effect coordinates.
    pub fn default_random_effect_coordinates(&self) -> Vec<usize> {
        [0usize, 2]
            .iter()
            .flat_map(|&b| [layout::INTERCEPT, layout::LOCATION].map(move |e| (b, e)))
            .filter_map(|(b, e)| self.coordinate(b, e))
            .collect()
    }

    /// The action-centered intercept: the default coordinate carrying the
    /// time-varying effect.
    pub fn default_time_effect_coordinates(&self) -> Vec<usize> {
        self.coordinate(2, layout::INTERCEPT).into_iter().collect()
    }
}

/// A raw reading that is either a continuous measurement or an already
/// binary-coded value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reading {
    Continuous(f64),
    Coded(bool),
}

impl Reading {
    fn above(self, threshold: f64) -> bool {
        match self {
            Reading::Continuous(x) => x > threshold,
            Reading::Coded(b) => b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Place {
    Home,
    Work,
    Other,
}

/// Raw sensor-level measurements at a decision time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawMeasurements {
    /// minutes after midnight
    pub minute_of_day: Option<u32>,
    /// 0 = Monday … 6 = Sunday
    pub weekday: Option<u8>,
    /// degrees, or an already coded cold/hot value
    pub temperature: Option<Reading>,
    /// preceding 30-minute log step count, or an already coded low/high value
    pub prior_steps: Option<Reading>,
    pub place: Option<Place>,
}

impl RawMeasurements {
    /// Raw measurements that encode back to exactly `state`.
    pub fn from_state(state: &ContextState) -> Self {
        Self {
            minute_of_day: Some(if state.afternoon { 15 * 60 } else { 9 * 60 }),
            weekday: Some(if state.weekend { 5 } else { 0 }),
            temperature: Some(Reading::Coded(state.hot)),
            prior_steps: Some(Reading::Coded(state.active)),
            place: Some(if state.home_or_work {
                Place::Home
            } else {
                Place::Other
            }),
        }
    }
}

/// Cut points for the continuous measurements. Both default to medians of
/// a reference corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncodingThresholds {
    pub temperature: f64,
    pub prior_log_steps: f64,
}

/// Afternoon starts at 15:00.
pub const AFTERNOON_START_MINUTE: u32 = 15 * 60;

pub fn encode_state(
    raw: &RawMeasurements,
    thresholds: &EncodingThresholds,
) -> Result<ContextState, ModelError> {
    let minute = raw
        .minute_of_day
        .ok_or(ModelError::MissingMeasurement("minute_of_day"))?;
    let weekday = raw.weekday.ok_or(ModelError::MissingMeasurement("weekday"))?;
    if weekday > 6 {
        return Err(ModelError::InvalidWeekday(weekday));
    }
    let temperature = raw
        .temperature
        .ok_or(ModelError::MissingMeasurement("temperature"))?;
    let prior = raw
        .prior_steps
        .ok_or(ModelError::MissingMeasurement("prior_steps"))?;
    let place = raw.place.ok_or(ModelError::MissingMeasurement("place"))?;
    Ok(ContextState {
        afternoon: minute >= AFTERNOON_START_MINUTE,
        weekend: weekday >= 5,
        hot: temperature.above(thresholds.temperature),
        active: prior.above(thresholds.prior_log_steps),
        home_or_work: matches!(place, Place::Home | Place::Work),
    })
}

/// One logged decision.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Interaction {
    pub user: UserId,
    /// 1-based count of this user's decisions.
    pub decision_index: u32,
    /// Completed weeks in the study at the decision; the time coordinate of
    /// the time-varying models.
    pub study_week: u32,
    pub state: ContextState,
    pub action: Action,
    /// Clipped randomization probability actually used.
    pub probability: f64,
    /// Log step count.
    pub reward: f64,
}

/// Prior and variance components of the reward model. All matrices are p×p.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    pub random_effect_cov: DMatrix<f64>,
    pub noise_var: f64,
    pub time_effect_cov: Option<DMatrix<f64>>,
    pub time_lengthscale: Option<f64>,
}

impl Hyperparameters {
    /// Stationary hyperparameters with diagonal covariances.
    pub fn diagonal(
        prior_mean: Vec<f64>,
        prior_var: &[f64],
        random_effect_var: &[f64],
        noise_var: f64,
    ) -> Result<Self, ModelError> {
        let p = prior_mean.len();
        if prior_var.len() != p || random_effect_var.len() != p {
            return Err(ModelError::DimensionMismatch {
                expected: p,
                actual: prior_var.len().max(random_effect_var.len()),
            });
        }
        let hp = Self {
            prior_mean: DVector::from_vec(prior_mean),
            prior_cov: DMatrix::from_diagonal(&DVector::from_column_slice(prior_var)),
            random_effect_cov: DMatrix::from_diagonal(&DVector::from_column_slice(
                random_effect_var,
            )),
            noise_var,
            time_effect_cov: None,
            time_lengthscale: None,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn with_time_effect(mut self, cov: DMatrix<f64>, lengthscale: f64) -> Self {
        self.time_effect_cov = Some(cov);
        self.time_lengthscale = Some(lengthscale);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let p = self.dim();
        let mut square = [&self.prior_cov, &self.random_effect_cov]
            .into_iter()
            .chain(self.time_effect_cov.as_ref());
        if let Some(m) = square.find(|m| m.nrows() != p || m.ncols() != p) {
            return Err(ModelError::DimensionMismatch {
                expected: p,
                actual: m.nrows().max(m.ncols()),
            });
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(ModelError::NonPositive("noise_var"));
        }
        if let Some(l) = self.time_lengthscale {
            if !(l > 0.0 && l.is_finite()) {
                return Err(ModelError::NonPositive("time_lengthscale"));
            }
        }
        for (name, m) in [
            ("prior_cov", Some(&self.prior_cov)),
            ("random_effect_cov", Some(&self.random_effect_cov)),
            ("time_effect_cov", self.time_effect_cov.as_ref()),
        ] {
            if let Some(m) = m {
                if !crate::linalg::is_symmetric_psd(m, 1e-8) {
                    return Err(ModelError::NotPsd(name));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn state(bits: u8) -> ContextState {
        ContextState {
            afternoon: bits & 1 != 0,
            weekend: bits & 2 != 0,
            hot: bits & 4 != 0,
            active: bits & 8 != 0,
            home_or_work: bits & 16 != 0,
        }
    }

    #[test]
    fn phi_unit_intercept() {
        let s = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let phi = build_phi(&s, 0.5, Action::Suggestion);
        let mut expected = vec![0.0; 18];
        expected[0] = 1.0;
        expected[6] = 0.5;
        expected[12] = 0.5;
        assert_eq!(phi.0, expected);
    }

    #[test]
    fn phi_centering_vanishes_when_action_equals_probability() {
        let s = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let phi = build_phi(&s, 1.0, Action::Suggestion);
        assert!(phi.0[12..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn phi_untreated_block_is_negative_probability_times_state() {
        let s = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let phi = build_phi(&s, 0.2, Action::Message);
        let third: Vec<f64> = s.iter().map(|x| -0.2 * x).collect();
        assert_eq!(&phi.0[12..], third.as_slice());
    }

    #[test]
    fn default_map_drops_temperature() {
        let fm = FeatureMap::default();
        assert_eq!(fm.dim(), 15);
        let s = fm.state_vector(&state(0b11111));
        assert_eq!(s, vec![1.0; 5]);
        assert_eq!(fm.coordinate(0, layout::TEMPERATURE), None);
        assert_eq!(fm.default_random_effect_coordinates(), vec![0, 4, 10, 14]);
        assert_eq!(fm.default_time_effect_coordinates(), vec![10]);
    }

    #[test]
    fn feature_map_rejects_bad_mask() {
        assert!(FeatureMap::new(vec![]).is_err());
        assert!(FeatureMap::new(vec![0, 6]).is_err());
    }

    #[test]
    fn encode_table_examples() {
        let th = EncodingThresholds {
            temperature: 15.0,
            prior_log_steps: 3.0,
        };
        let raw = RawMeasurements {
            minute_of_day: Some(10 * 60),
            weekday: Some(5),
            temperature: Some(Reading::Continuous(21.0)),
            prior_steps: Some(Reading::Continuous(2.0)),
            place: Some(Place::Work),
        };
        let s = encode_state(&raw, &th).unwrap();
        assert!(!s.afternoon);
        assert!(s.weekend);
        assert!(s.hot);
        assert!(!s.active);
        assert!(s.home_or_work);
        let afternoon = RawMeasurements {
            minute_of_day: Some(16 * 60),
            ..raw
        };
        assert!(encode_state(&afternoon, &th).unwrap().afternoon);
    }

    #[test]
    fn encode_missing_field() {
        let th = EncodingThresholds {
            temperature: 0.0,
            prior_log_steps: 0.0,
        };
        let raw = RawMeasurements {
            place: None,
            ..RawMeasurements::from_state(&state(3))
        };
        assert_eq!(
            encode_state(&raw, &th),
            Err(ModelError::MissingMeasurement("place"))
        );
    }

    #[test]
    fn diagonal_hyperparameters_validate() {
        assert!(Hyperparameters::diagonal(vec![0.0; 2], &[1.0, 1.0], &[0.0, 0.5], 1.0).is_ok());
        assert!(Hyperparameters::diagonal(vec![0.0; 2], &[1.0, 1.0], &[0.0, 0.5], 0.0).is_err());
        assert!(Hyperparameters::diagonal(vec![0.0; 2], &[1.0, -1.0], &[0.0, 0.5], 1.0).is_err());
        assert!(Hyperparameters::diagonal(vec![0.0; 2], &[1.0], &[0.0, 0.5], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn encoding_is_idempotent(bits in 0u8..32) {
            let th = EncodingThresholds { temperature: 20.0, prior_log_steps: 4.0 };
            let s = state(bits);
            prop_assert_eq!(encode_state(&RawMeasurements::from_state(&s), &th).unwrap(), s);
        }

        #[test]
        fn action_difference_is_the_centered_block(bits in 0u8..32, pi in 0.0f64..=1.0) {
            let fm = FeatureMap::default();
            let s = state(bits);
            let d: Vec<f64> = fm.phi(&s, pi, Action::Suggestion).0.iter()
                .zip(fm.phi(&s, pi, Action::Message).0.iter())
                .map(|(a, b)| a - b)
                .collect();
            let contrast = fm.action_contrast(&s).0;
            for (x, y) in d.iter().zip(contrast.iter()) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }

        #[test]
        fn phi_is_linear_in_state(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            c in -3.0f64..3.0,
            pi in 0.0f64..=1.0,
            treat: bool,
        ) {
            let act = Action::from_indicator(treat);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
            let lhs = build_phi(&sum, pi, act).0;
            let pa = build_phi(&a, pi, act).0;
            let pb = build_phi(&b, pi, act).0;
            for i in 0..18 {
                prop_assert!((lhs[i] - (pa[i] + c * pb[i])).abs() < 1e-12);
            }
        }
    }
}
