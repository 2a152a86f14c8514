//! Simulated users and their treatment effects.

use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::SimError;
use crate::model::{layout, ContextState, STATE_LEN};

/// Number of study weeks with their own disengagement coefficient; later
/// weeks reuse the last one.
pub const BURDEN_WEEKS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PopulationSetting {
    Homogeneous,
    BiModal,
    Smooth,
}

impl PopulationSetting {
    pub const ALL: [PopulationSetting; 3] = [
        PopulationSetting::Homogeneous,
        PopulationSetting::BiModal,
        PopulationSetting::Smooth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PopulationSetting::Homogeneous => "homogeneous",
            PopulationSetting::BiModal => "bi-modal",
            PopulationSetting::Smooth => "smooth",
        }
    }
}

impl fmt::Display for PopulationSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownSetting;

impl fmt::Display for UnknownSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown setting; expected one of homogeneous, bi-modal, smooth")
    }
}

impl FromStr for PopulationSetting {
    type Err = UnknownSetting;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PopulationSetting::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or(UnknownSetting)
    }
}

/// Numeric settings of the three populations and the disengagement model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PopulationParams {
    /// Treatment-by-state coefficients in state layout order; the location
    /// entry is replaced by each user's own value.
    pub base_effect: [f64; STATE_LEN],
    /// `(Z, β^l)` of the low- and high-activity groups.
    pub bimodal: [(f64, f64); 2],
    /// Variance of the person effect Z in the smooth population.
    pub smooth_person_var: f64,
    /// Variance of the location coefficient in the smooth population.
    pub smooth_location_var: f64,
    /// Effect of being in study week 0, 1, …, 11.
    pub burden: [f64; BURDEN_WEEKS],
}

impl Default for PopulationParams {
    fn default() -> Self {
        let mut burden = [0.0; BURDEN_WEEKS];
        let start = -0.3;
        let end = -0.6;
        for (w, b) in burden.iter_mut().enumerate().skip(7) {
            *b = start + (end - start) * (w - 7) as f64 / 4.0;
        }
        let mut base_effect = [0.0; STATE_LEN];
        base_effect[layout::INTERCEPT] = 0.05;
        base_effect[layout::TIME_OF_DAY] = 0.45;
        base_effect[layout::DAY_OF_WEEK] = -0.8;
        Self {
            base_effect,
            bimodal: [(0.1, 0.1), (-0.3, -0.1)],
            smooth_person_var: 0.35,
            smooth_location_var: 0.1,
            burden,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.smooth_person_var >= 0.0 && self.smooth_location_var >= 0.0) {
            return Err(SimError::Config("smooth variances must be non-negative"));
        }
        let finite = self
            .base_effect
            .iter()
            .chain(&self.burden)
            .chain(self.bimodal.iter().flat_map(|(a, b)| [a, b]))
            .all(|x| x.is_finite());
        if !finite {
            return Err(SimError::Config("population parameters must be finite"));
        }
        Ok(())
    }

    pub fn burden_effect(&self, week: u32) -> f64 {
        self.burden[(week as usize).min(BURDEN_WEEKS - 1)]
    }
}

/// Generative truth for one simulated user.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UserProfile {
    /// 1 = low activity, 2 = high activity.
    pub group: u8,
    pub person_effect: f64,
    pub beta: [f64; STATE_LEN],
}

impl UserProfile {
    /// `Sᵀβ + Z`.
    pub fn treatment_effect(&self, state: &ContextState) -> f64 {
        state
            .vector()
            .iter()
            .zip(&self.beta)
            .map(|(s, b)| s * b)
            .sum::<f64>()
            + self.person_effect
    }

    pub fn location_effect(&self) -> f64 {
        self.beta[layout::LOCATION]
    }
}

pub fn sample_user_profile<R: Rng + ?Sized>(
    setting: PopulationSetting,
    params: &PopulationParams,
    rng: &mut R,
) -> Result<UserProfile, SimError> {
    let group: u8 = if rng.random::<bool>() { 1 } else { 2 };
    let (z, location) = match setting {
        PopulationSetting::Homogeneous => (0.0, 0.0),
        PopulationSetting::BiModal => params.bimodal[(group - 1) as usize],
        PopulationSetting::Smooth => {
            let z = Normal::new(0.0, libm::sqrt(params.smooth_person_var))
                .map_err(|_| SimError::Config("smooth_person_var"))?;
            let l = Normal::new(0.0, libm::sqrt(params.smooth_location_var))
                .map_err(|_| SimError::Config("smooth_location_var"))?;
            (z.sample(rng), l.sample(rng))
        }
    };
    let mut beta = params.base_effect;
    beta[layout::LOCATION] = location;
    Ok(UserProfile {
        group,
        person_effect: z,
        beta,
    })
}

/// `N(μ, σ²)` draw; exactly `μ` when `σ = 0`.
pub fn baseline_reward<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = rand_distr::StandardNormal.sample(rng);
    mu + sigma * z
}

/// The total treatment effect: `Sᵀβ + Z`, plus the week's disengagement
/// term when enabled.
pub fn total_effect(
    profile: &UserProfile,
    state: &ContextState,
    week: u32,
    burden: Option<&PopulationParams>,
) -> f64 {
    profile.treatment_effect(state) + burden.map_or(0.0, |p| p.burden_effect(week))
}

/// Baseline draw plus the treatment effect when `treated`.
#[allow(clippy::too_many_arguments)]
pub fn treated_reward<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    state: &ContextState,
    treated: bool,
    profile: &UserProfile,
    week: u32,
    burden: Option<&PopulationParams>,
    rng: &mut R,
) -> f64 {
    let base = baseline_reward(mu, sigma, rng);
    if treated {
        base + total_effect(profile, state, week, burden)
    } else {
        base
    }
}

pub fn optimal_treatment(effect: f64) -> bool {
    effect >= 0.0
}

/// `|effect|` when the action differs from the optimal one, else 0.
pub fn regret(effect: f64, treated: bool) -> f64 {
    if treated == optimal_treatment(effect) {
        0.0
    } else {
        libm::fabs(effect)
    }
}
