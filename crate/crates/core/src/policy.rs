//! Thompson-sampling treatment selection for each pooling strategy.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{GpError, PolicyError};
use crate::evidence::{self, FitOptions, FitOutcome, HyperparamBounds, ParameterSpace};
use crate::gp::{self, History, KernelVariant, Posterior};
use crate::latent::{self, LatentModel, SufficientStats};
use crate::model::{Action, ContextState, FeatureMap, FeatureVector, Hyperparameters, Interaction, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PolicyKind {
    IntelligentPooling,
    PersonSpecific,
    Complete,
    IntelligentPoolingTv,
    Tvgp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::IntelligentPooling,
        PolicyKind::PersonSpecific,
        PolicyKind::Complete,
        PolicyKind::IntelligentPoolingTv,
        PolicyKind::Tvgp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::IntelligentPooling => "intelligent-pooling",
            PolicyKind::PersonSpecific => "person-specific",
            PolicyKind::Complete => "complete",
            PolicyKind::IntelligentPoolingTv => "intelligent-pooling-tv",
            PolicyKind::Tvgp => "tvgp",
        }
    }

    /// The kernel this policy's reward model induces. `forgetting` only
    /// matters for [`PolicyKind::Tvgp`].
    pub fn variant(self, forgetting: f64) -> KernelVariant {
        match self {
            PolicyKind::IntelligentPooling => KernelVariant::Pooled,
            PolicyKind::PersonSpecific => KernelVariant::PersonSpecific,
            PolicyKind::Complete => KernelVariant::Complete,
            PolicyKind::IntelligentPoolingTv => KernelVariant::TimeVarying,
            PolicyKind::Tvgp => KernelVariant::Tvgp { forgetting },
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownPolicy;

impl fmt::Display for UnknownPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown policy; expected one of intelligent-pooling, person-specific, complete, intelligent-pooling-tv, tvgp")
    }
}

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or(UnknownPolicy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ClipBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { lo: 0.1, hi: 0.8 }
    }
}

impl ClipBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, PolicyError> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if 0.0 < self.lo && self.lo < self.hi && self.hi < 1.0 {
            Ok(())
        } else {
            Err(PolicyError::InvalidClip {
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

pub fn clip(pi: f64, bounds: ClipBounds) -> f64 {
    pi.max(bounds.lo).min(bounds.hi)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// `Pr{dᵀw̃ > 0}` for `w̃ ~ N(ŵ, Σ)` and the action contrast `d`.
pub fn randomization_probability(post: &Posterior, contrast: &FeatureVector) -> Result<f64, PolicyError> {
    let d = contrast.as_slice();
    if d.len() != post.dim() {
        return Err(GpError::DimensionMismatch {
            expected: post.dim(),
            actual: d.len(),
        }
        .into());
    }
    let mut mean = 0.0;
    let mut var = 0.0;
    for (i, di) in d.iter().enumerate() {
        if *di == 0.0 {
            continue;
        }
        mean += di * post.mean[i];
        for (j, dj) in d.iter().enumerate() {
            var += di * post.cov[(i, j)] * dj;
        }
    }
    if !mean.is_finite() || !var.is_finite() {
        return Err(GpError::NonFinite.into());
    }
    Ok(if var > 0.0 {
        standard_normal_cdf(mean / libm::sqrt(var))
    } else if mean > 0.0 {
        1.0
    } else if mean < 0.0 {
        0.0
    } else {
        0.5
    })
}

/// Bernoulli(`pi`) draw.
pub fn select_action<R: Rng + ?Sized>(pi: f64, rng: &mut R) -> Action {
    Action::from_indicator(rng.random::<f64>() < pi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub clip: ClipBounds,
    /// Per-week forgetting factor of the TV-GP kernel.
    pub forgetting: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            clip: ClipBounds::default(),
            forgetting: 0.2,
        }
    }

    pub fn variant(&self) -> KernelVariant {
        self.kind.variant(self.forgetting)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// Clipped probability of treatment.
    pub probability: f64,
    pub posterior: Posterior,
}

/// Kernel-space decision: the posterior of `user` at `time` given the whole
/// history, then a clipped Thompson-sampling draw.
#[allow(clippy::too_many_arguments)]
pub fn decide<R: Rng + ?Sized>(
    policy: &PolicyConfig,
    fmap: &FeatureMap,
    history: &History,
    hp: &Hyperparameters,
    user: UserId,
    time: f64,
    state: &ContextState,
    rng: &mut R,
) -> Result<Decision, PolicyError> {
    policy.clip.validate()?;
    let posterior = gp::posterior(history, user, time, hp, policy.variant())?;
    let pi = clip(
        randomization_probability(&posterior, &fmap.action_contrast(state))?,
        policy.clip,
    );
    Ok(Decision {
        action: select_action(pi, rng),
        probability: pi,
        posterior,
    })
}

/// Settings for a [`Learner`].
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub policy: PolicyConfig,
    pub feature_map: FeatureMap,
    pub random_effect_coords: Vec<usize>,
    pub time_effect_coords: Vec<usize>,
    /// Number of distinct weekly time slots.
    pub horizon: usize,
    pub bounds: HyperparamBounds,
    pub fit: FitOptions,
    /// Whether the variance components are re-estimated at all.
    pub fit_hyperparameters: bool,
}

/// Incremental Thompson-sampling learner used by the simulator.
///
/// Data are held as sufficient statistics of the weight-space model, so a
/// posterior refresh or an evidence evaluation does not grow with n.
/// Posteriors are cached between refreshes; decisions never recompute them.
#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    model: LatentModel,
    stats: SufficientStats,
    hp: Hyperparameters,
    space: ParameterSpace,
    cached: BTreeMap<UserId, Posterior>,
}

impl Learner {
    pub fn new(config: LearnerConfig, hp0: Hyperparameters) -> Result<Self, PolicyError> {
        config.policy.clip.validate()?;
        hp0.validate().map_err(GpError::from)?;
        if hp0.dim() != config.feature_map.dim() {
            return Err(GpError::DimensionMismatch {
                expected: config.feature_map.dim(),
                actual: hp0.dim(),
            }
            .into());
        }
        let variant = config.policy.variant();
        let model = LatentModel::new(
            variant,
            hp0.dim(),
            config.random_effect_coords.clone(),
            config.time_effect_coords.clone(),
            config.horizon,
        )?;
        let stats = SufficientStats::new(&model, hp0.prior_mean.clone());
        let space = ParameterSpace::new(
            variant,
            &config.random_effect_coords,
            &config.time_effect_coords,
        );
        Ok(Self {
            config,
            model,
            stats,
            hp: hp0,
            space,
            cached: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.config.policy.kind
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn observe(&mut self, it: &Interaction) -> Result<(), PolicyError> {
        let phi = self.config.feature_map.phi(&it.state, it.probability, it.action);
        self.stats.add(
            &self.model,
            it.user,
            f64::from(it.study_week),
            phi.as_slice(),
            it.reward,
        )?;
        Ok(())
    }

    /// Recomputes the cached posteriors of `targets`, each `(user, time)`.
    pub fn refresh(&mut self, targets: &[(UserId, f64)]) -> Result<(), PolicyError> {
        let solved = latent::solve(&self.model, &self.stats, &self.hp)?;
        self.cached.clear();
        for &(user, time) in targets {
            self.cached.insert(user, solved.posterior(user, time));
        }
        Ok(())
    }

    /// Re-estimates the variance components from all data seen so far.
    pub fn update_hyperparameters<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
    ) -> Result<Option<FitOutcome>, PolicyError> {
        if !self.config.fit_hyperparameters {
            return Ok(None);
        }
        let model = &self.model;
        let stats = &self.stats;
        let out = evidence::fit_with(
            |hp| latent::log_evidence(model, stats, hp),
            stats.len(),
            &self.hp,
            &self.config.bounds,
            &self.space,
            &self.config.fit,
            rng,
        )?;
        self.hp = out.hyperparameters.clone();
        Ok(Some(out))
    }

    /// The posterior a decision for `user` uses: the cached one, or the
    /// prior of the target weights for a user not covered by the last refresh.
    pub fn posterior(&self, user: UserId, time: f64) -> Result<Posterior, PolicyError> {
        if let Some(p) = self.cached.get(&user) {
            return Ok(p.clone());
        }
        let cov = gp::weight_cov(self.model.variant(), &self.hp, (user, time), (user, time))?;
        Ok(Posterior {
            mean: self.hp.prior_mean.clone(),
            cov,
        })
    }

    /// Clipped probability of treatment for `user` in `state`.
    pub fn probability(&self, user: UserId, time: f64, state: &ContextState) -> Result<f64, PolicyError> {
        let contrast = self.config.feature_map.action_contrast(state);
        let pi = match self.cached.get(&user) {
            Some(p) => randomization_probability(p, &contrast)?,
            None => randomization_probability(&self.posterior(user, time)?, &contrast)?,
        };
        Ok(clip(pi, self.config.policy.clip))
    }

    pub fn decide<R: Rng + ?Sized>(
        &self,
        user: UserId,
        time: f64,
        state: &ContextState,
        rng: &mut R,
    ) -> Result<(Action, f64), PolicyError> {
        let pi = self.probability(user, time, state)?;
        Ok((select_action(pi, rng), pi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn post(mean: &[f64], var: &[f64]) -> Posterior {
        Posterior {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
        }
    }

    #[test]
    fn zero_mean_contrast_gives_half() {
        let p = post(&[0.0, 0.0], &[1.0, 2.0]);
        let d = FeatureVector(vec![0.0, 1.0]);
        assert_eq!(randomization_probability(&p, &d).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_posterior_is_deterministic() {
        let p = post(&[0.0, 0.3], &[1.0, 0.0]);
        let d = FeatureVector(vec![0.0, 1.0]);
        assert_eq!(randomization_probability(&p, &d).unwrap(), 1.0);
        let p = post(&[0.0, -0.3], &[1.0, 0.0]);
        assert_eq!(randomization_probability(&p, &d).unwrap(), 0.0);
    }

    #[test]
    fn clip_examples() {
        let b = ClipBounds::default();
        assert_eq!(clip(0.95, b), 0.8);
        assert_eq!(clip(0.5, b), 0.5);
        assert_eq!(clip(0.0, b), 0.1);
    }

    #[test]
    fn clip_bounds_validation() {
        assert!(ClipBounds::new(0.1, 0.8).is_ok());
        assert!(ClipBounds::new(0.8, 0.1).is_err());
        assert!(ClipBounds::new(0.0, 0.5).is_err());
        assert!(ClipBounds::new(0.5, 1.0).is_err());
    }

    #[test]
    fn cdf_reference_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((standard_normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((standard_normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-14);
    }

    #[test]
    fn select_action_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (pi, tol) in [(0.8, 0.02), (0.1, 0.01)] {
            let hits = (0..10_000)
                .filter(|_| select_action(pi, &mut rng).is_treatment())
                .count();
            assert!((hits as f64 / 10_000.0 - pi).abs() < tol, "{pi}: {hits}");
        }
    }

    #[test]
    fn select_action_is_seeded() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| select_action(0.4, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("nope".parse::<PolicyKind>().is_err());
    }
}
