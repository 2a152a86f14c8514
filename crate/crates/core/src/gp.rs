//! Kernel-space view of the reward model.
//!
//! Each policy's linear-Gaussian reward model induces a kernel over logged
//! observations `x = (φ, user, time)`:
//!
//! ```text
//!   pooled        φ₁ᵀ (Σ_w + 1{i₁=i₂} Σ_u) φ₂
//!   time-varying  pooled + exp(−(t₁−t₂)²/σ_ρ) φ₁ᵀ D_v φ₂
//!   tv-gp         (1−ε)^{|t₁−t₂|/2} φ₁ᵀ Σ_w φ₂
//!   person        1{i₁=i₂} φ₁ᵀ (Σ_w + Σ_u) φ₂
//!   complete      φ₁ᵀ Σ_w φ₂
//! ```
//!
//! The posterior of a user's weight vector is the exact Gaussian conditional
//! computed through `(K + σ_ε² I)⁻¹`. This is O(n³) and serves as the
//! reference implementation; [`crate::latent`] computes the same quantities
//! in weight space for the simulator.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::GpError;
use crate::linalg;
use crate::model::{FeatureMap, Hyperparameters, Interaction, UserId};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum KernelVariant {
    Pooled,
    TimeVarying,
    Tvgp { forgetting: f64 },
    PersonSpecific,
    Complete,
}

impl KernelVariant {
    pub fn uses_random_effects(&self) -> bool {
        matches!(
            self,
            KernelVariant::Pooled | KernelVariant::TimeVarying | KernelVariant::PersonSpecific
        )
    }
}

/// A point in kernel space.
#[derive(Debug, Clone, Copy)]
pub struct KernelPoint<'a> {
    pub phi: &'a [f64],
    pub user: UserId,
    pub time: f64,
}

/// Temporal correlation of the time-varying random effect.
pub fn time_correlation(t1: f64, t2: f64, lengthscale: f64) -> f64 {
    let d = t1 - t2;
    libm::exp(-d * d / lengthscale)
}

/// Temporal discount of the TV-GP baseline.
pub fn forgetting_discount(t1: f64, t2: f64, forgetting: f64) -> f64 {
    libm::pow(1.0 - forgetting, 0.5 * (t1 - t2).abs())
}

/// `Cov(w_{i₁,t₁}, w_{i₂,t₂})` under the given variant.
pub fn weight_cov(
    variant: KernelVariant,
    hp: &Hyperparameters,
    a: (UserId, f64),
    b: (UserId, f64),
) -> Result<DMatrix<f64>, GpError> {
    let same = a.0 == b.0;
    Ok(match variant {
        KernelVariant::Complete => hp.prior_cov.clone(),
        KernelVariant::Pooled => {
            if same {
                &hp.prior_cov + &hp.random_effect_cov
            } else {
                hp.prior_cov.clone()
            }
        }
        KernelVariant::PersonSpecific => {
            if same {
                &hp.prior_cov + &hp.random_effect_cov
            } else {
                DMatrix::zeros(hp.dim(), hp.dim())
            }
        }
        KernelVariant::TimeVarying => {
            let (dv, ls) = time_effect(hp)?;
            let mut c = if same {
                &hp.prior_cov + &hp.random_effect_cov
            } else {
                hp.prior_cov.clone()
            };
            c += dv * time_correlation(a.1, b.1, ls);
            c
        }
        KernelVariant::Tvgp { forgetting } => {
            check_forgetting(forgetting)?;
            &hp.prior_cov * forgetting_discount(a.1, b.1, forgetting)
        }
    })
}

pub(crate) fn check_forgetting(forgetting: f64) -> Result<(), GpError> {
    if (0.0..1.0).contains(&forgetting) {
        Ok(())
    } else {
        Err(GpError::InvalidForgetting(forgetting))
    }
}

pub(crate) fn time_effect(hp: &Hyperparameters) -> Result<(&DMatrix<f64>, f64), GpError> {
    match (&hp.time_effect_cov, hp.time_lengthscale) {
        (Some(dv), Some(ls)) => Ok((dv, ls)),
        _ => Err(GpError::MissingTimeEffect),
    }
}

fn quad(x: &[f64], c: &DMatrix<f64>, y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, yj) in y.iter().enumerate() {
            row += c[(i, j)] * yj;
        }
        acc += xi * row;
    }
    acc
}

pub fn kernel(
    x1: &KernelPoint<'_>,
    x2: &KernelPoint<'_>,
    hp: &Hyperparameters,
    variant: KernelVariant,
) -> Result<f64, GpError> {
    let p = hp.dim();
    for x in [x1, x2] {
        if x.phi.len() != p {
            return Err(GpError::DimensionMismatch {
                expected: p,
                actual: x.phi.len(),
            });
        }
    }
    let c = weight_cov(variant, hp, (x1.user, x1.time), (x2.user, x2.time))?;
    Ok(quad(x1.phi, &c, x2.phi))
}

/// One row of the dataset as seen by the regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub user: UserId,
    pub decision_index: u32,
    pub time: f64,
    pub phi: Vec<f64>,
    pub reward: f64,
}

impl Observation {
    pub fn point(&self) -> KernelPoint<'_> {
        KernelPoint {
            phi: &self.phi,
            user: self.user,
            time: self.time,
        }
    }
}

/// The dataset D with cached feature rows.
#[derive(Debug, Clone, Default)]
pub struct History {
    observations: Vec<Observation>,
    interactions: Vec<Option<Interaction>>,
    last_index: BTreeMap<UserId, u32>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_interactions<'a, I>(items: I, fmap: &FeatureMap) -> Result<Self, GpError>
    where
        I: IntoIterator<Item = &'a Interaction>,
    {
        let mut h = Self::new();
        for it in items {
            h.push(*it, fmap)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, interaction: Interaction, fmap: &FeatureMap) -> Result<(), GpError> {
        let phi = fmap.phi(&interaction.state, interaction.probability, interaction.action);
        self.push_observation(Observation {
            user: interaction.user,
            decision_index: interaction.decision_index,
            time: f64::from(interaction.study_week),
            phi: phi.0,
            reward: interaction.reward,
        })?;
        *self.interactions.last_mut().expect("just pushed") = Some(interaction);
        Ok(())
    }

    /// Adds a row with an arbitrary design vector.
    pub fn push_observation(&mut self, obs: Observation) -> Result<(), GpError> {
        if let Some(&last) = self.last_index.get(&obs.user) {
            if obs.decision_index <= last {
                return Err(GpError::NonIncreasingDecision {
                    user: obs.user,
                    index: obs.decision_index,
                    last,
                });
            }
        }
        if let Some(p) = self.observations.first().map(|o| o.phi.len()) {
            if obs.phi.len() != p {
                return Err(GpError::DimensionMismatch {
                    expected: p,
                    actual: obs.phi.len(),
                });
            }
        }
        if !obs.reward.is_finite() || obs.phi.iter().any(|x| !x.is_finite()) {
            return Err(GpError::NonFinite);
        }
        self.last_index.insert(obs.user, obs.decision_index);
        self.observations.push(obs);
        self.interactions.push(None);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Logged interactions, for rows added through [`History::push`].
    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.interactions.iter().flatten()
    }

    /// A copy holding only the rows that satisfy `keep`, order preserved.
    pub fn filtered(&self, mut keep: impl FnMut(&Observation) -> bool) -> Self {
        let mut out = Self::new();
        for (obs, it) in self.observations.iter().zip(&self.interactions) {
            if keep(obs) {
                out.push_observation(obs.clone()).expect("subset of a valid history");
                *out.interactions.last_mut().expect("just pushed") = *it;
            }
        }
        out
    }

    fn check_dim(&self, hp: &Hyperparameters) -> Result<(), GpError> {
        match self.observations.first() {
            Some(o) if o.phi.len() != hp.dim() => Err(GpError::DimensionMismatch {
                expected: hp.dim(),
                actual: o.phi.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Gaussian over a weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Posterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `K` over the whole history.
pub fn kernel_matrix(
    history: &History,
    hp: &Hyperparameters,
    variant: KernelVariant,
) -> Result<DMatrix<f64>, GpError> {
    hp.validate()?;
    history.check_dim(hp)?;
    let obs = history.observations();
    let n = obs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&obs[i].point(), &obs[j].point(), hp, variant)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Prior-mean-centered rewards `r − φᵀμ_w`.
pub fn centered_rewards(history: &History, hp: &Hyperparameters) -> DVector<f64> {
    DVector::from_iterator(
        history.len(),
        history.observations().iter().map(|o| {
            o.reward
                - o.phi
                    .iter()
                    .zip(hp.prior_mean.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        }),
    )
}

/// `K + σ_ε² I`.
pub(crate) fn noisy_kernel_matrix(
    history: &History,
    hp: &Hyperparameters,
    variant: KernelVariant,
) -> Result<DMatrix<f64>, GpError> {
    let mut k = kernel_matrix(history, hp, variant)?;
    for i in 0..k.nrows() {
        k[(i, i)] += hp.noise_var;
    }
    Ok(k)
}

/// Posterior of `w_{target_user}` at time `target_time` given the history.
pub fn posterior(
    history: &History,
    target_user: UserId,
    target_time: f64,
    hp: &Hyperparameters,
    variant: KernelVariant,
) -> Result<Posterior, GpError> {
    hp.validate()?;
    history.check_dim(hp)?;
    let target = (target_user, target_time);
    let prior_cov = weight_cov(variant, hp, target, target)?;
    if history.is_empty() {
        return Ok(Posterior {
            mean: hp.prior_mean.clone(),
            cov: prior_cov,
        });
    }
    let obs = history.observations();
    let n = obs.len();
    let p = hp.dim();

    let (chol, _) = linalg::cholesky_jittered(&noisy_kernel_matrix(history, hp, variant)?)?;
    let r = centered_rewards(history, hp);

    let mut m = DMatrix::zeros(n, p);
    for (row, o) in obs.iter().enumerate() {
        let c = weight_cov(variant, hp, target, (o.user, o.time))?;
        let v = c * DVector::from_column_slice(&o.phi);
        m.row_mut(row).copy_from(&v.transpose());
    }
    let alpha = chol.solve(&r);
    let mean = &hp.prior_mean + m.transpose() * alpha;
    let v = chol.solve(&m);
    let mut cov = prior_cov - m.transpose() * v;
    linalg::symmetrize(&mut cov);
    Ok(Posterior { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn hp2() -> Hyperparameters {
        Hyperparameters::diagonal(vec![0.0, 0.0], &[1.0, 0.5], &[0.3, 0.2], 0.4).unwrap()
    }

    fn pt(phi: &[f64], user: u32, time: f64) -> KernelPoint<'_> {
        KernelPoint {
            phi,
            user: UserId(user),
            time,
        }
    }

    #[test]
    fn pooled_equals_complete_without_random_effects() {
        let mut hp = hp2();
        hp.random_effect_cov.fill(0.0);
        let a = [0.3, -1.2];
        let b = [2.0, 0.7];
        let pooled = kernel(&pt(&a, 1, 0.0), &pt(&b, 1, 0.0), &hp, KernelVariant::Pooled).unwrap();
        let complete =
            kernel(&pt(&a, 1, 0.0), &pt(&b, 1, 0.0), &hp, KernelVariant::Complete).unwrap();
        assert_eq!(pooled, complete);
    }

    #[test]
    fn pooled_across_users_uses_population_covariance_only() {
        let hp = hp2();
        let a = [0.3, -1.2];
        let b = [2.0, 0.7];
        let v = kernel(&pt(&a, 1, 0.0), &pt(&b, 2, 0.0), &hp, KernelVariant::Pooled).unwrap();
        assert_eq!(v, 0.3 * 2.0 * 1.0 + (-1.2) * 0.7 * 0.5);
        let ps = kernel(&pt(&a, 1, 0.0), &pt(&b, 2, 0.0), &hp, KernelVariant::PersonSpecific)
            .unwrap();
        assert_eq!(ps, 0.0);
    }

    #[test]
    fn time_varying_at_equal_times_adds_full_time_effect() {
        let dv = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.0]));
        let hp = hp2().with_time_effect(dv, 3.0);
        let a = [1.0, 2.0];
        let b = [0.5, -1.0];
        let tv = kernel(&pt(&a, 1, 4.0), &pt(&b, 2, 4.0), &hp, KernelVariant::TimeVarying).unwrap();
        let pooled = kernel(&pt(&a, 1, 4.0), &pt(&b, 2, 4.0), &hp, KernelVariant::Pooled).unwrap();
        assert!((tv - (pooled + 0.25 * 0.5)).abs() < 1e-15);
        let far =
            kernel(&pt(&a, 1, 0.0), &pt(&b, 2, 3.0), &hp, KernelVariant::TimeVarying).unwrap();
        assert!((far - (pooled + 0.125 * libm::exp(-3.0))).abs() < 1e-15);
    }

    #[test]
    fn time_varying_requires_time_effect() {
        let a = [1.0, 2.0];
        assert_eq!(
            kernel(&pt(&a, 1, 0.0), &pt(&a, 1, 0.0), &hp2(), KernelVariant::TimeVarying),
            Err(GpError::MissingTimeEffect)
        );
    }

    #[test]
    fn tvgp_discounts_by_lag() {
        let hp = hp2();
        let a = [1.0, 0.0];
        let v = kernel(
            &pt(&a, 1, 0.0),
            &pt(&a, 2, 4.0),
            &hp,
            KernelVariant::Tvgp { forgetting: 0.19 },
        )
        .unwrap();
        assert!((v - 0.81 * 0.81).abs() < 1e-12);
        assert!(kernel(
            &pt(&a, 1, 0.0),
            &pt(&a, 2, 4.0),
            &hp,
            KernelVariant::Tvgp { forgetting: 1.0 }
        )
        .is_err());
    }

    #[test]
    fn kernel_rejects_wrong_length() {
        let a = [1.0];
        let b = [1.0, 2.0];
        assert!(matches!(
            kernel(&pt(&a, 1, 0.0), &pt(&b, 1, 0.0), &hp2(), KernelVariant::Pooled),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_history_gives_prior() {
        let hp = hp2();
        let post = posterior(&History::new(), UserId(3), 0.0, &hp, KernelVariant::Pooled).unwrap();
        assert_eq!(post.mean, hp.prior_mean);
        assert_eq!(post.cov, &hp.prior_cov + &hp.random_effect_cov);
    }

    #[test]
    fn scalar_single_observation() {
        let (sw, su, se, r) = (0.7, 0.4, 0.9, 1.3);
        let hp = Hyperparameters::diagonal(vec![0.0], &[sw], &[su], se).unwrap();
        let mut h = History::new();
        h.push_observation(Observation {
            user: UserId(1),
            decision_index: 1,
            time: 0.0,
            phi: vec![1.0],
            reward: r,
        })
        .unwrap();
        let post = posterior(&h, UserId(1), 0.0, &hp, KernelVariant::Pooled).unwrap();
        let expected = (sw + su) * r / (sw + su + se);
        assert!((post.mean[0] - expected).abs() < 1e-14);
        let expected_var = (sw + su) * se / (sw + su + se);
        assert!((post.cov[(0, 0)] - expected_var).abs() < 1e-14);
    }

    #[test]
    fn history_rejects_out_of_order_decisions() {
        let mut h = History::new();
        let obs = |k| Observation {
            user: UserId(1),
            decision_index: k,
            time: 0.0,
            phi: vec![1.0],
            reward: 0.0,
        };
        h.push_observation(obs(2)).unwrap();
        assert!(matches!(
            h.push_observation(obs(2)),
            Err(GpError::NonIncreasingDecision { .. })
        ));
        assert!(h.push_observation(obs(3)).is_ok());
    }
}
