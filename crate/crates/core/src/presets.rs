//! Priors and learner settings derived from the historical corpus.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::evidence::{FitOptions, HyperparamBounds};
use crate::model::{ContextState, FeatureMap, Hyperparameters};
use crate::policy::{ClipBounds, LearnerConfig, PolicyConfig, PolicyKind};
use crate::sim::SyntheticCorpus;

/// Prior variances; the prior mean of the baseline block is the least
/// squares fit of log steps on the state in the corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PriorSpec {
    pub baseline_var: f64,
    pub probability_var: f64,
    pub treatment_var: f64,
    pub random_effect_var: f64,
    pub time_effect_var: f64,
    /// Correlation length of the time effect, in weeks squared.
    pub time_lengthscale: f64,
    /// Noise variance; the corpus log-step variance when absent.
    pub noise_var: Option<f64>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            baseline_var: 1.0,
            probability_var: 0.1,
            treatment_var: 0.1,
            random_effect_var: 0.1,
            time_effect_var: 0.1,
            time_lengthscale: 4.0,
            noise_var: None,
        }
    }
}

fn record_state(r: &crate::sim::CorpusRecord) -> ContextState {
    ContextState {
        afternoon: r.afternoon,
        weekend: r.weekend,
        hot: r.hot,
        active: r.active,
        home_or_work: r.home_or_work,
    }
}

/// Least-squares coefficients of log steps on the masked state vector.
pub fn baseline_fit(corpus: &SyntheticCorpus, fmap: &FeatureMap) -> DVector<f64> {
    let k = fmap.state_len();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for r in corpus.records() {
        let s = fmap.state_vector(&record_state(r));
        for i in 0..k {
            rhs[i] += s[i] * r.log_steps;
            for j in 0..k {
                gram[(i, j)] += s[i] * s[j];
            }
        }
    }
    for i in 0..k {
        gram[(i, i)] += 1e-9;
    }
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(k))
}

pub fn prior_hyperparameters(
    corpus: &SyntheticCorpus,
    fmap: &FeatureMap,
    kind: PolicyKind,
    spec: &PriorSpec,
) -> Hyperparameters {
    let k = fmap.state_len();
    let p = fmap.dim();
    let mut mean = DVector::zeros(p);
    mean.rows_mut(0, k).copy_from(&baseline_fit(corpus, fmap));
    let mut var = Vec::with_capacity(p);
    var.extend(core::iter::repeat_n(spec.baseline_var, k));
    var.extend(core::iter::repeat_n(spec.probability_var, k));
    var.extend(core::iter::repeat_n(spec.treatment_var, k));
    let mut re = DMatrix::zeros(p, p);
    if kind.variant(0.0).uses_random_effects() {
        for c in fmap.default_random_effect_coordinates() {
            re[(c, c)] = spec.random_effect_var;
        }
    }
    let noise = spec
        .noise_var
        .unwrap_or_else(|| corpus.log_steps_variance().max(1e-3));
    let hp = Hyperparameters {
        prior_mean: mean,
        prior_cov: DMatrix::from_diagonal(&DVector::from_vec(var)),
        random_effect_cov: re,
        noise_var: noise,
        time_effect_cov: None,
        time_lengthscale: None,
    };
    if kind == PolicyKind::IntelligentPoolingTv {
        let mut dv = DMatrix::zeros(p, p);
        for c in fmap.default_time_effect_coordinates() {
            dv[(c, c)] = spec.time_effect_var;
        }
        hp.with_time_effect(dv, spec.time_lengthscale)
    } else {
        hp
    }
}

pub fn learner_config(kind: PolicyKind, fmap: &FeatureMap, horizon: usize) -> LearnerConfig {
    let uses_re = kind.variant(0.0).uses_random_effects();
    LearnerConfig {
        policy: PolicyConfig {
            kind,
            clip: ClipBounds::default(),
            forgetting: 0.2,
        },
        feature_map: fmap.clone(),
        random_effect_coords: if uses_re {
            fmap.default_random_effect_coordinates()
        } else {
            Vec::new()
        },
        time_effect_coords: if kind == PolicyKind::IntelligentPoolingTv {
            fmap.default_time_effect_coordinates()
        } else {
            Vec::new()
        },
        horizon,
        bounds: HyperparamBounds::default(),
        fit: FitOptions::default(),
        fit_hyperparameters: true,
    }
}
