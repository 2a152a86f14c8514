//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use ipool_core::evidence::{FitOptions, HyperparamBounds};
use ipool_core::policy::{ClipBounds, LearnerConfig, PolicyKind};
use ipool_core::presets::{self, PriorSpec};
use ipool_core::sim::{CorpusConfig, PopulationSetting};
use ipool_core::trial::TrialConfig;
use ipool_core::FeatureMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default directory for run outputs when neither the config nor the
/// command line names one.
pub const OUT_DIR_ENV: &str = "IPOOL_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub policies: Vec<PolicyKind>,
    pub settings: Vec<PopulationSetting>,
    pub trials: u32,
    /// Trial `t` of every grid cell uses seed `seed + t`.
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub seed: u64,
    #[serde(flatten)]
    pub config: CorpusConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            seed: 7,
            config: CorpusConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub clip: ClipBounds,
    /// Per-week forgetting factor of the TV-GP kernel.
    pub forgetting: f64,
    /// Time slots of the time-varying models, in weeks.
    pub horizon: usize,
    pub fit_hyperparameters: bool,
    pub fit: FitOptions,
    pub bounds: HyperparamBounds,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            clip: ClipBounds::default(),
            forgetting: 0.2,
            horizon: 10,
            fit_hyperparameters: true,
            fit: FitOptions::default(),
            bounds: HyperparamBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub learner: LearnerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection {
                policies: vec![
                    PolicyKind::IntelligentPooling,
                    PolicyKind::Complete,
                    PolicyKind::PersonSpecific,
                ],
                settings: PopulationSetting::ALL.to_vec(),
                trials: 50,
                seed: 0,
                jobs: 1,
                out_dir: None,
            },
            trial: TrialConfig::default(),
            corpus: CorpusSection::default(),
            prior: PriorSpec::default(),
            learner: LearnerSection::default(),
        }
    }
}

/// Command-line values that replace those of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub policies: Vec<PolicyKind>,
    pub settings: Vec<PopulationSetting>,
    pub trials: Option<u32>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if !o.policies.is_empty() {
            self.run.policies = o.policies.clone();
        }
        if !o.settings.is_empty() {
            self.run.settings = o.settings.clone();
        }
        if let Some(t) = o.trials {
            self.run.trials = t;
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.run.out_dir = Some(d.clone());
        }
        if let Some(j) = o.jobs {
            self.run.jobs = j;
        }
    }

    /// Output directory: the configured one, else `$IPOOL_OUT_DIR`, else `runs`.
    pub fn out_dir(&self) -> PathBuf {
        self.run
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.run.policies.is_empty() {
            return bad("run.policies", "at least one policy is required".into());
        }
        if self.run.settings.is_empty() {
            return bad("run.settings", "at least one setting is required".into());
        }
        if self.run.trials == 0 {
            return bad("run.trials", "must be positive".into());
        }
        if self.run.jobs == 0 {
            return bad("run.jobs", "must be positive".into());
        }
        if let Err(e) = self.trial.validate() {
            return bad("trial", e.to_string());
        }
        if let Err(e) = self.corpus.config.validate() {
            return bad("corpus", e.to_string());
        }
        if let Err(e) = self.learner.clip.validate() {
            return bad("learner.clip", e.to_string());
        }
        if let Err(e) = self.learner.bounds.validate() {
            return bad("learner.bounds", e.to_string());
        }
        if !(0.0..1.0).contains(&self.learner.forgetting) {
            return bad("learner.forgetting", "must lie in [0, 1)".into());
        }
        if self.learner.horizon == 0 {
            return bad("learner.horizon", "must be positive".into());
        }
        let p = &self.prior;
        let variances = [
            ("prior.baseline_var", p.baseline_var),
            ("prior.probability_var", p.probability_var),
            ("prior.treatment_var", p.treatment_var),
            ("prior.random_effect_var", p.random_effect_var),
            ("prior.time_effect_var", p.time_effect_var),
            ("prior.time_lengthscale", p.time_lengthscale),
        ];
        for (field, v) in variances {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, format!("must be positive, got {v}"));
            }
        }
        if let Some(n) = p.noise_var {
            if !(n > 0.0 && n.is_finite()) {
                return bad("prior.noise_var", format!("must be positive, got {n}"));
            }
        }
        Ok(())
    }

    pub fn learner_config(&self, kind: PolicyKind, fmap: &FeatureMap) -> LearnerConfig {
        let mut c = presets::learner_config(kind, fmap, self.learner.horizon);
        c.policy.clip = self.learner.clip;
        c.policy.forgetting = self.learner.forgetting;
        c.fit = self.learner.fit;
        c.bounds = self.learner.bounds;
        c.fit_hyperparameters = self.learner.fit_hyperparameters;
        c
    }
}
