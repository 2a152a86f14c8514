//! Empirical Bayes for the variance components.
//!
//! The marginal log-likelihood of the centered rewards is maximized over the
//! log variance components with a bounded Nelder–Mead search and a few
//! randomized restarts. The prior mean and covariance of the population
//! weights stay fixed.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BoundsError, GpError};
use crate::gp::{self, History, KernelVariant};
use crate::latent;
use crate::linalg;
use crate::model::Hyperparameters;

/// `−½ [R̃ᵀ(K + σ²I)⁻¹R̃ + log det(K + σ²I) + n log 2π]`, evaluated through a
/// jittered Cholesky factor of the n×n kernel matrix.
pub fn marginal_log_likelihood(
    history: &History,
    hp: &Hyperparameters,
    variant: KernelVariant,
) -> Result<f64, GpError> {
    if history.is_empty() {
        return Ok(0.0);
    }
    let k = gp::noisy_kernel_matrix(history, hp, variant)?;
    let (chol, _) = linalg::cholesky_jittered(&k)?;
    let r = gp::centered_rewards(history, hp);
    let quad = r.dot(&chol.solve(&r));
    let n = history.len() as f64;
    Ok(-0.5 * (quad + linalg::log_det(&chol) + n * libm::log(2.0 * PI)))
}

/// Box constraints, in natural units, on each family of variance components.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HyperparamBounds {
    pub random_effect: (f64, f64),
    pub noise: (f64, f64),
    pub time_effect: (f64, f64),
    pub lengthscale: (f64, f64),
}

impl Default for HyperparamBounds {
    fn default() -> Self {
        Self {
            random_effect: (1e-6, 1e3),
            noise: (1e-6, 1e3),
            time_effect: (1e-6, 1e3),
            lengthscale: (1e-2, 1e3),
        }
    }
}

impl HyperparamBounds {
    pub fn validate(&self) -> Result<(), BoundsError> {
        for (name, (lo, hi)) in [
            ("random_effect", self.random_effect),
            ("noise", self.noise),
            ("time_effect", self.time_effect),
            ("lengthscale", self.lengthscale),
        ] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(BoundsError::Inverted(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    RandomEffect(usize),
    Noise,
    TimeEffect(usize),
    Lengthscale,
}

/// The free parameters of a variant: diagonal random-effect variances on
/// the designated coordinates, the noise variance, and for the
/// time-varying model the diagonal of `D_v` plus the correlation length.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    slots: Vec<Slot>,
}

impl ParameterSpace {
    pub fn new(variant: KernelVariant, random_effect_coords: &[usize], time_coords: &[usize]) -> Self {
        let mut slots = Vec::new();
        if variant.uses_random_effects() {
            slots.extend(random_effect_coords.iter().map(|&c| Slot::RandomEffect(c)));
        }
        slots.push(Slot::Noise);
        if variant == KernelVariant::TimeVarying {
            slots.extend(time_coords.iter().map(|&c| Slot::TimeEffect(c)));
            slots.push(Slot::Lengthscale);
        }
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn random_effect_coords(&self) -> Vec<usize> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::RandomEffect(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    pub fn time_effect_coords(&self) -> Vec<usize> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::TimeEffect(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn range(&self, slot: Slot, b: &HyperparamBounds) -> (f64, f64) {
        match slot {
            Slot::RandomEffect(_) => b.random_effect,
            Slot::Noise => b.noise,
            Slot::TimeEffect(_) => b.time_effect,
            Slot::Lengthscale => b.lengthscale,
        }
    }

    fn value(slot: Slot, hp: &Hyperparameters) -> f64 {
        match slot {
            Slot::RandomEffect(c) => hp.random_effect_cov[(c, c)],
            Slot::Noise => hp.noise_var,
            Slot::TimeEffect(c) => hp.time_effect_cov.as_ref().map_or(0.0, |m| m[(c, c)]),
            Slot::Lengthscale => hp.time_lengthscale.unwrap_or(1.0),
        }
    }

    fn log_bounds(&self, b: &HyperparamBounds) -> Vec<(f64, f64)> {
        self.slots
            .iter()
            .map(|&s| {
                let (lo, hi) = self.range(s, b);
                (libm::log(lo), libm::log(hi))
            })
            .collect()
    }

    pub fn within(&self, hp: &Hyperparameters, b: &HyperparamBounds) -> bool {
        self.slots.iter().all(|&s| {
            let (lo, hi) = self.range(s, b);
            let v = Self::value(s, hp);
            v >= lo && v <= hi
        })
    }

    /// Log-scale coordinates of `hp`, clamped into the bounds.
    pub fn pack(&self, hp: &Hyperparameters, b: &HyperparamBounds) -> Vec<f64> {
        self.slots
            .iter()
            .map(|&s| {
                let (lo, hi) = self.range(s, b);
                libm::log(Self::value(s, hp).clamp(lo, hi))
            })
            .collect()
    }

    /// `base` with the free parameters replaced by `exp(x)`, clamped to the
    /// bounds in natural units. Random-effect and time-effect covariances
    /// become diagonal on their designated coordinates.
    pub fn unpack(&self, base: &Hyperparameters, x: &[f64], b: &HyperparamBounds) -> Hyperparameters {
        let mut hp = base.clone();
        let p = hp.dim();
        if self.slots.iter().any(|s| matches!(s, Slot::RandomEffect(_))) {
            hp.random_effect_cov = DMatrix::zeros(p, p);
        }
        if self.slots.iter().any(|s| matches!(s, Slot::TimeEffect(_))) {
            hp.time_effect_cov = Some(DMatrix::zeros(p, p));
        }
        for (&s, &xi) in self.slots.iter().zip(x) {
            let (lo, hi) = self.range(s, b);
            let v = libm::exp(xi).clamp(lo, hi);
            match s {
                Slot::RandomEffect(c) => hp.random_effect_cov[(c, c)] = v,
                Slot::Noise => hp.noise_var = v,
                Slot::TimeEffect(c) => {
                    if let Some(m) = hp.time_effect_cov.as_mut() {
                        m[(c, c)] = v;
                    }
                }
                Slot::Lengthscale => hp.time_lengthscale = Some(v),
            }
        }
        hp
    }

    fn clamp_into(&self, hp: &Hyperparameters, b: &HyperparamBounds) -> Hyperparameters {
        if self.within(hp, b) {
            hp.clone()
        } else {
            let mut out = hp.clone();
            for &s in &self.slots {
                let (lo, hi) = self.range(s, b);
                match s {
                    Slot::RandomEffect(c) => {
                        out.random_effect_cov[(c, c)] = out.random_effect_cov[(c, c)].clamp(lo, hi)
                    }
                    Slot::Noise => out.noise_var = out.noise_var.clamp(lo, hi),
                    Slot::TimeEffect(c) => {
                        let p = out.dim();
                        let m = out.time_effect_cov.get_or_insert_with(|| DMatrix::zeros(p, p));
                        m[(c, c)] = m[(c, c)].clamp(lo, hi);
                    }
                    Slot::Lengthscale => {
                        out.time_lengthscale = Some(out.time_lengthscale.unwrap_or(1.0).clamp(lo, hi))
                    }
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FitOptions {
    /// Extra starts beyond the initial point.
    pub restarts: usize,
    /// Objective evaluations per start.
    pub max_evals: usize,
    /// Smallest history worth fitting.
    pub min_observations: usize,
    /// Standard deviation, in log units, of the restart perturbations.
    pub restart_spread: f64,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_evals: 400,
            min_observations: 10,
            restart_spread: 1.5,
            tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Improved,
    /// No start beat the initial point; the initial hyperparameters are kept.
    NoImprovement,
    /// Fewer than `min_observations` rows; nothing was fitted.
    InsufficientData,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub hyperparameters: Hyperparameters,
    pub objective: f64,
    pub initial_objective: f64,
    pub status: FitStatus,
}

/// Maximizes `objective` over the free parameters of `space`.
///
/// `n` is the number of observations behind the objective. The returned
/// objective is never below the one at the (bounded) initial point.
pub fn fit_with<F, R>(
    mut objective: F,
    n: usize,
    hp0: &Hyperparameters,
    bounds: &HyperparamBounds,
    space: &ParameterSpace,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitOutcome, GpError>
where
    F: FnMut(&Hyperparameters) -> Result<f64, GpError>,
    R: Rng + ?Sized,
{
    let start = space.clamp_into(hp0, bounds);
    let initial = objective(&start)?;
    if n < options.min_observations || space.is_empty() {
        return Ok(FitOutcome {
            hyperparameters: start,
            objective: initial,
            initial_objective: initial,
            status: FitStatus::InsufficientData,
        });
    }
    let log_bounds = space.log_bounds(bounds);
    let x0 = space.pack(&start, bounds);
    let mut cost = |x: &[f64]| match objective(&space.unpack(&start, x, bounds)) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    for attempt in 0..=options.restarts {
        let from: Vec<f64> = if attempt == 0 {
            x0.clone()
        } else {
            x0.iter()
                .zip(&log_bounds)
                .map(|(&x, &(lo, hi))| {
                    let z: f64 = StandardNormal.sample(rng);
                    (x + options.restart_spread * z).clamp(lo, hi)
                })
                .collect()
        };
        let (x, f) = nelder_mead(&mut cost, from, &log_bounds, options.max_evals, options.tolerance);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.expect("at least one start");
    if -f > initial {
        Ok(FitOutcome {
            hyperparameters: space.unpack(&start, &x, bounds),
            objective: -f,
            initial_objective: initial,
            status: FitStatus::Improved,
        })
    } else {
        Ok(FitOutcome {
            hyperparameters: start,
            objective: initial,
            initial_objective: initial,
            status: FitStatus::NoImprovement,
        })
    }
}

/// Empirical-Bayes fit of the marginal likelihood of `history`.
///
/// When every time is a non-negative integer and the covariances live on
/// the coordinates of `space`, the likelihood is evaluated in weight space
/// from sufficient statistics; otherwise through the n×n kernel matrix.
pub fn fit_hyperparameters<R: Rng + ?Sized>(
    history: &History,
    hp0: &Hyperparameters,
    bounds: &HyperparamBounds,
    variant: KernelVariant,
    space: &ParameterSpace,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitOutcome, GpError> {
    let re = space.random_effect_coords();
    let tv = space.time_effect_coords();
    let integral = history
        .observations()
        .iter()
        .all(|o| o.time >= 0.0 && o.time == libm::round(o.time) && o.time < 1e4);
    let horizon = history
        .observations()
        .iter()
        .map(|o| o.time as usize + 1)
        .max()
        .unwrap_or(1);
    let weight_space = if integral && !history.is_empty() {
        let model = latent::LatentModel::new(variant, hp0.dim(), re.clone(), tv.clone(), horizon)?;
        let stats = latent::stats_from_history(&model, history, hp0.prior_mean.clone())?;
        Some((model, stats))
    } else {
        None
    };
    let supported = |hp: &Hyperparameters| {
        let pooled = matches!(variant, KernelVariant::Pooled | KernelVariant::TimeVarying);
        (!pooled || supported_on(&hp.random_effect_cov, &re))
            && (variant != KernelVariant::TimeVarying
                || hp.time_effect_cov.as_ref().is_some_and(|m| supported_on(m, &tv)))
            && hp.prior_mean == hp0.prior_mean
    };
    fit_with(
        |hp| match &weight_space {
            Some((model, stats)) if supported(hp) => latent::log_evidence(model, stats, hp),
            _ => marginal_log_likelihood(history, hp, variant),
        },
        history.len(),
        hp0,
        bounds,
        space,
        options,
        rng,
    )
}

fn supported_on(m: &DMatrix<f64>, coords: &[usize]) -> bool {
    let n = m.nrows();
    (0..n).all(|i| {
        (0..n).all(|j| m[(i, j)] == 0.0 || (coords.contains(&i) && coords.contains(&j)))
    })
}

/// Bounded Nelder–Mead minimization; candidates are projected onto the box.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: Vec<f64>,
    bounds: &[(f64, f64)],
    max_evals: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let project = |x: &mut Vec<f64>| {
        for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = xi.clamp(lo, hi);
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = f(&x0);
    simplex.push((x0.clone(), f0));
    for i in 0..d {
        let mut x = x0.clone();
        let (lo, hi) = bounds[i];
        x[i] = if x0[i] + 1.0 <= hi { x0[i] + 1.0 } else { (x0[i] - 1.0).max(lo) };
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = d + 1;
    let centroid = |s: &[(Vec<f64>, f64)]| {
        let mut c = alloc::vec![0.0; d];
        for (x, _) in &s[..d] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi / d as f64;
            }
        }
        c
    };
    let along = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(w).map(|(ci, wi)| ci + t * (wi - ci)).collect()
    };

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if (spread.is_finite() && spread.abs() < tol && size < 1e-4) || size < 1e-10 {
            break;
        }
        let c = centroid(&simplex);
        let worst = simplex[d].0.clone();
        let mut xr = along(&c, &worst, -1.0);
        project(&mut xr);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let mut xe = along(&c, &worst, -2.0);
            project(&mut xe);
            let fe = f(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (mut xc, outside) = if fr < simplex[d].1 {
                (along(&c, &worst, -0.5), true)
            } else {
                (along(&c, &worst, 0.5), false)
            };
            project(&mut xc);
            let fc = f(&xc);
            evals += 1;
            let accept = if outside { fc <= fr } else { fc < simplex[d].1 };
            if accept {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let xs = along(&best, &item.0, 0.5);
                    let fs = f(&xs);
                    *item = (xs, fs);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
