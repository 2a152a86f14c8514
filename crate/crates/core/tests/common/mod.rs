#![allow(dead_code)]

use ipool_core::gp::{History, Observation};
use ipool_core::{Hyperparameters, UserId};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_spd(rng: &mut ChaCha8Rng, p: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * floor
}

pub fn random_hp(rng: &mut ChaCha8Rng, p: usize) -> Hyperparameters {
    Hyperparameters {
        prior_mean: DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)),
        prior_cov: random_spd(rng, p, 0.1),
        random_effect_cov: random_spd(rng, p, 0.05),
        noise_var: rng.random_range(0.1..2.0),
        time_effect_cov: None,
        time_lengthscale: None,
    }
}

pub fn random_history(rng: &mut ChaCha8Rng, p: usize, users: u32, n: usize) -> History {
    let mut h = History::new();
    let mut counts = vec![0u32; users as usize];
    for _ in 0..n {
        let u = rng.random_range(0..users);
        counts[u as usize] += 1;
        h.push_observation(Observation {
            user: UserId(u),
            decision_index: counts[u as usize],
            time: f64::from(rng.random_range(0..4u32)),
            phi: (0..p).map(|_| rng.random_range(-1.5..1.5)).collect(),
            reward: rng.random_range(-2.0..2.0),
        })
        .unwrap();
    }
    h
}

/// Joint Gaussian over the stacked latent `θ = (w_pop, u_0, …, u_{N−1})`.
pub struct Stacked {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub p: usize,
}

impl Stacked {
    /// Mean and covariance of `w_pop + u_user`.
    pub fn user_marginal(&self, user: usize) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let mut sel = DMatrix::zeros(p, self.mean.len());
        for i in 0..p {
            sel[(i, i)] = 1.0;
            sel[(i, p * (user + 1) + i)] = 1.0;
        }
        (&sel * &self.mean, &sel * &self.cov * sel.transpose())
    }
}

/// Bayesian linear regression in information form over the stacked latent;
/// requires invertible prior blocks.
pub fn stacked_posterior(h: &History, hp: &Hyperparameters, users: usize) -> Stacked {
    let p = hp.dim();
    let d = p * (users + 1);
    let mut prior_prec = DMatrix::zeros(d, d);
    let wi = hp.prior_cov.clone().try_inverse().unwrap();
    let ui = hp.random_effect_cov.clone().try_inverse().unwrap();
    prior_prec.view_mut((0, 0), (p, p)).copy_from(&wi);
    for k in 0..users {
        prior_prec.view_mut((p * (k + 1), p * (k + 1)), (p, p)).copy_from(&ui);
    }
    let mut prior_mean = DVector::zeros(d);
    prior_mean.rows_mut(0, p).copy_from(&hp.prior_mean);

    let mut prec = prior_prec.clone();
    let mut rhs = &prior_prec * &prior_mean;
    for o in h.observations() {
        let mut x = DVector::zeros(d);
        for j in 0..p {
            x[j] = o.phi[j];
            x[p * (o.user.0 as usize + 1) + j] = o.phi[j];
        }
        prec += &x * x.transpose() / hp.noise_var;
        rhs += &x * (o.reward / hp.noise_var);
    }
    let cov = prec.try_inverse().unwrap();
    let mean = &cov * rhs;
    Stacked { mean, cov, p }
}

/// Log density of `N(mean, cov)` at `x`, through an LU determinant.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let lu = cov.clone().lu();
    let det = lu.determinant();
    let r = x - mean;
    let sol = lu.solve(&r).unwrap();
    -0.5 * (r.dot(&sol) + det.ln() + n * (2.0 * std::f64::consts::PI).ln())
}

/// Marginal covariance of the rewards under the pooled model, built from
/// the stacked design.
pub fn pooled_reward_moments(h: &History, hp: &Hyperparameters, users: usize) -> (DVector<f64>, DMatrix<f64>) {
    let p = hp.dim();
    let d = p * (users + 1);
    let n = h.len();
    let mut x = DMatrix::zeros(n, d);
    for (row, o) in h.observations().iter().enumerate() {
        for j in 0..p {
            x[(row, j)] = o.phi[j];
            x[(row, p * (o.user.0 as usize + 1) + j)] = o.phi[j];
        }
    }
    let mut prior = DMatrix::zeros(d, d);
    prior.view_mut((0, 0), (p, p)).copy_from(&hp.prior_cov);
    for k in 0..users {
        prior
            .view_mut((p * (k + 1), p * (k + 1)), (p, p))
            .copy_from(&hp.random_effect_cov);
    }
    let mut m0 = DVector::zeros(d);
    m0.rows_mut(0, p).copy_from(&hp.prior_mean);
    let cov = &x * prior * x.transpose() + DMatrix::identity(n, n) * hp.noise_var;
    (&x * m0, cov)
}

pub fn rewards(h: &History) -> DVector<f64> {
    DVector::from_iterator(h.len(), h.observations().iter().map(|o| o.reward))
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
