//! Independent reference computations for the posterior, the randomization
//! probability and the marginal likelihood, and the checks that compare the
//! library against them.

use ipool_core::evidence::{fit_hyperparameters, marginal_log_likelihood, FitOptions, HyperparamBounds, ParameterSpace};
use ipool_core::gp::{self, History, Observation};
use ipool_core::model::ContextState;
use ipool_core::policy::randomization_probability;
use ipool_core::{Action, FeatureMap, Hyperparameters, KernelVariant, UserId};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// Scale applied to the population covariance handed to the library when
/// the kernel is deliberately corrupted.
pub const CORRUPTION: f64 = 1.1;

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleOptions {
    pub seed: u64,
    pub corrupt_kernel: bool,
}

impl OracleOptions {
    fn library_hp(&self, hp: &Hyperparameters) -> Hyperparameters {
        let mut out = hp.clone();
        if self.corrupt_kernel {
            out.prior_cov *= CORRUPTION;
        }
        out
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(salt);
        rng
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &'static str, deviation: f64, tolerance: f64) -> Self {
        Self {
            name,
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }
}

fn random_spd(rng: &mut ChaCha8Rng, p: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * floor
}

fn random_hp(rng: &mut ChaCha8Rng, p: usize) -> Hyperparameters {
    Hyperparameters {
        prior_mean: DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)),
        prior_cov: random_spd(rng, p, 0.1),
        random_effect_cov: random_spd(rng, p, 0.05),
        noise_var: rng.random_range(0.1..2.0),
        time_effect_cov: None,
        time_lengthscale: None,
    }
}

fn random_history(rng: &mut ChaCha8Rng, p: usize, users: u32, n: usize) -> History {
    let mut h = History::new();
    let mut counts = vec![0u32; users as usize];
    for _ in 0..n {
        let u = rng.random_range(0..users);
        counts[u as usize] += 1;
        h.push_observation(Observation {
            user: UserId(u),
            decision_index: counts[u as usize],
            time: 0.0,
            phi: (0..p).map(|_| rng.random_range(-1.5..1.5)).collect(),
            reward: rng.random_range(-2.0..2.0),
        })
        .expect("indices increase");
    }
    h
}

/// Posterior mean of each user's scalar weight in the two-user model with
/// `C_i = Σφ²`, `Y_i = Σφr`.
pub fn two_user_means(c: [f64; 2], y: [f64; 2], w: f64, u: f64, noise: f64) -> [f64; 2] {
    let g = w / (w + u);
    let d = noise / w;
    let den = (1.0 - g * g) * c[0] * c[1] + d * g * (c[0] + c[1]) + (d * g) * (d * g);
    [
        ((d * g + (1.0 - g * g) * c[1]) * y[0] + d * g * g * y[1]) / den,
        ((d * g + (1.0 - g * g) * c[0]) * y[1] + d * g * g * y[0]) / den,
    ]
}

fn scalar_two_user(rng: &mut ChaCha8Rng) -> (History, [f64; 2], [f64; 2]) {
    let mut h = History::new();
    let mut c = [0.0; 2];
    let mut y = [0.0; 2];
    for user in 0..2u32 {
        for k in 0..rng.random_range(1..6u32) {
            let phi = rng.random_range(-2.0..2.0);
            let r = rng.random_range(-3.0..3.0);
            c[user as usize] += phi * phi;
            y[user as usize] += phi * r;
            h.push_observation(Observation {
                user: UserId(user),
                decision_index: k + 1,
                time: 0.0,
                phi: vec![phi],
                reward: r,
            })
            .expect("indices increase");
        }
    }
    (h, c, y)
}

fn scalar_hp(w: f64, u: f64, noise: f64) -> Hyperparameters {
    Hyperparameters::diagonal(vec![0.0], &[w], &[u], noise).expect("positive variances")
}

/// Largest absolute gap between the library and the explicit two-user
/// posterior means.
pub fn two_user_closed_form(instances: usize, opts: &OracleOptions) -> f64 {
    let mut rng = opts.rng(1);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (h, c, y) = scalar_two_user(&mut rng);
        let w = rng.random_range(0.05..3.0);
        let u = rng.random_range(0.05..3.0);
        let noise = rng.random_range(0.05..3.0);
        let expected = two_user_means(c, y, w, u, noise);
        let hp = opts.library_hp(&scalar_hp(w, u, noise));
        for user in 0..2 {
            let got = gp::posterior(&h, UserId(user), 0.0, &hp, KernelVariant::Pooled)
                .expect("posterior")
                .mean[0];
            worst = worst.max((got - expected[user as usize]).abs());
        }
    }
    worst
}

/// Bayesian linear regression over `θ = (w_pop, u_0, …)` in information
/// form, returning the mean and covariance of `w_pop + u_user`.
pub fn stacked_marginal(h: &History, hp: &Hyperparameters, users: usize, user: usize) -> (DVector<f64>, DMatrix<f64>) {
    let p = hp.dim();
    let d = p * (users + 1);
    let wi = hp.prior_cov.clone().try_inverse().expect("invertible");
    let ui = hp.random_effect_cov.clone().try_inverse().expect("invertible");
    let mut prec = DMatrix::zeros(d, d);
    prec.view_mut((0, 0), (p, p)).copy_from(&wi);
    for k in 0..users {
        prec.view_mut((p * (k + 1), p * (k + 1)), (p, p)).copy_from(&ui);
    }
    let mut rhs = DVector::zeros(d);
    rhs.rows_mut(0, p).copy_from(&(&wi * &hp.prior_mean));
    for o in h.observations() {
        let mut x = DVector::zeros(d);
        for j in 0..p {
            x[j] = o.phi[j];
            x[p * (o.user.0 as usize + 1) + j] = o.phi[j];
        }
        prec += &x * x.transpose() / hp.noise_var;
        rhs += &x * (o.reward / hp.noise_var);
    }
    let cov = prec.try_inverse().expect("positive definite");
    let mean = &cov * rhs;
    let mut sel = DMatrix::zeros(p, d);
    for i in 0..p {
        sel[(i, i)] = 1.0;
        sel[(i, p * (user + 1) + i)] = 1.0;
    }
    (&sel * mean, &sel * cov * sel.transpose())
}

/// Largest entrywise gap in posterior mean or covariance against the
/// stacked joint Gaussian.
pub fn stacked_gaussian(instances: usize, opts: &OracleOptions) -> f64 {
    let mut rng = opts.rng(2);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let p = rng.random_range(1..=3);
        let users = rng.random_range(1..=3u32);
        let n = rng.random_range(0..=20);
        let hp = random_hp(&mut rng, p);
        let h = random_history(&mut rng, p, users, n);
        let lib_hp = opts.library_hp(&hp);
        for user in 0..users {
            let (mean, cov) = stacked_marginal(&h, &hp, users as usize, user as usize);
            let post = gp::posterior(&h, UserId(user), 0.0, &lib_hp, KernelVariant::Pooled).expect("posterior");
            worst = worst
                .max((&post.mean - mean).abs().max())
                .max((&post.cov - cov).abs().max());
        }
    }
    worst
}

fn random_state(rng: &mut ChaCha8Rng) -> ContextState {
    ContextState {
        afternoon: rng.random(),
        weekend: rng.random(),
        hot: rng.random(),
        active: rng.random(),
        home_or_work: rng.random(),
    }
}

/// Largest gap between the pooled and the complete-pooling randomization
/// probabilities when the random effects are switched off.
pub fn vanishing_random_effect(decisions: usize, opts: &OracleOptions) -> f64 {
    let mut rng = opts.rng(3);
    let fmap = FeatureMap::default();
    let p = fmap.dim();
    let mut h = History::new();
    let mut counts = [0u32; 4];
    for _ in 0..60 {
        let user = rng.random_range(0..4u32);
        counts[user as usize] += 1;
        let pi = rng.random_range(0.1..0.8);
        let action = Action::from_indicator(rng.random_bool(pi));
        h.push_observation(Observation {
            user: UserId(user),
            decision_index: counts[user as usize],
            time: 0.0,
            phi: fmap.phi(&random_state(&mut rng), pi, action).0,
            reward: rng.random_range(0.0..5.0),
        })
        .expect("indices increase");
    }
    let mean: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
    let hp = Hyperparameters::diagonal(mean, &var, &vec![1e-12; p], 1.0).expect("positive variances");
    let complete = Hyperparameters {
        random_effect_cov: DMatrix::zeros(p, p),
        ..hp.clone()
    };
    let lib_hp = opts.library_hp(&hp);
    let mut worst = 0.0f64;
    for _ in 0..decisions {
        let user = UserId(rng.random_range(0..4));
        let d = fmap.action_contrast(&random_state(&mut rng));
        let a = gp::posterior(&h, user, 0.0, &lib_hp, KernelVariant::Pooled).expect("posterior");
        let b = gp::posterior(&h, user, 0.0, &complete, KernelVariant::Complete).expect("posterior");
        let pa = randomization_probability(&a, &d).expect("probability");
        let pb = randomization_probability(&b, &d).expect("probability");
        worst = worst.max((pa - pb).abs());
    }
    worst
}

/// Largest relative gap between the scalar pooled posterior mean with a
/// huge random-effect variance and the per-user least squares `Y_i / C_i`.
pub fn huge_random_effect(instances: usize, opts: &OracleOptions) -> f64 {
    let mut rng = opts.rng(4);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (h, c, y) = scalar_two_user(&mut rng);
        let hp = opts.library_hp(&scalar_hp(rng.random_range(0.1..2.0), 1e8, rng.random_range(0.1..2.0)));
        for user in 0..2 {
            let got = gp::posterior(&h, UserId(user), 0.0, &hp, KernelVariant::Pooled)
                .expect("posterior")
                .mean[0];
            let target = y[user as usize] / c[user as usize];
            worst = worst.max((got - target).abs() / target.abs().max(1e-3));
        }
    }
    worst
}

/// `log N(x; mean, cov)` through an LU determinant.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let lu = cov.clone().lu();
    let r = x - mean;
    let sol = lu.solve(&r).expect("nonsingular");
    -0.5 * (r.dot(&sol) + lu.determinant().ln() + n * (2.0 * std::f64::consts::PI).ln())
}

/// Reward mean and covariance under the pooled model, from the stacked design.
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

/// Largest absolute gap between the marginal log-likelihood and the
/// multivariate normal log-density of the rewards.
pub fn density(instances: usize, opts: &OracleOptions) -> f64 {
    let mut rng = opts.rng(5);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let p = rng.random_range(1..=3);
        let users = rng.random_range(1..=3u32);
        let n = rng.random_range(1..=20);
        let hp = random_hp(&mut rng, p);
        let h = random_history(&mut rng, p, users, n);
        let (mean, cov) = pooled_reward_moments(&h, &hp, users as usize);
        let r = DVector::from_iterator(h.len(), h.observations().iter().map(|o| o.reward));
        let expected = mvn_log_density(&r, &mean, &cov);
        let got = marginal_log_likelihood(&h, &opts.library_hp(&hp), KernelVariant::Pooled).expect("evidence");
        worst = worst.max((got - expected).abs());
    }
    worst
}

/// Scalar pooled data with population variance 1: `users × per_user` rows.
pub fn recovery_data(seed: u64, users: u32, per_user: u32, re_var: f64, noise_var: f64) -> History {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_pop = Normal::new(0.0, 1.0).expect("valid").sample(&mut rng);
    let noise = Normal::new(0.0, noise_var.sqrt()).expect("valid");
    let spread = Normal::new(0.0, re_var.sqrt()).expect("valid");
    let mut h = History::new();
    for user in 0..users {
        let u = spread.sample(&mut rng);
        for k in 0..per_user {
            let phi: f64 = rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            h.push_observation(Observation {
                user: UserId(user),
                decision_index: k + 1,
                time: 0.0,
                phi: vec![phi],
                reward: phi * (w_pop + u) + noise.sample(&mut rng),
            })
            .expect("indices increase");
        }
    }
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct Recovery {
    pub random_effect_errors: Vec<f64>,
    pub noise_errors: Vec<f64>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

impl Recovery {
    pub fn median_random_effect_error(&self) -> f64 {
        median(&self.random_effect_errors)
    }

    pub fn median_noise_error(&self) -> f64 {
        median(&self.noise_errors)
    }
}

/// Relative errors of the fitted variance components on `seeds` synthetic
/// data sets of 20 users × 100 points.
pub fn variance_recovery(seeds: std::ops::Range<u64>) -> Recovery {
    let (re_var, noise_var) = (0.5, 1.0);
    let hp0 = scalar_hp(1.0, 0.1, 0.3);
    let space = ParameterSpace::new(KernelVariant::Pooled, &[0], &[]);
    let mut out = Recovery {
        random_effect_errors: Vec::new(),
        noise_errors: Vec::new(),
    };
    for seed in seeds {
        let h = recovery_data(seed, 20, 100, re_var, noise_var);
        let fit = fit_hyperparameters(
            &h,
            &hp0,
            &HyperparamBounds::default(),
            KernelVariant::Pooled,
            &space,
            &FitOptions::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .expect("fit");
        let hp = fit.hyperparameters;
        out.random_effect_errors
            .push((hp.random_effect_cov[(0, 0)] - re_var).abs() / re_var);
        out.noise_errors.push((hp.noise_var - noise_var).abs() / noise_var);
    }
    out
}

/// Every check run by the `oracle-check` command, at its tolerance.
pub fn run_all(opts: &OracleOptions) -> Vec<Check> {
    vec![
        Check::new("two-user closed form", two_user_closed_form(100, opts), 1e-8),
        Check::new("stacked joint Gaussian", stacked_gaussian(25, opts), 1e-8),
        Check::new("vanishing random effect", vanishing_random_effect(50, opts), 1e-4),
        Check::new("huge random effect", huge_random_effect(50, opts), 1e-3),
        Check::new("marginal likelihood density", density(20, opts), 1e-8),
    ]
}
