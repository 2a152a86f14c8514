mod common;

use common::*;
use ipool_core::gp::{self, History, KernelPoint, Observation};
use ipool_core::linalg;
use ipool_core::{Hyperparameters, KernelVariant, UserId};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_hp(w: f64, u: f64, noise: f64) -> Hyperparameters {
    Hyperparameters::diagonal(vec![0.0], &[w], &[u], noise).unwrap()
}

fn obs(user: u32, k: u32, phi: Vec<f64>, reward: f64) -> Observation {
    Observation {
        user: UserId(user),
        decision_index: k,
        time: 0.0,
        phi,
        reward,
    }
}

/// Scalar two-user history with the given per-user features and rewards.
fn two_user_history(rng: &mut ChaCha8Rng) -> (History, [f64; 2], [f64; 2]) {
    let mut h = History::new();
    let mut c = [0.0; 2];
    let mut y = [0.0; 2];
    for user in 0..2u32 {
        let k = rng.random_range(1..6u32);
        for i in 0..k {
            let phi = rng.random_range(-2.0..2.0);
            let r = rng.random_range(-3.0..3.0);
            c[user as usize] += phi * phi;
            y[user as usize] += phi * r;
            h.push_observation(obs(user, i + 1, vec![phi], r)).unwrap();
        }
    }
    (h, c, y)
}

fn closed_form(c: [f64; 2], y: [f64; 2], w: f64, u: f64, noise: f64) -> [f64; 2] {
    let g = w / (w + u);
    let d = noise / w;
    let den = (1.0 - g * g) * c[0] * c[1] + d * g * (c[0] + c[1]) + (d * g) * (d * g);
    [
        ((d * g + (1.0 - g * g) * c[1]) * y[0] + d * g * g * y[1]) / den,
        ((d * g + (1.0 - g * g) * c[0]) * y[1] + d * g * g * y[0]) / den,
    ]
}

#[test]
fn empty_history_returns_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hp = random_hp(&mut rng, 3);
    for variant in [KernelVariant::Pooled, KernelVariant::PersonSpecific] {
        let post = gp::posterior(&History::new(), UserId(4), 0.0, &hp, variant).unwrap();
        assert_eq!(post.mean, hp.prior_mean);
        assert!(max_abs(&post.cov, &(&hp.prior_cov + &hp.random_effect_cov)) < 1e-15);
    }
}

#[test]
fn single_observation_scalar() {
    let (w, u, noise, r) = (0.7, 0.4, 0.5, 1.3);
    let mut h = History::new();
    h.push_observation(obs(0, 1, vec![1.0], r)).unwrap();
    let post = gp::posterior(&h, UserId(0), 0.0, &scalar_hp(w, u, noise), KernelVariant::Pooled).unwrap();
    let expected = (w + u) * r / (w + u + noise);
    assert!((post.mean[0] - expected).abs() < 1e-12);
}

#[test]
fn two_user_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (h, c, y) = two_user_history(&mut rng);
        let w = rng.random_range(0.05..3.0);
        let u = rng.random_range(0.05..3.0);
        let noise = rng.random_range(0.05..3.0);
        let hp = scalar_hp(w, u, noise);
        let expected = closed_form(c, y, w, u, noise);
        for user in 0..2 {
            let post = gp::posterior(&h, UserId(user), 0.0, &hp, KernelVariant::Pooled).unwrap();
            assert!((post.mean[0] - expected[user as usize]).abs() < 1e-8);
        }
    }
}

#[test]
fn stacked_gaussian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let p = rng.random_range(1..=3);
        let users = rng.random_range(1..=3u32);
        let n = rng.random_range(0..=20);
        let hp = random_hp(&mut rng, p);
        let h = random_history(&mut rng, p, users, n);
        let joint = stacked_posterior(&h, &hp, users as usize);
        for user in 0..users {
            let (mean, cov) = joint.user_marginal(user as usize);
            let post = gp::posterior(&h, UserId(user), 0.0, &hp, KernelVariant::Pooled).unwrap();
            assert!((&post.mean - mean).abs().max() < 1e-8);
            assert!(max_abs(&post.cov, &cov) < 1e-8);
        }
    }
}

#[test]
fn vanishing_random_effect_matches_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let p = rng.random_range(1..=3);
        let mut hp = random_hp(&mut rng, p);
        hp.random_effect_cov = DMatrix::identity(p, p) * 1e-12;
        let h = random_history(&mut rng, p, 3, 15);
        let pooled = gp::posterior(&h, UserId(1), 0.0, &hp, KernelVariant::Pooled).unwrap();
        let complete = gp::posterior(&h, UserId(1), 0.0, &hp, KernelVariant::Complete).unwrap();
        assert!((&pooled.mean - &complete.mean).abs().max() < 1e-6);
    }
}

#[test]
fn huge_random_effect_gives_per_user_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (h, c, y) = two_user_history(&mut rng);
        let hp = scalar_hp(rng.random_range(0.1..2.0), 1e8, rng.random_range(0.1..2.0));
        for user in 0..2 {
            let post = gp::posterior(&h, UserId(user), 0.0, &hp, KernelVariant::Pooled).unwrap();
            let target = y[user as usize] / c[user as usize];
            assert!((post.mean[0] - target).abs() <= 1e-3 * target.abs().max(1e-3));
        }
    }
}

#[test]
fn person_specific_ignores_other_users() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hp = random_hp(&mut rng, 2);
    let h = random_history(&mut rng, 2, 3, 20);
    let own = h.filtered(|o| o.user == UserId(0));
    let all = gp::posterior(&h, UserId(0), 0.0, &hp, KernelVariant::PersonSpecific).unwrap();
    let alone = gp::posterior(&own, UserId(0), 0.0, &hp, KernelVariant::PersonSpecific).unwrap();
    assert!((&all.mean - &alone.mean).abs().max() < 1e-10);
    assert!(max_abs(&all.cov, &alone.cov) < 1e-10);
}

#[test]
fn time_varying_at_equal_times_adds_time_effect() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hp = random_hp(&mut rng, 2);
    let dv = random_spd(&mut rng, 2, 0.1);
    let tv = hp.clone().with_time_effect(dv.clone(), 2.0);
    let phi1 = [0.3, -1.0];
    let phi2 = [1.2, 0.5];
    let a = KernelPoint { phi: &phi1, user: UserId(0), time: 3.0 };
    let b = KernelPoint { phi: &phi2, user: UserId(1), time: 3.0 };
    let k_tv = gp::kernel(&a, &b, &tv, KernelVariant::TimeVarying).unwrap();
    let k_pool = gp::kernel(&a, &b, &hp, KernelVariant::Pooled).unwrap();
    let extra = DVector::from_column_slice(&phi1).dot(&(&dv * DVector::from_column_slice(&phi2)));
    assert!((k_tv - k_pool - extra).abs() < 1e-12);
}

fn arbitrary_history() -> impl Strategy<Value = (u64, usize, u32, usize)> {
    (any::<u64>(), 1..=3usize, 1..=4u32, 0..=40usize)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn kernel_matrix_is_psd((seed, p, users, n) in arbitrary_history()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = random_hp(&mut rng, p).with_time_effect(random_spd(&mut rng, p, 0.0), 1.5);
        let h = random_history(&mut rng, p, users, n);
        for variant in [
            KernelVariant::Pooled,
            KernelVariant::Complete,
            KernelVariant::PersonSpecific,
            KernelVariant::TimeVarying,
            KernelVariant::Tvgp { forgetting: 0.1 },
        ] {
            let k = gp::kernel_matrix(&h, &hp, variant).unwrap();
            prop_assert!(max_abs(&k, &k.transpose()) < 1e-12);
            if n > 0 {
                prop_assert!(linalg::min_eigenvalue(&k) >= -1e-8);
            }
        }
    }

    #[test]
    fn observing_never_widens_the_observed_direction(seed in any::<u64>(), p in 1..=3usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = random_hp(&mut rng, p);
        let stream = random_history(&mut rng, p, 2, 12);
        let mut h = History::new();
        for o in stream.observations() {
            let phi = DVector::from_column_slice(&o.phi);
            let before = gp::posterior(&h, o.user, 0.0, &hp, KernelVariant::Pooled).unwrap();
            h.push_observation(o.clone()).unwrap();
            let after = gp::posterior(&h, o.user, 0.0, &hp, KernelVariant::Pooled).unwrap();
            let v0 = phi.dot(&(&before.cov * &phi));
            let v1 = phi.dot(&(&after.cov * &phi));
            prop_assert!(v1 <= v0 + 1e-10);
        }
    }

    #[test]
    fn posterior_covariance_is_symmetric_psd((seed, p, users, n) in arbitrary_history()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = random_hp(&mut rng, p);
        let h = random_history(&mut rng, p, users, n);
        let post = gp::posterior(&h, UserId(0), 0.0, &hp, KernelVariant::Pooled).unwrap();
        prop_assert!(linalg::is_symmetric_psd(&post.cov, 1e-9));
    }
}
