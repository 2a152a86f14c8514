use ipool::oracle::{self, OracleOptions};

#[test]
fn two_user_formula_reduces_to_complete_pooling() {
    let (c, y, w, noise) = ([2.0, 3.0], [1.5, -0.5], 0.7, 0.4);
    let m = oracle::two_user_means(c, y, w, 0.0, noise);
    let pooled = (y[0] + y[1]) / (c[0] + c[1] + noise / w);
    assert!((m[0] - pooled).abs() < 1e-12);
    assert!((m[1] - pooled).abs() < 1e-12);
}

#[test]
fn two_user_formula_with_one_observation_each() {
    // phi = 1, r = 2 for user 1 and r = 0 for user 2, all variances 1.
    let m = oracle::two_user_means([1.0, 1.0], [2.0, 0.0], 1.0, 1.0, 1.0);
    // Reward covariance [[3, 1], [1, 3]]; covariance of w + u1 with the rewards (2, 1).
    assert!((m[0] - 1.25).abs() < 1e-12, "{m:?}");
    assert!((m[1] - 0.25).abs() < 1e-12, "{m:?}");
}

#[test]
fn all_checks_pass_on_several_seeds() {
    for seed in 0..3 {
        for c in oracle::run_all(&OracleOptions { seed, corrupt_kernel: false }) {
            assert!(c.passed, "seed {seed}: {c:?}");
        }
    }
}

#[test]
fn corrupted_kernel_fails_the_kernel_sensitive_checks() {
    let checks = oracle::run_all(&OracleOptions { seed: 0, corrupt_kernel: true });
    for c in checks.iter().filter(|c| c.name != "huge random effect") {
        assert!(!c.passed, "{c:?}");
    }
}

#[test]
fn variance_components_are_recovered() {
    let rec = oracle::variance_recovery(0..10);
    assert!(rec.median_random_effect_error() <= 0.3);
    assert!(rec.median_noise_error() <= 0.3);
}
