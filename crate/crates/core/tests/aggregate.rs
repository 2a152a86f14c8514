use ipool_core::aggregate::{aggregate, MeanStat};
use ipool_core::trial::TrialRecord;
use ipool_core::{Action, UserId};

fn record(user: u32, week: u32, available: bool, treat: bool, regret: f64) -> TrialRecord {
    TrialRecord {
        trial_seed: 0,
        user: UserId(user),
        group: 1 + (user % 2) as u8,
        cohort: 1 + user,
        day: 0,
        minute: 540,
        decision_index: available.then_some(1),
        week_in_study: week,
        state: Default::default(),
        available,
        action: available.then(|| Action::from_indicator(treat)),
        probability: available.then_some(0.5),
        reward: 0.0,
        effect: 0.0,
        regret,
    }
}

#[test]
fn single_user_is_identity() {
    let rows = vec![record(0, 1, true, true, 0.4)];
    let a = aggregate(&rows, 1);
    assert_eq!(a.regret_by_week.len(), 1);
    assert_eq!(a.regret_by_week[0].regret.mean, 0.4);
    assert_eq!(a.cumulative_regret.mean, 0.4);
    assert_eq!(a.send_by_group[&1].fraction(), 1.0);
}

#[test]
fn hand_computed_two_users() {
    let rows = vec![
        record(0, 1, true, true, 0.2),
        record(0, 1, true, false, 0.4),
        record(0, 1, false, false, 0.0),
        record(1, 1, true, false, 1.0),
        record(1, 2, true, true, 0.0),
    ];
    let a = aggregate(&rows, 2);
    // week 1: user 0 averages 0.3, user 1 averages 1.0
    let w1 = &a.regret_by_week[0];
    assert_eq!(w1.week, 1);
    assert!((w1.regret.mean - 0.65).abs() < 1e-12);
    assert_eq!(w1.regret.n, 2);
    assert!((a.regret_by_week[1].regret.mean - 0.0).abs() < 1e-12);
    assert!((a.cumulative_regret.mean - 0.8).abs() < 1e-12);
    assert_eq!(a.send_by_group[&1].sent, 1);
    assert_eq!(a.send_by_group[&1].available, 2);
    assert_eq!(a.send_by_group[&2].sent, 1);
    assert_eq!(a.last_week_send_by_cohort[&2].fraction(), 1.0);
    assert!((a.availability_rate() - 0.8).abs() < 1e-12);
    assert!((a.mean_weekly_regret(1, 2) - 0.325).abs() < 1e-12);
}

#[test]
fn standard_error_of_known_sample() {
    let s = MeanStat::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    let expected = (5.0f64 / 3.0 / 4.0).sqrt();
    assert!((s.std_error - expected).abs() < 1e-12);
}
