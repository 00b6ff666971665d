use mindqa::rewards::{
    final_reward, planned_reward, progressive_reward, total_reward, RewardConfig, RewardError,
};
use proptest::prelude::*;

#[test]
fn config_validation() {
    assert!(RewardConfig::default().validate().is_ok());
    let bad = RewardConfig {
        lambda_f: -0.1,
        n_max: 80,
    };
    assert!(matches!(bad.validate(), Err(RewardError::Config(_))));
    let zero = RewardConfig {
        lambda_f: 0.01,
        n_max: 0,
    };
    assert!(zero.validate().is_err());
    let nan = RewardConfig {
        lambda_f: f64::NAN,
        n_max: 80,
    };
    assert!(nan.validate().is_err());
}

#[test]
fn out_of_range_probabilities() {
    assert_eq!(
        planned_reward(-0.1, 0.5),
        Err(RewardError::Probability(-0.1))
    );
    assert!(planned_reward(0.5, f64::NAN).is_err());
    assert_eq!(planned_reward(1.0, 0.0), Ok(1.0));
}

proptest! {
    #[test]
    fn progressive_rewards_telescope(ds in prop::collection::vec(0u32..40, 1..30)) {
        let sum: f64 = ds.windows(2).map(|w| progressive_reward(w[0], w[1])).sum();
        prop_assert_eq!(sum, ds[0] as f64 - *ds.last().unwrap() as f64);
    }

    #[test]
    fn final_reward_shrinks_with_length(n in 0usize..200, lambda in 0.0f64..0.1, n_max in 1usize..120) {
        let cfg = RewardConfig { lambda_f: lambda, n_max };
        let r = final_reward(true, n, &cfg);
        prop_assert!(r >= 1.0);
        prop_assert!(final_reward(true, n + 1, &cfg) <= r);
        prop_assert_eq!(final_reward(false, n, &cfg), 0.0);
        if n >= n_max {
            prop_assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn planned_reward_is_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let r = planned_reward(a, b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert_eq!(r, -planned_reward(b, a).unwrap());
    }

    #[test]
    fn final_reward_only_on_terminal(rp in -1.0f64..1.0, rm in -1.0f64..1.0, rf in 0.01f64..2.0) {
        prop_assert!(total_reward(rp, rm, rf, false).is_err());
        prop_assert_eq!(total_reward(rp, rm, rf, true).unwrap(), rp + rm + rf);
        prop_assert_eq!(total_reward(rp, rm, 0.0, false).unwrap(), rp + rm);
    }
}
