//! Property tests for the structural invariants: monotone sizing, kernel
//! nonnegativity, shift-invariance, quantile/CDF consistency, and
//! order-independent aggregation.

use proptest::prelude::*;

use abpower::clustered::{
    cluster_moments, compute_h, delta_ttest, propagate_moments_continuous, LiftKind, UserAggregate,
};
use abpower::ingest::{aggregate, SessionRecord};
use abpower::sizing::{
    ate_from_mod, mod_from_ate, size_iid_continuous, size_relative_iid_binary, DesignParams,
};
use abpower::stats::{normal_cdf, normal_quantile};
use abpower::Probability;

fn design(alpha: f64, power: f64) -> DesignParams {
    DesignParams::two_sided(
        Probability::new(alpha).unwrap(),
        Probability::new(power).unwrap(),
    )
}

fn arb_aggregates(min_users: usize) -> impl Strategy<Value = Vec<UserAggregate>> {
    prop::collection::vec((1u64..40, 0.0f64..1.0), min_users..60).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (n, frac))| UserAggregate {
                user_id: format!("u{i}"),
                n_sessions: n,
                // Metric sum bounded by the session count, as for a 0/1 metric.
                metric_sum: (frac * n as f64 * 100.0).round() / 100.0,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn quantile_cdf_roundtrip(p in 1e-6f64..=0.999_999) {
        let x = normal_quantile(Probability::new(p).unwrap());
        let back = normal_cdf(x).unwrap();
        prop_assert!((back - p).abs() <= 1e-9);
    }

    #[test]
    fn sizing_monotone_in_lift_power_and_variance(
        sigma2 in 0.01f64..50.0,
        delta in 0.01f64..2.0,
        power in 0.55f64..0.95,
    ) {
        let d = design(0.05, power);
        let n = size_iid_continuous(sigma2, delta, &d).unwrap().n_per_arm;

        let wider = size_iid_continuous(sigma2, delta * 1.5, &d).unwrap().n_per_arm;
        prop_assert!(wider <= n);

        let stronger = design(0.05, (power + 0.04).min(0.99));
        prop_assert!(size_iid_continuous(sigma2, delta, &stronger).unwrap().n_per_arm >= n);

        let noisier = size_iid_continuous(sigma2 * 1.5, delta, &d).unwrap().n_per_arm;
        prop_assert!(noisier >= n);
    }

    #[test]
    fn relative_sizing_monotone_in_lift(p in 0.05f64..0.6, dr in 0.01f64..0.4) {
        let d = design(0.05, 0.8);
        let n = size_relative_iid_binary(Probability::new(p).unwrap(), dr, &d).unwrap().n_per_arm;
        let wider = size_relative_iid_binary(Probability::new(p).unwrap(), dr * 1.5, &d)
            .unwrap()
            .n_per_arm;
        prop_assert!(wider <= n);
    }

    #[test]
    fn mod_roundtrip_and_bounds(
        ate in prop::sample::select(vec![-2.0f64, -0.3, 0.01, 0.5, 10.0]),
        alpha in 0.001f64..0.2,
        power in 0.55f64..0.99,
    ) {
        let d = design(alpha, power);
        let m = mod_from_ate(ate, &d).unwrap();
        prop_assert_eq!(m.signum(), ate.signum());
        prop_assert!(m.abs() < ate.abs());
        let back = ate_from_mod(m, &d).unwrap();
        prop_assert!((back - ate).abs() <= 1e-12 * ate.abs());
    }

    #[test]
    fn kernel_nonnegative_and_shift_invariant(
        aggs in arb_aggregates(2),
        delta in -0.2f64..0.2,
    ) {
        let m = cluster_moments(&aggs).unwrap();
        let h = compute_h(&m).unwrap().value;
        prop_assert!(h >= 0.0);

        let shifted = compute_h(&propagate_moments_continuous(&m, delta)).unwrap().value;
        prop_assert!((shifted - h).abs() <= 1e-10 * h.max(1e-12));
    }

    #[test]
    fn swapping_arms_negates_the_absolute_estimate(
        control in arb_aggregates(3),
        treatment in arb_aggregates(3),
    ) {
        let alpha = Probability::new(0.05).unwrap();
        let fwd = delta_ttest(&control, &treatment, alpha, LiftKind::Absolute);
        let rev = delta_ttest(&treatment, &control, alpha, LiftKind::Absolute);
        // Degenerate all-constant arms are rejected either way around.
        prop_assume!(fwd.is_ok() && rev.is_ok());
        let (fwd, rev) = (fwd.unwrap(), rev.unwrap());
        prop_assert!((fwd.estimate + rev.estimate).abs() <= 1e-12);
        prop_assert_eq!(fwd.significant, rev.significant);
    }

    #[test]
    fn aggregation_ignores_order(mut rows in prop::collection::vec((0u8..6, 0u8..2), 1..80)) {
        let records: Vec<SessionRecord> = rows
            .iter()
            .map(|&(u, x)| SessionRecord {
                user_id: format!("user{u}"),
                session_id: None,
                metric: x as f64,
            })
            .collect();
        let (sorted, summary) = aggregate(&records);
        rows.reverse();
        let reversed: Vec<SessionRecord> = rows
            .iter()
            .map(|&(u, x)| SessionRecord {
                user_id: format!("user{u}"),
                session_id: None,
                metric: x as f64,
            })
            .collect();
        let (same, _) = aggregate(&reversed);
        prop_assert_eq!(&sorted, &same);
        prop_assert_eq!(summary.rows as usize, records.len());
        let total: u64 = sorted.iter().map(|a| a.n_sessions).sum();
        prop_assert_eq!(total as usize, records.len());
    }
}
