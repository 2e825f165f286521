use proptest::prelude::*;
use vmimo_ips::analytic::{
    analytic_report, asymptotics_report, blocking_probability, expected_max_hop, ips_conventional, ips_vmimo,
    transition_probabilities,
};
use vmimo_ips::ScenarioParams;

fn params_strategy() -> impl Strategy<Value = ScenarioParams> {
    (-5.0..-1.0f64, -5.0..-1.0f64, 0.5..80.0f64, 20.0..500.0f64, 1.05..6.0f64, 0.001..0.2f64).prop_map(
        |(lr, lf, v, r, ratio, tau)| ScenarioParams {
            lambda_r: 10f64.powf(lr),
            lambda_f: 10f64.powf(lf),
            v,
            tx_range: r,
            detect_range: r * ratio,
            tau,
            thresholds: None,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn probabilities_sum_to_one(p in params_strategy()) {
        let rep = analytic_report(&p).unwrap();
        for t in [rep.transition, rep.conventional_transition] {
            prop_assert!((t.sigma1 + t.sigma2 - 1.0).abs() <= 1e-12);
            prop_assert!((t.p_f + t.p_r + t.p_b - 1.0).abs() <= 1e-12);
            prop_assert!(t.p_b > 0.0 && t.p_b < 1.0);
            prop_assert!(t.sigma1 > 0.0);
        }
    }

    #[test]
    fn speed_is_cycle_distance_over_cycle_time(p in params_strategy()) {
        let rep = analytic_report(&p).unwrap();
        for (e, ips) in [
            (rep.expectations, rep.ips_vmimo),
            (rep.conventional_expectations, rep.ips_conventional),
        ] {
            let renewal = e.e_d_prop / (e.e_t_prop + e.e_t_stop);
            prop_assert!(((ips - renewal) / renewal).abs() <= 1e-9, "{} vs {}", ips, renewal);
            prop_assert!(ips.is_finite() && ips > 0.0);
        }
    }

    #[test]
    fn hop_stays_inside_detection_range(l in 1e-6..10.0f64, r in 10.0..500.0f64, ratio in 1.01..6.0f64) {
        let h = expected_max_hop(l, r, r * ratio).unwrap();
        prop_assert!(h > 0.0 && h < r * ratio);
        prop_assert!(expected_max_hop(l * 1.5, r, r * ratio).unwrap() > h);
    }

    #[test]
    fn blocking_is_a_probability(l in 1e-6..1.0f64, r in 10.0..500.0f64, ratio in 1.01..6.0f64) {
        let p = blocking_probability(l, r, r * ratio).unwrap();
        prop_assert!((0.0..1.0).contains(&p));
        prop_assert!(p <= (-l * r).exp());
    }

    #[test]
    fn faster_vehicles_never_slow_the_beacon(p in params_strategy(), k in 1.01..4.0f64) {
        let fast = ScenarioParams { v: p.v * k, ..p };
        let limit = asymptotics_report(&p).unwrap().infinite_speed_limit;
        let (slow_ips, fast_ips) = (ips_vmimo(&p).unwrap(), ips_vmimo(&fast).unwrap());
        prop_assert!(fast_ips >= slow_ips * (1.0 - 1e-12));
        prop_assert!(fast_ips <= limit * (1.0 + 1e-12), "{} > {}", fast_ips, limit);
    }
}

#[test]
fn transitions_at_the_extremes() {
    let t = transition_probabilities(0.005, 0.005, 1.0).unwrap();
    assert_eq!((t.p_f, t.p_r, t.sigma1, t.sigma2), (0.0, 0.0, 0.0, 1.0));
    let t = transition_probabilities(0.005, 0.005, 0.0).unwrap();
    assert_eq!((t.sigma1, t.sigma2), (0.5, 0.5));
    assert!(transition_probabilities(0.0, 0.0, 0.1).is_err());
}

#[test]
fn conventional_flooding_saturates_at_one_hop_per_slot() {
    let dense = ScenarioParams::symmetric(0.05, 25.0);
    let cap = dense.tx_range / dense.tau;
    let ips = ips_conventional(&dense).unwrap();
    assert!(ips < cap && ips > 0.99 * cap);
}

#[test]
fn combining_never_loses_to_flooding_in_dense_traffic() {
    for lane in [0.005, 0.01, 0.02, 0.05] {
        let p = ScenarioParams::symmetric(lane, 25.0);
        assert!(ips_vmimo(&p).unwrap() > ips_conventional(&p).unwrap(), "lane {lane}");
    }
}
