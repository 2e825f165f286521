//! Closed-form information propagation speed.
//!
//! The propagation process is a renewal reward process: a PROPAGATE period
//! (decode hops, PROP_I, interleaved with forward-lane carrying, PROP_II)
//! followed by a STOP period during which a reverse-lane head waits to be
//! overtaken. The long-run speed is `E[D_prop] / (E[T_prop] + E[T_stop])`.
//!
//! The virtual-MIMO scheme and conventional flooding share the same chain and
//! differ only in the per-slot blocking probability and the mean hop length,
//! so both are evaluated through [`RenewalChain`].

mod oracle;

pub use oracle::{mc_blocking_probability, mc_expected_max_hop, HopRule, McEstimate};

use libm::erfc;

use crate::error::{Error, Result};
use crate::model::ScenarioParams;

/// Below this blocking probability the speed is evaluated in the form scaled
/// by `p_b`, so `1/p_b` never overflows.
const SCALED_FORM_BELOW: f64 = 1e-12;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Per-slot transition structure of the PROP_I chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionProbs {
    pub p_b: f64,
    pub p_f: f64,
    pub p_r: f64,
    /// PROP_I exits into PROP_II (blocked on a forward-lane head).
    pub sigma1: f64,
    /// PROP_I exits into STOP (blocked on a reverse-lane head).
    pub sigma2: f64,
}

/// Expected durations and distances of the renewal states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalExpectations {
    pub e_t_stop: f64,
    pub e_t_prop2: f64,
    pub e_d_prop2: f64,
    /// Mean one-slot hop while in PROP_I.
    pub e_d_mprop: f64,
    pub e_t_prop: f64,
    pub e_d_prop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticReport {
    pub params: ScenarioParams,
    pub transition: TransitionProbs,
    pub expectations: RenewalExpectations,
    pub conventional_transition: TransitionProbs,
    pub conventional_expectations: RenewalExpectations,
    pub ips_vmimo: f64,
    pub ips_conventional: f64,
    pub gain: f64,
}

/// Limits and high-density approximations of the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticsReport {
    pub low_density_limit: f64,
    pub high_density_approx: f64,
    pub high_density_limit: f64,
    pub zero_speed_limit: f64,
    pub infinite_speed_limit: f64,
    pub gain_high_density_approx: f64,
    pub gain_limit: f64,
}

fn check_ranges(r: f64, big_r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::invalid("requires r > 0"));
    }
    if !(big_r > r) {
        return Err(Error::invalid("requires R > r"));
    }
    Ok(())
}

fn check_positive(value: f64, name: &str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("requires {name} > 0")))
    }
}

/// Probability that no uninformed vehicle ahead can decode in a slot.
///
/// `e^{-λr}` is the chance that nobody sits within `r` of the nearest
/// receiver; the second factor is a Gaussian approximation of the chance that
/// the Poisson number of transmitters at distances in `(r, R)` still fails to
/// reach the threshold `1/r²`.
pub fn blocking_probability(lambda: f64, r: f64, big_r: f64) -> Result<f64> {
    check_positive(lambda, "lambda")?;
    check_ranges(r, big_r)?;
    let mu = lambda * (1.0 / r - 1.0 / big_r);
    let sigma = (lambda / 3.0 * (1.0 / r.powi(3) - 1.0 / big_r.powi(3))).sqrt();
    let z = (1.0 / (r * r) - mu) / sigma;
    Ok((-lambda * r).exp() * normal_cdf(z))
}

pub fn transition_probabilities(lambda_r: f64, lambda_f: f64, p_b: f64) -> Result<TransitionProbs> {
    if !(lambda_r >= 0.0) || !(lambda_f >= 0.0) {
        return Err(Error::invalid("requires lambda_r >= 0 and lambda_f >= 0"));
    }
    let lambda = lambda_r + lambda_f;
    if lambda <= 0.0 {
        return Err(Error::invalid("requires lambda_r + lambda_f > 0"));
    }
    if !(0.0..=1.0).contains(&p_b) {
        return Err(Error::invalid("requires 0 <= p_b <= 1"));
    }
    let pass = 1.0 - p_b;
    let p_f = pass * lambda_f / lambda;
    let p_r = pass * lambda_r / lambda;
    Ok(TransitionProbs {
        p_b,
        p_f,
        p_r,
        sigma1: p_r,
        sigma2: 1.0 - p_r,
    })
}

/// Worst-case mean STOP duration, `1/(2vλ)`.
pub fn expected_stop_time(lambda: f64, v: f64) -> Result<f64> {
    check_positive(lambda, "lambda")?;
    check_positive(v, "v")?;
    Ok(1.0 / (2.0 * v * lambda))
}

/// `(E[T_prop2], E[D_prop2]) = (1/(2vλ), 1/λ)`.
pub fn prop2_expectations(lambda: f64, v: f64) -> Result<(f64, f64)> {
    check_positive(lambda, "lambda")?;
    check_positive(v, "v")?;
    let distance = 1.0 / lambda;
    Ok((distance / (2.0 * v), distance))
}

/// Mean farthest one-slot hop under signal combining, `λr²R/(λr² + R)`.
pub fn expected_max_hop(lambda: f64, r: f64, big_r: f64) -> Result<f64> {
    check_positive(lambda, "lambda")?;
    check_ranges(r, big_r)?;
    let lr2 = lambda * r * r;
    Ok(lr2 * big_r / (lr2 + big_r))
}

/// The renewal chain shared by both broadcast schemes.
#[derive(Debug, Clone, Copy)]
struct RenewalChain {
    transition: TransitionProbs,
    hop: f64,
    lambda: f64,
    v: f64,
    tau: f64,
}

impl RenewalChain {
    fn new(params: &ScenarioParams, p_b: f64, hop: f64) -> Result<Self> {
        params.validate()?;
        if params.lambda_r <= 0.0 {
            return Err(Error::DegenerateModel(
                "lambda_r = 0 leaves no reverse-lane head, sigma1 = 0".into(),
            ));
        }
        let transition = transition_probabilities(params.lambda_r, params.lambda_f, p_b)?;
        if transition.sigma1 <= 0.0 {
            return Err(Error::DegenerateModel("sigma1 = 0 (p_b = 1)".into()));
        }
        Ok(RenewalChain {
            transition,
            hop,
            lambda: params.lambda(),
            v: params.v,
            tau: params.tau,
        })
    }

    fn vmimo(params: &ScenarioParams) -> Result<Self> {
        params.validate()?;
        let lambda = params.lambda();
        let p_b = blocking_probability(lambda, params.tx_range, params.detect_range)?;
        let hop = expected_max_hop(lambda, params.tx_range, params.detect_range)?;
        Self::new(params, p_b, hop)
    }

    fn conventional(params: &ScenarioParams) -> Result<Self> {
        params.validate()?;
        let p_b = (-params.lambda() * params.tx_range).exp();
        Self::new(params, p_b, params.tx_range)
    }

    /// `σ2/σ1 + σ1`, the mean number of PROP_I visits per cycle.
    fn visits(&self) -> f64 {
        let t = &self.transition;
        t.sigma2 / t.sigma1 + t.sigma1
    }

    fn carry_ratio(&self) -> f64 {
        self.transition.sigma2 / self.transition.sigma1
    }

    fn expectations(&self) -> RenewalExpectations {
        let p_b = self.transition.p_b;
        let a = self.visits();
        let e_t_stop = 1.0 / (2.0 * self.v * self.lambda);
        let e_d_prop2 = 1.0 / self.lambda;
        let e_t_prop2 = e_d_prop2 / (2.0 * self.v);
        RenewalExpectations {
            e_t_stop,
            e_t_prop2,
            e_d_prop2,
            e_d_mprop: self.hop,
            e_t_prop: a * self.tau / p_b + self.carry_ratio() * e_t_prop2,
            e_d_prop: a * self.hop / p_b + self.carry_ratio() * e_d_prop2,
        }
    }

    fn speed(&self) -> f64 {
        let p_b = self.transition.p_b;
        let a = self.visits();
        let carried = self.carry_ratio() / self.lambda;
        let waiting = 1.0 / (self.transition.sigma1 * 2.0 * self.v * self.lambda);
        if p_b < SCALED_FORM_BELOW {
            (a * self.hop + p_b * carried) / (a * self.tau + p_b * waiting)
        } else {
            (a * self.hop / p_b + carried) / (a * self.tau / p_b + waiting)
        }
    }

    fn infinite_speed_limit(&self) -> f64 {
        let p_b = self.transition.p_b;
        self.hop / self.tau + self.carry_ratio() / self.lambda * p_b / (self.visits() * self.tau)
    }
}

/// `(E[T_prop], E[D_prop])` for the virtual-MIMO scheme.
pub fn propagate_expectations(params: &ScenarioParams) -> Result<(f64, f64)> {
    let e = RenewalChain::vmimo(params)?.expectations();
    Ok((e.e_t_prop, e.e_d_prop))
}

/// Long-run speed of the virtual-MIMO scheme in the reverse-lane frame.
pub fn ips_vmimo(params: &ScenarioParams) -> Result<f64> {
    Ok(RenewalChain::vmimo(params)?.speed())
}

/// Long-run speed of conventional flooding: blocking `e^{-λr}`, hop `r`.
pub fn ips_conventional(params: &ScenarioParams) -> Result<f64> {
    Ok(RenewalChain::conventional(params)?.speed())
}

pub fn analytic_report(params: &ScenarioParams) -> Result<AnalyticReport> {
    let vm = RenewalChain::vmimo(params)?;
    let conv = RenewalChain::conventional(params)?;
    let ips_vmimo = vm.speed();
    let ips_conventional = conv.speed();
    Ok(AnalyticReport {
        params: *params,
        transition: vm.transition,
        expectations: vm.expectations(),
        conventional_transition: conv.transition,
        conventional_expectations: conv.expectations(),
        ips_vmimo,
        ips_conventional,
        gain: ips_vmimo / ips_conventional,
    })
}

pub fn asymptotics_report(params: &ScenarioParams) -> Result<AsymptoticsReport> {
    let vm = RenewalChain::vmimo(params)?;
    let lambda = params.lambda();
    let (r, big_r, tau) = (params.tx_range, params.detect_range, params.tau);
    Ok(AsymptoticsReport {
        low_density_limit: params.v,
        high_density_approx: vm.hop / tau,
        high_density_limit: big_r / tau,
        zero_speed_limit: 0.0,
        infinite_speed_limit: vm.infinite_speed_limit(),
        gain_high_density_approx: lambda * r * big_r / (lambda * r * r + big_r),
        gain_limit: big_r / r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Reference values below come from a 40-digit evaluation of the same
    // closed forms with an independent normal CDF (mpmath erfc).
    const PB_DEFAULT: f64 = 0.045837492154397774;
    const IPS_VMIMO_DEFAULT: f64 = 1652.7173723306633;
    const IPS_CONV_DEFAULT: f64 = 547.76903161704235;

    fn defaults() -> ScenarioParams {
        ScenarioParams::default()
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, max_relative = 1e-15);
        assert!((normal_cdf(1.0) - 0.84134474606854295).abs() < 1e-15);
        assert!((normal_cdf(-0.4161) - 0.33866841497864934).abs() < 1e-15);
        assert!((normal_cdf(-5.0) - 2.8665157187919391e-7).abs() < 1e-18);
    }

    #[test]
    fn blocking_probability_reference() {
        let p = blocking_probability(0.01, 200.0, 600.0).unwrap();
        assert_relative_eq!(p, PB_DEFAULT, max_relative = 1e-12);
        // hand evaluation quoted to three digits
        assert!((p - 0.0458).abs() < 5e-5);
        assert!(blocking_probability(0.1, 200.0, 600.0).unwrap() < 1e-8);
        assert_relative_eq!(
            blocking_probability(0.002, 200.0, 600.0).unwrap(),
            0.65667902765197612,
            max_relative = 1e-12
        );
    }

    #[test]
    fn blocking_probability_decreases_on_probe_points() {
        let p = |l| blocking_probability(l, 200.0, 600.0).unwrap();
        assert!(p(0.002) > p(0.004));
        assert!(p(0.004) > p(0.008));
    }

    #[test]
    fn blocking_probability_rejects_collapsed_ranges() {
        assert!(matches!(
            blocking_probability(0.01, 200.0, 200.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(blocking_probability(0.0, 200.0, 600.0).is_err());
    }

    #[test]
    fn transition_examples() {
        let t = transition_probabilities(0.005, 0.005, 0.0).unwrap();
        for x in [t.p_f, t.p_r, t.sigma1, t.sigma2] {
            assert_relative_eq!(x, 0.5);
        }
        let t = transition_probabilities(0.005, 0.005, 0.0458).unwrap();
        assert_relative_eq!(t.sigma1, 0.4771, max_relative = 1e-12);
        assert_relative_eq!(t.sigma2, 0.5229, max_relative = 1e-12);
        let t = transition_probabilities(0.003, 0.009, 1.0).unwrap();
        assert_eq!((t.p_f, t.p_r, t.sigma1, t.sigma2), (0.0, 0.0, 0.0, 1.0));
        assert!(transition_probabilities(0.0, 0.0, 0.5).is_err());
        assert!(transition_probabilities(0.1, 0.0, 1.5).is_err());
    }

    #[test]
    fn stop_and_carry_expectations() {
        assert_relative_eq!(expected_stop_time(1.0, 0.5).unwrap(), 1.0);
        assert_relative_eq!(expected_stop_time(0.01, 25.0).unwrap(), 2.0);
        assert_relative_eq!(
            expected_stop_time(0.01, 50.0).unwrap(),
            expected_stop_time(0.01, 25.0).unwrap() / 2.0
        );
        assert!(expected_stop_time(0.0, 1.0).is_err());
        assert!(expected_stop_time(1.0, -1.0).is_err());
        let (t, d) = prop2_expectations(0.01, 25.0).unwrap();
        assert_relative_eq!(t, 2.0);
        assert_relative_eq!(d, 100.0);
        assert_eq!(prop2_expectations(1.0, 0.5).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn max_hop_examples_and_limits() {
        assert_relative_eq!(expected_max_hop(0.01, 200.0, 600.0).unwrap(), 240.0);
        let dense = expected_max_hop(1e6, 200.0, 600.0).unwrap();
        assert!(dense < 600.0 && dense > 599.99);
        let sparse = expected_max_hop(1e-9, 200.0, 600.0).unwrap();
        assert_relative_eq!(sparse, 1e-9 * 4e4, max_relative = 1e-6);
        assert!(expected_max_hop(0.01, 600.0, 200.0).is_err());
    }

    #[test]
    fn propagate_expectations_reference() {
        let (t, d) = propagate_expectations(&defaults()).unwrap();
        assert_relative_eq!(t, 3.0501675698178878, max_relative = 1e-12);
        assert_relative_eq!(d, 8346.4996758189508, max_relative = 1e-12);
        // quoted hand evaluation
        assert!((t - 3.050).abs() < 1e-3);
        assert!(((d - 8344.0) / 8344.0).abs() < 1e-3);
    }

    #[test]
    fn prop_i_terms_share_the_same_scale() {
        let p = defaults();
        let lambda = p.lambda();
        let pb = blocking_probability(lambda, p.tx_range, p.detect_range).unwrap();
        let tr = transition_probabilities(p.lambda_r, p.lambda_f, pb).unwrap();
        let ratio = tr.sigma2 / tr.sigma1;
        let hop = expected_max_hop(lambda, p.tx_range, p.detect_range).unwrap();
        let (t, d) = propagate_expectations(&p).unwrap();
        let lhs = t - ratio / (2.0 * p.v * lambda);
        let rhs = p.tau / hop * (d - ratio / lambda);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn ips_reference_values() {
        let r = analytic_report(&defaults()).unwrap();
        assert_relative_eq!(r.ips_vmimo, IPS_VMIMO_DEFAULT, max_relative = 1e-11);
        assert_relative_eq!(r.ips_conventional, IPS_CONV_DEFAULT, max_relative = 1e-11);
        assert_relative_eq!(r.gain, 3.0171792798358034, max_relative = 1e-11);
        assert_relative_eq!(r.transition.p_b, PB_DEFAULT, max_relative = 1e-12);
        assert_relative_eq!(r.transition.sigma1, 0.47708125392280111, max_relative = 1e-12);
        // quoted hand evaluations: ~1.65e3, ~5.48e2, ~3.0
        assert!((r.ips_vmimo - 1.65e3).abs() < 10.0);
        assert!((r.ips_conventional - 548.0).abs() < 1.0);
    }

    #[test]
    fn low_density_limit_is_twice_the_vehicle_speed() {
        let p = ScenarioParams::symmetric(1e-5, 25.0);
        let ips = ips_vmimo(&p).unwrap();
        assert!((ips - 50.0).abs() / 50.0 < 0.05, "ips = {ips}");
        let conv = ips_conventional(&p).unwrap();
        assert!((conv - 50.0).abs() / 50.0 < 0.05, "conv = {conv}");
    }

    #[test]
    fn high_density_ceilings() {
        let p = ScenarioParams::symmetric(0.05, 25.0);
        let ips = ips_vmimo(&p).unwrap();
        assert!(ips < 24000.0 && ips > 0.85 * 24000.0, "ips = {ips}");
        let conv = ips_conventional(&p).unwrap();
        assert!(conv < 8000.0 && conv > 7000.0, "conv = {conv}");
    }

    #[test]
    fn scaled_form_is_continuous_across_the_switch() {
        // λ where p_b crosses 1e-12 lies between these two points.
        let below = ScenarioParams::symmetric(0.0403, 25.0);
        let above = ScenarioParams::symmetric(0.0400, 25.0);
        let pb = |p: &ScenarioParams| {
            blocking_probability(p.lambda(), p.tx_range, p.detect_range).unwrap()
        };
        assert!(pb(&below) < SCALED_FORM_BELOW && pb(&above) > SCALED_FORM_BELOW);
        let a = ips_vmimo(&above).unwrap();
        let b = ips_vmimo(&below).unwrap();
        assert!(b > a && (b - a) / a < 0.01);
        // far past underflow the value stays finite and below R/τ
        let huge = ScenarioParams::symmetric(5.0, 25.0);
        let v = ips_vmimo(&huge).unwrap();
        assert!(v.is_finite() && v < 24000.0 && v > 23900.0);
    }

    #[test]
    fn missing_reverse_traffic_is_degenerate() {
        let mut p = defaults();
        p.lambda_r = 0.0;
        assert!(matches!(ips_vmimo(&p), Err(Error::DegenerateModel(_))));
        assert!(matches!(ips_conventional(&p), Err(Error::DegenerateModel(_))));
        assert!(matches!(propagate_expectations(&p), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn asymptotics_at_defaults() {
        let a = asymptotics_report(&ScenarioParams::symmetric(0.005, 25.0)).unwrap();
        assert_relative_eq!(a.high_density_limit, 24000.0);
        assert_relative_eq!(a.gain_limit, 3.0);
        assert_relative_eq!(a.high_density_approx, 9600.0, max_relative = 1e-12);
        assert_eq!(a.zero_speed_limit, 0.0);
        assert_eq!(a.low_density_limit, 25.0);
        assert!(a.high_density_approx < a.high_density_limit);
        assert!(a.gain_high_density_approx < a.gain_limit);
        let ips = ips_vmimo(&ScenarioParams::symmetric(0.005, 25.0)).unwrap();
        assert!(ips < a.infinite_speed_limit);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn renewal_identity_holds(
            lr in 1e-4f64..0.05,
            lf in 0.0f64..0.05,
            v in 1.0f64..60.0,
            r in 50.0f64..400.0,
            k in 1.05f64..5.0,
            tau in 0.005f64..0.1,
        ) {
            let p = ScenarioParams {
                lambda_r: lr, lambda_f: lf, v, tx_range: r, detect_range: k * r, tau,
                thresholds: None,
            };
            let rep = analytic_report(&p).unwrap();
            let t = rep.transition;
            prop_assert!((t.sigma1 + t.sigma2 - 1.0).abs() < 1e-12);
            prop_assert!((t.p_f + t.p_r + t.p_b - 1.0).abs() < 1e-12);
            let e = rep.expectations;
            prop_assert!((e.e_t_prop2 * 2.0 * v - e.e_d_prop2).abs() <= 1e-12 * e.e_d_prop2);
            let ratio = e.e_d_prop / (e.e_t_prop + e.e_t_stop);
            prop_assert!(((rep.ips_vmimo - ratio) / ratio).abs() < 1e-9);
            prop_assert!(rep.ips_vmimo < p.detect_range / tau);
            prop_assert!(rep.ips_conventional < r / tau);
        }

        #[test]
        fn blocking_decreases_in_lambda_and_range(
            l in 1e-4f64..0.09,
            step in 1.01f64..1.5,
            k in 1.05f64..4.5,
        ) {
            let r = 200.0;
            let base = blocking_probability(l, r, k * r).unwrap();
            prop_assert!(blocking_probability(l * step, r, k * r).unwrap() < base);
            // strict unless the Gaussian factor has rounded to exactly 1
            let wider = blocking_probability(l, r, (k * 1.1).min(5.0) * r).unwrap();
            let saturated = base == (-l * r).exp();
            prop_assert!(wider < base || (saturated && wider == base));
        }
    }
}
