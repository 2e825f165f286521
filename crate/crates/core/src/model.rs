//! Scenario parameters and the free-space SNR arithmetic.
//!
//! All signal computations work on the normalized statistic `Σ 1/d²` (units
//! 1/m²). The physical SNR is that statistic scaled by `αP_t/N_0`, so once the
//! decode and detect thresholds are converted into the ranges `r` and `R` the
//! constant drops out: a receiver decodes iff its statistic reaches `1/r²`, and
//! a single transmitter is detectable iff it is within `R`.

use std::fmt;

use crate::error::{Error, Result};

/// Default transmission range (m).
pub const DEFAULT_TX_RANGE: f64 = 200.0;
/// Default detection range (m).
pub const DEFAULT_DETECT_RANGE: f64 = 600.0;
/// Default slot duration (s).
pub const DEFAULT_TAU: f64 = 0.025;
/// Default vehicle speed (m/s).
pub const DEFAULT_SPEED: f64 = 25.0;
/// Default per-lane density (vehicles/m).
pub const DEFAULT_LANE_DENSITY: f64 = 0.005;

/// Raw link-budget description from which the two ranges are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawThresholds {
    /// `αP_t/N_0`, in m²-scaled SNR units.
    pub alpha_pt_over_n0: f64,
    pub gamma_dec: f64,
    pub gamma_det: f64,
}

/// Every model parameter of one run. Units are SI throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    /// Density of the reverse (westbound) lane, vehicles/m.
    pub lambda_r: f64,
    /// Density of the forward (eastbound) lane, vehicles/m.
    pub lambda_f: f64,
    /// Ground speed of every vehicle, m/s.
    pub v: f64,
    /// Transmission range `r`, m.
    pub tx_range: f64,
    /// Detection range `R`, m.
    pub detect_range: f64,
    /// Slot duration, s.
    pub tau: f64,
    /// Present when the ranges were derived from thresholds.
    pub thresholds: Option<RawThresholds>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            lambda_r: DEFAULT_LANE_DENSITY,
            lambda_f: DEFAULT_LANE_DENSITY,
            v: DEFAULT_SPEED,
            tx_range: DEFAULT_TX_RANGE,
            detect_range: DEFAULT_DETECT_RANGE,
            tau: DEFAULT_TAU,
            thresholds: None,
        }
    }
}

impl ScenarioParams {
    pub fn symmetric(lane_density: f64, v: f64) -> Self {
        ScenarioParams {
            lambda_r: lane_density,
            lambda_f: lane_density,
            v,
            ..Default::default()
        }
    }

    /// Builds parameters whose ranges come from a link budget.
    pub fn from_thresholds(
        lambda_r: f64,
        lambda_f: f64,
        v: f64,
        tau: f64,
        thresholds: RawThresholds,
    ) -> Result<Self> {
        let (r, big_r) = ranges_from_thresholds(
            thresholds.alpha_pt_over_n0,
            thresholds.gamma_dec,
            thresholds.gamma_det,
        )?;
        let params = ScenarioParams {
            lambda_r,
            lambda_f,
            v,
            tx_range: r,
            detect_range: big_r,
            tau,
            thresholds: Some(thresholds),
        };
        params.validate()?;
        Ok(params)
    }

    /// Total density `λ = λ_r + λ_f`.
    pub fn lambda(&self) -> f64 {
        self.lambda_r + self.lambda_f
    }

    /// Relative speed of the forward lane in the reverse-lane frame.
    pub fn relative_speed(&self) -> f64 {
        2.0 * self.v
    }

    /// Checks every invariant required by the closed-form model.
    pub fn validate(&self) -> Result<()> {
        self.validate_geometry()?;
        if !(self.v > 0.0) {
            return Err(Error::invalid("requires v > 0"));
        }
        if self.lambda() <= 0.0 {
            return Err(Error::invalid("requires lambda_r + lambda_f > 0"));
        }
        Ok(())
    }

    /// Invariants needed to simulate. Zero speed and empty roads are legal
    /// simulation inputs even though the closed form is undefined there.
    pub fn validate_for_simulation(&self) -> Result<()> {
        self.validate_geometry()?;
        if !(self.v >= 0.0) || !self.v.is_finite() {
            return Err(Error::invalid("requires v >= 0"));
        }
        Ok(())
    }

    fn validate_geometry(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0) || !self.lambda_r.is_finite() {
            return Err(Error::invalid("requires lambda_r >= 0"));
        }
        if !(self.lambda_f >= 0.0) || !self.lambda_f.is_finite() {
            return Err(Error::invalid("requires lambda_f >= 0"));
        }
        if !(self.tx_range > 0.0) || !self.tx_range.is_finite() {
            return Err(Error::invalid("requires r > 0"));
        }
        if !(self.detect_range > self.tx_range) || !self.detect_range.is_finite() {
            return Err(Error::invalid("requires R > r"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("requires tau > 0"));
        }
        if let Some(t) = self.thresholds {
            if t.gamma_det > t.gamma_dec {
                return Err(Error::invalid("requires gamma_det <= gamma_dec"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ScenarioParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lambda_r={} lambda_f={} v={} r={} R={} tau={}",
            self.lambda_r, self.lambda_f, self.v, self.tx_range, self.detect_range, self.tau
        )
    }
}

/// Normalized MRC-combined SNR, `Σ 1/d_i²` in 1/m².
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SnrStatistic(pub f64);

impl SnrStatistic {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::ops::Add for SnrStatistic {
    type Output = SnrStatistic;

    fn add(self, rhs: SnrStatistic) -> SnrStatistic {
        SnrStatistic(self.0 + rhs.0)
    }
}

/// Combined statistic of a set of transmitters at the given distances.
pub fn combined_snr_statistic(distances: &[f64]) -> Result<SnrStatistic> {
    let mut sum = 0.0;
    for &d in distances {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::invalid(format!(
                "requires every distance > 0 (got {d})"
            )));
        }
        sum += 1.0 / (d * d);
    }
    Ok(SnrStatistic(sum))
}

/// Converts the decode and detect thresholds into `(r, R)`.
pub fn ranges_from_thresholds(
    alpha_pt_over_n0: f64,
    gamma_dec: f64,
    gamma_det: f64,
) -> Result<(f64, f64)> {
    if !(alpha_pt_over_n0 > 0.0) || !(gamma_dec > 0.0) || !(gamma_det > 0.0) {
        return Err(Error::invalid(
            "requires alpha_pt_over_n0, gamma_dec, gamma_det > 0",
        ));
    }
    if gamma_det > gamma_dec {
        return Err(Error::invalid("requires gamma_det <= gamma_dec"));
    }
    Ok((
        (alpha_pt_over_n0 / gamma_dec).sqrt(),
        (alpha_pt_over_n0 / gamma_det).sqrt(),
    ))
}

/// Inverse of [`ranges_from_thresholds`] for a given `αP_t/N_0`.
pub fn thresholds_from_ranges(alpha_pt_over_n0: f64, r: f64, big_r: f64) -> (f64, f64) {
    (alpha_pt_over_n0 / (r * r), alpha_pt_over_n0 / (big_r * big_r))
}

/// Decode threshold on the normalized statistic.
#[inline]
pub fn decode_threshold(r: f64) -> f64 {
    1.0 / (r * r)
}

/// `true` iff the combined statistic reaches `1/r²`. The boundary decodes.
#[inline]
pub fn decode_test(s: SnrStatistic, r: f64) -> bool {
    s.0 >= decode_threshold(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn empty_sum_is_zero() {
        assert_eq!(combined_snr_statistic(&[]).unwrap().value(), 0.0);
    }

    #[test]
    fn single_and_triple_transmitters() {
        assert_relative_eq!(
            combined_snr_statistic(&[200.0]).unwrap().value(),
            2.5e-5,
            max_relative = 1e-15
        );
        let hand = 1.0 / 4e4 + 1.0 / 1.6e5 + 1.0 / 3.6e5;
        let s = combined_snr_statistic(&[200.0, 400.0, 600.0]).unwrap().value();
        assert_relative_eq!(s, hand, max_relative = 1e-15);
        assert!((s - 3.4028e-5).abs() < 1e-9);
    }

    #[test]
    fn non_positive_distance_is_rejected() {
        assert!(matches!(
            combined_snr_statistic(&[100.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(combined_snr_statistic(&[-3.0]).is_err());
    }

    #[test]
    fn threshold_to_range_examples() {
        assert_eq!(ranges_from_thresholds(4e4, 1.0, 1.0).unwrap(), (200.0, 200.0));
        let (r, big_r) = ranges_from_thresholds(4e4, 1.0, 1.0 / 9.0).unwrap();
        assert_relative_eq!(r, 200.0);
        assert_relative_eq!(big_r, 600.0, max_relative = 1e-14);
        assert_eq!(ranges_from_thresholds(1.0, 1.0, 0.25).unwrap(), (1.0, 2.0));
        assert!(ranges_from_thresholds(1.0, 0.25, 1.0).is_err());
        assert!(ranges_from_thresholds(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn decode_boundary_and_combining() {
        assert!(decode_test(SnrStatistic(2.5e-5), 200.0));
        assert!(!decode_test(SnrStatistic(2.4e-5), 200.0));
        let pair = combined_snr_statistic(&[250.0, 250.0]).unwrap();
        assert_relative_eq!(pair.value(), 3.2e-5, max_relative = 1e-15);
        assert!(decode_test(pair, 200.0));
        assert!(!decode_test(combined_snr_statistic(&[250.0]).unwrap(), 200.0));
    }

    #[test]
    fn params_from_thresholds_match_defaults() {
        let t = RawThresholds {
            alpha_pt_over_n0: 4e4,
            gamma_dec: 1.0,
            gamma_det: 1.0 / 9.0,
        };
        let p = ScenarioParams::from_thresholds(0.005, 0.005, 25.0, 0.025, t).unwrap();
        assert_relative_eq!(p.tx_range, 200.0);
        assert_relative_eq!(p.detect_range, 600.0, max_relative = 1e-14);
        // equal thresholds give R == r, which the model rejects
        let eq = RawThresholds {
            gamma_det: 1.0,
            ..t
        };
        let err = ScenarioParams::from_thresholds(0.005, 0.005, 25.0, 0.025, eq).unwrap_err();
        assert_eq!(err, Error::InvalidInput("requires R > r".into()));
    }

    #[test]
    fn validation_names_the_invariant() {
        let mut p = ScenarioParams::default();
        assert!(p.validate().is_ok());
        p.detect_range = 150.0;
        assert_eq!(p.validate().unwrap_err().to_string(), "invalid input: requires R > r");
        let mut p = ScenarioParams::default();
        p.v = 0.0;
        assert!(p.validate().unwrap_err().to_string().contains("requires v > 0"));
        assert!(p.validate_for_simulation().is_ok());
        let mut p = ScenarioParams::default();
        p.lambda_r = 0.0;
        p.lambda_f = 0.0;
        assert!(p.validate().is_err());
        assert!(p.validate_for_simulation().is_ok());
        p.tau = 0.0;
        assert!(p.validate_for_simulation().is_err());
    }

    proptest! {
        #[test]
        fn statistic_is_additive(
            a in prop::collection::vec(1.0f64..2000.0, 0..20),
            b in prop::collection::vec(1.0f64..2000.0, 0..20),
        ) {
            let mut all = a.clone();
            all.extend_from_slice(&b);
            let joint = combined_snr_statistic(&all).unwrap().value();
            let split = (combined_snr_statistic(&a).unwrap() + combined_snr_statistic(&b).unwrap()).value();
            prop_assert!((joint - split).abs() <= 1e-12 * joint.max(1e-300));
        }

        #[test]
        fn adding_a_transmitter_never_breaks_decoding(
            base in prop::collection::vec(1.0f64..1000.0, 0..10),
            extra in 1.0f64..5000.0,
            r in 10.0f64..500.0,
        ) {
            let before = decode_test(combined_snr_statistic(&base).unwrap(), r);
            let mut more = base.clone();
            more.push(extra);
            let after = decode_test(combined_snr_statistic(&more).unwrap(), r);
            prop_assert!(!before || after);
        }

        #[test]
        fn single_link_decodes_iff_within_range(d in 1.0f64..1000.0, r in 1.0f64..1000.0) {
            let s = combined_snr_statistic(&[d]).unwrap();
            prop_assert_eq!(decode_test(s, r), d <= r);
        }

        #[test]
        fn threshold_round_trip(k in 1e-3f64..1e9, g_dec in 1e-3f64..1e3, ratio in 1e-3f64..1.0) {
            let g_det = g_dec * ratio;
            let (r, big_r) = ranges_from_thresholds(k, g_dec, g_det).unwrap();
            prop_assert!(r <= big_r);
            let (d2, t2) = thresholds_from_ranges(k, r, big_r);
            prop_assert!(((d2 - g_dec) / g_dec).abs() < 1e-12);
            prop_assert!(((t2 - g_det) / g_det).abs() < 1e-12);
        }
    }
}
