//! Brute-force Monte-Carlo counterparts of the approximate closed forms.
//!
//! These sample the underlying Poisson geometry directly and never touch the
//! Gaussian or mean-field shortcuts, so they measure how good those
//! shortcuts are.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::model::decode_threshold;
use crate::seed::rng_from;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
}

fn check_domain(lambda: f64, r: f64, big_r: f64, n_samples: u64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("requires lambda > 0"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid("requires r > 0"));
    }
    if !(big_r > r) {
        return Err(Error::invalid("requires R > r"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("requires n_samples >= 1"));
    }
    Ok(())
}

/// Samples the blocking event directly.
///
/// Conditioned on nobody within `r` of the receiver, the transmitters in
/// `(r, R)` form a Poisson process; draw their count and uniform distances
/// and test the exact sum against `1/r²`.
pub fn mc_blocking_probability(
    lambda: f64,
    r: f64,
    big_r: f64,
    n_samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    check_domain(lambda, r, big_r, n_samples)?;
    let mut rng = rng_from(seed, &[0xB10C]);
    let count = Poisson::new(lambda * (big_r - r))
        .map_err(|e| Error::invalid(format!("poisson mean: {e}")))?;
    let threshold = decode_threshold(r);
    let mut blocked = 0u64;
    for _ in 0..n_samples {
        let n = count.sample(&mut rng) as u64;
        let mut sum = 0.0;
        for _ in 0..n {
            let d: f64 = rng.random_range(r..big_r);
            sum += 1.0 / (d * d);
        }
        if sum < threshold {
            blocked += 1;
        }
    }
    let n = n_samples as f64;
    let q = blocked as f64 / n;
    let no_neighbour = (-lambda * r).exp();
    Ok(McEstimate {
        estimate: no_neighbour * q,
        stderr: no_neighbour * (q * (1.0 - q) / n).sqrt(),
        samples: n_samples,
    })
}

/// How newly decoded vehicles participate within the sampled slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HopRule {
    /// Receivers are visited nearest-first and each one that decodes
    /// immediately adds its signal for the receivers beyond it.
    #[default]
    Chained,
    /// Only vehicles informed at slot start transmit, as in the slotted
    /// engine.
    SinglePass,
}

fn poisson_offsets(rng: &mut ChaCha8Rng, gaps: &Exp<f64>, limit: f64, out: &mut Vec<f64>) {
    out.clear();
    let mut x = 0.0;
    loop {
        x += gaps.sample(rng);
        if x > limit {
            break;
        }
        out.push(x);
    }
}

/// Mean one-slot head displacement in the stationary PROP_I picture.
///
/// The head sits at 0 with Poisson informed traffic behind it over `(-R, 0)`
/// and Poisson uninformed traffic ahead over `(0, R]`; the sample is the
/// position of the farthest vehicle that decodes under `rule` (0 if none).
pub fn mc_expected_max_hop(
    lambda: f64,
    r: f64,
    big_r: f64,
    n_samples: u64,
    seed: u64,
    rule: HopRule,
) -> Result<McEstimate> {
    check_domain(lambda, r, big_r, n_samples)?;
    let mut rng = rng_from(seed, &[0x4089]);
    let gaps = Exp::new(lambda).map_err(|e| Error::invalid(format!("gap rate: {e}")))?;
    let threshold = decode_threshold(r);
    let mut ahead = Vec::new();
    let mut behind = Vec::new();
    let mut transmitters = Vec::new();
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);

    for _ in 0..n_samples {
        poisson_offsets(&mut rng, &gaps, big_r, &mut ahead);
        poisson_offsets(&mut rng, &gaps, big_r, &mut behind);
        transmitters.clear();
        transmitters.push(0.0);
        transmitters.extend(behind.iter().map(|&b| -b));

        let mut reach = 0.0;
        for &u in &ahead {
            let stat: f64 = transmitters
                .iter()
                .map(|&x| u - x)
                .filter(|&d| d <= big_r)
                .map(|d| 1.0 / (d * d))
                .sum();
            let decodes = stat >= threshold;
            match rule {
                HopRule::SinglePass => {
                    if decodes {
                        reach = u;
                    }
                }
                HopRule::Chained => {
                    if !decodes {
                        break;
                    }
                    reach = u;
                    transmitters.push(u);
                }
            }
        }
        sum += reach;
        sum_sq += reach * reach;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
        samples: n_samples,
    })
}
