//! The property suite behind `vmimo-ips validate`.
//!
//! Every check is deterministic for a given seed. Several of them encode
//! properties that the closed form or the slotted model does not actually
//! satisfy; they are reported as failures with the measured numbers rather
//! than being relaxed.

use std::fmt;

use rand::Rng;

use crate::analytic::{
    analytic_report, asymptotics_report, blocking_probability, expected_max_hop, ips_conventional,
    ips_vmimo, mc_blocking_probability, mc_expected_max_hop, HopRule,
};
use crate::engine::{
    coupled_dominance_run, run_scenario_traced, step_slot, Budget, SchemeKind, StateLabel,
};
use crate::experiments::{run_sweep, sweep_csv, SweepParam, SweepSpec};
use crate::model::{
    combined_snr_statistic, decode_test, ranges_from_thresholds, thresholds_from_ranges,
    ScenarioParams,
};
use crate::seed::rng_from;
use crate::traffic::{LaneKind, Margins, RoadState};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}::{} {}", self.module, self.name, self.detail)
    }
}

/// Per-lane densities of the analytic-vs-simulation grid.
pub const VALIDATION_LANE_DENSITIES: [f64; 4] = [0.002, 0.003, 0.005, 0.01];

pub struct Suite {
    pub seed: u64,
    pub workers: usize,
    pub replications: u32,
    pub budget: Budget,
}

impl Default for Suite {
    fn default() -> Self {
        Suite {
            seed: 1,
            workers: 0,
            replications: 30,
            budget: Budget::default(),
        }
    }
}

fn outcome(module: &'static str, name: &'static str, failures: Vec<String>, ok_detail: String) -> CheckOutcome {
    let passed = failures.is_empty();
    let detail = if passed {
        ok_detail
    } else {
        let shown: Vec<&str> = failures.iter().take(4).map(String::as_str).collect();
        format!("{} failure(s): {}", failures.len(), shown.join("; "))
    };
    CheckOutcome { module, name, passed, detail }
}

fn random_params(rng: &mut impl Rng) -> ScenarioParams {
    let r = rng.random_range(50.0..400.0);
    ScenarioParams {
        lambda_r: rng.random_range(1e-4..0.05),
        lambda_f: rng.random_range(0.0..0.05),
        v: rng.random_range(1.0..60.0),
        tx_range: r,
        detect_range: r * rng.random_range(1.05..5.0),
        tau: rng.random_range(0.005..0.1),
        thresholds: None,
    }
}

impl Suite {
    pub fn run(&self) -> Vec<CheckOutcome> {
        let mut out = self.core_model();
        out.extend(self.analytic());
        out.extend(self.engine());
        out.extend(self.experiments());
        out
    }

    pub fn core_model(&self) -> Vec<CheckOutcome> {
        let mut rng = rng_from(self.seed, &[0xC0DE]);
        let (mut additive, mut monotone, mut single, mut round) = (vec![], vec![], vec![], vec![]);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..rng.random_range(0..6)).map(|_| rng.random_range(1.0..800.0)).collect();
            let b: Vec<f64> = (0..rng.random_range(0..6)).map(|_| rng.random_range(1.0..800.0)).collect();
            let ab: Vec<f64> = a.iter().chain(&b).copied().collect();
            let (sa, sb, sab) = (
                combined_snr_statistic(&a).unwrap(),
                combined_snr_statistic(&b).unwrap(),
                combined_snr_statistic(&ab).unwrap(),
            );
            if ((sa + sb).value() - sab.value()).abs() > 1e-12 * sab.value().max(1e-300) {
                additive.push(format!("{a:?} + {b:?}"));
            }
            let r = rng.random_range(10.0..400.0);
            if decode_test(sa, r) && !decode_test(sab, r) {
                monotone.push(format!("{a:?} r={r}"));
            }
            let d = rng.random_range(1.0..800.0);
            if decode_test(combined_snr_statistic(&[d]).unwrap(), r) != (d <= r) {
                single.push(format!("d={d} r={r}"));
            }
            let k = rng.random_range(1.0..1e6);
            let dec = rng.random_range(0.1..10.0);
            let det = dec * rng.random_range(0.01..1.0);
            let (r1, r2) = ranges_from_thresholds(k, dec, det).unwrap();
            let (dec2, det2) = thresholds_from_ranges(k, r1, r2);
            if ((dec2 - dec) / dec).abs() > 1e-12 || ((det2 - det) / det).abs() > 1e-12 {
                round.push(format!("({k}, {dec}, {det})"));
            }
        }
        vec![
            outcome("core-model", "snr_additivity", additive, "1000 random pairs".into()),
            outcome("core-model", "decode_monotonicity", monotone, "1000 random sets".into()),
            outcome("core-model", "single_link_consistency", single, "1000 random links".into()),
            outcome("core-model", "threshold_round_trip", round, "1000 random budgets".into()),
        ]
    }

    pub fn analytic(&self) -> Vec<CheckOutcome> {
        let mut rng = rng_from(self.seed, &[0xA7A1]);
        let (mut sums, mut identity, mut ceilings) = (vec![], vec![], vec![]);
        for _ in 0..1000 {
            let p = random_params(&mut rng);
            let rep = analytic_report(&p).expect("valid random point");
            let t = rep.transition;
            if (t.sigma1 + t.sigma2 - 1.0).abs() > 1e-12 || (t.p_f + t.p_r + t.p_b - 1.0).abs() > 1e-12 {
                sums.push(format!("{p}"));
            }
            let e = rep.expectations;
            let ratio = e.e_d_prop / (e.e_t_prop + e.e_t_stop);
            if ((rep.ips_vmimo - ratio) / ratio).abs() > 1e-9 {
                identity.push(format!("{p}: {} vs {ratio}", rep.ips_vmimo));
            }
            if !(rep.ips_vmimo < p.detect_range / p.tau) || !(rep.ips_conventional < p.tx_range / p.tau) {
                ceilings.push(format!("{p}"));
            }
        }

        let mut blocking = vec![];
        let (r, lambdas) = (200.0, crate::experiments::grid(1e-4, 0.1, 40, true).unwrap());
        let ranges = crate::experiments::grid(1.05 * r, 5.0 * r, 40, false).unwrap();
        for &big_r in &ranges {
            for w in lambdas.windows(2) {
                let (a, b) = (
                    blocking_probability(w[0], r, big_r).unwrap(),
                    blocking_probability(w[1], r, big_r).unwrap(),
                );
                if !(b < a) {
                    blocking.push(format!("lambda {} -> {} at R={big_r}", w[0], w[1]));
                }
            }
        }
        for &l in &lambdas {
            for w in ranges.windows(2) {
                let (a, b) = (
                    blocking_probability(l, r, w[0]).unwrap(),
                    blocking_probability(l, r, w[1]).unwrap(),
                );
                let saturated = a == (-l * r).exp() && b == a;
                if !(b < a) && !saturated {
                    blocking.push(format!("R {} -> {} at lambda={l}", w[0], w[1]));
                }
            }
        }

        let mut gain = vec![];
        for l in crate::experiments::grid(1e-4, 0.05, 30, true).unwrap() {
            let p = ScenarioParams::symmetric(l / 2.0, 25.0);
            let (vm, fl) = (ips_vmimo(&p).unwrap(), ips_conventional(&p).unwrap());
            if vm < fl {
                gain.push(format!("lambda={l:.3e}: {vm:.1} < {fl:.1}"));
            }
        }

        let mut mobility = vec![];
        for lane in [0.001, 0.003, 0.01] {
            let speeds = [5.0, 10.0, 20.0, 40.0, 80.0];
            let ips: Vec<f64> = speeds
                .iter()
                .map(|&v| ips_vmimo(&ScenarioParams::symmetric(lane, v)).unwrap())
                .collect();
            let limit = asymptotics_report(&ScenarioParams::symmetric(lane, 25.0))
                .unwrap()
                .infinite_speed_limit;
            for (k, w) in ips.windows(2).enumerate() {
                if w[1] < w[0] {
                    mobility.push(format!("lane {lane}: v {} -> {}", speeds[k], speeds[k + 1]));
                }
            }
            if ips.iter().any(|&x| x > limit) {
                mobility.push(format!("lane {lane}: exceeds v->inf limit {limit:.1}"));
            }
        }

        let (r2, slope) = cubic_fit_r2();
        let cubic = if r2 >= 0.95 {
            vec![]
        } else {
            vec![format!("R^2 = {r2:.3} (slope {slope:.3e})")]
        };

        let mut oracle_pb = vec![];
        for l in [0.005, 0.01, 0.02] {
            let closed = blocking_probability(l, 200.0, 600.0).unwrap();
            let mc = mc_blocking_probability(l, 200.0, 600.0, 200_000, self.seed).unwrap();
            if ((mc.estimate - closed) / closed).abs() > 0.15 {
                oracle_pb.push(format!("lambda={l}: mc {:.4e} vs {closed:.4e}", mc.estimate));
            }
        }
        let mut oracle_hop = vec![];
        for l in [0.005, 0.01, 0.02] {
            let closed = expected_max_hop(l, 200.0, 600.0).unwrap();
            let mc = mc_expected_max_hop(l, 200.0, 600.0, 20_000, self.seed, HopRule::Chained).unwrap();
            let rel = (mc.estimate - closed) / closed;
            if rel.abs() > 0.20 {
                oracle_hop.push(format!("lambda={l}: mc {:.1} vs {closed:.1} ({:+.0}%)", mc.estimate, rel * 100.0));
            }
        }

        vec![
            outcome("analytic", "probabilities_sum_to_one", sums, "1000 random points".into()),
            outcome("analytic", "renewal_identity", identity, "1000 random points".into()),
            outcome("analytic", "blocking_strictly_decreasing", blocking, "40x40 grid".into()),
            outcome("analytic", "gain_at_least_one", gain, "30 densities in [1e-4, 0.05]".into()),
            outcome("analytic", "speed_monotone_and_bounded", mobility, "3 densities x 5 speeds".into()),
            outcome("analytic", "ceilings", ceilings, "1000 random points".into()),
            outcome("analytic", "low_density_cubic_fit", cubic, format!("R^2 = {r2:.3}")),
            outcome("analytic", "oracle_blocking_agreement", oracle_pb, "3 densities, 2e5 samples".into()),
            outcome("analytic", "oracle_hop_agreement", oracle_hop, "3 densities, 2e4 samples".into()),
        ]
    }

    pub fn engine(&self) -> Vec<CheckOutcome> {
        let (mut head, mut informed, mut hop) = (vec![], vec![], vec![]);
        for (k, lane) in [0.001, 0.003, 0.005, 0.01, 0.03].into_iter().enumerate() {
            for scheme in [SchemeKind::Vmimo, SchemeKind::Flooding, SchemeKind::REVERSE_AIDED_DEFAULT] {
                let p = ScenarioParams::symmetric(lane, 25.0);
                let seed = self.seed.wrapping_add(k as u64);
                if let Err(e) = fuzz_monotonicity(&p, scheme, 3_000, seed, &mut head, &mut informed, &mut hop) {
                    head.push(e.to_string());
                }
            }
        }

        let mut dominance = vec![];
        for lane in [0.002, 0.005, 0.01, 0.025] {
            let p = ScenarioParams::symmetric(lane, 25.0);
            let b = Budget { max_slots: 3_000, ..self.budget };
            let rep = coupled_dominance_run(&p, &b, self.seed).expect("valid point");
            if let Some(v) = rep.violations.first() {
                dominance.push(format!("lane {lane}: {} violations, first {v:?}", rep.violations.len()));
            }
        }

        let (mut automaton, mut absorbing, mut stop) = (vec![], vec![], vec![]);
        let mut measured = vec![];
        for lane in [0.005, 0.01] {
            let p = ScenarioParams::symmetric(lane, 25.0);
            let report = analytic_report(&p).unwrap();
            let mut runs = Vec::new();
            for rep in 0..4 {
                let b = Budget { max_slots: self.budget.max_slots, min_cycles: 0, ..self.budget };
                let mut labels = Vec::new();
                run_scenario_traced(&p, SchemeKind::Vmimo, &b, self.seed + rep, |r| labels.push(r.state_label))
                    .unwrap();
                for w in labels.windows(2) {
                    match (w[0], w[1]) {
                        (StateLabel::Stop, StateLabel::PropI) => {
                            automaton.push(format!("lane {lane}: STOP -> PROP_I"))
                        }
                        (StateLabel::PropII, StateLabel::Stop) => {
                            automaton.push(format!("lane {lane}: PROP_II -> STOP"))
                        }
                        _ => {}
                    }
                }
                let complete = run_lengths(&labels);
                if complete.len() > 2 {
                    runs.extend_from_slice(&complete[1..complete.len() - 1]);
                }
            }
            let prop_i = mean_of(&runs, StateLabel::PropI);
            let expected = 1.0 / report.transition.p_b;
            if ((prop_i - expected) / expected).abs() > 0.15 {
                absorbing.push(format!("lane {lane}: mean PROP_I run {prop_i:.1} slots vs 1/p_b = {expected:.1}"));
            }
            let stop_mean = mean_of(&runs, StateLabel::Stop) * p.tau;
            let bound = report.expectations.e_t_stop + p.tau;
            if stop_mean > bound {
                stop.push(format!("lane {lane}: mean STOP {stop_mean:.3} s > {bound:.3} s"));
            }
            measured.push(format!("lane {lane}: PROP_I {prop_i:.1}, STOP {stop_mean:.3} s"));
        }

        vec![
            outcome("engine", "head_monotonicity", head, "5 densities x 3 schemes x 3000 slots".into()),
            outcome("engine", "informed_set_monotonicity", informed, "5 densities x 3 schemes x 3000 slots".into()),
            outcome("engine", "hop_bound", hop, "5 densities x 3 schemes x 3000 slots".into()),
            outcome("engine", "coupled_dominance", dominance, "4 densities x 3000 slots".into()),
            outcome("engine", "renewal_automaton", automaton, "vmimo label sequences".into()),
            outcome("engine", "absorbing_time", absorbing, measured.join(", ")),
            outcome("engine", "stop_duration_bound", stop, measured.join(", ")),
        ]
    }

    pub fn experiments(&self) -> Vec<CheckOutcome> {
        let spec = SweepSpec {
            varying: SweepParam::LambdaTotalSymmetric,
            values: VALIDATION_LANE_DENSITIES.iter().map(|l| 2.0 * l).collect(),
            fixed: ScenarioParams::default(),
            schemes: vec![SchemeKind::Vmimo, SchemeKind::Flooding, SchemeKind::REVERSE_AIDED_DEFAULT],
            replications: self.replications,
            budget: self.budget,
            base_seed: self.seed,
        };
        let rows = run_sweep(&spec, self.workers).expect("valid validation sweep");
        let (mut rel, mut order, mut failed) = (vec![], vec![], vec![]);
        for row in &rows {
            if let Some(e) = &row.error {
                failed.push(format!("{} {}: {e}", row.params, row.scheme));
            }
            if let (Some(sim), Some(an)) = (row.ips_sim_mean, row.ips_analytic) {
                let err = (sim - an) / an;
                if err.abs() > 0.20 {
                    rel.push(format!(
                        "lambda={} {}: sim {sim:.1} vs analytic {an:.1} ({:+.0}%)",
                        row.params.lambda(),
                        row.scheme,
                        err * 100.0
                    ));
                }
            }
        }
        for group in rows.chunks(3) {
            let mean = |s: &str| group.iter().find(|r| r.scheme.name() == s).and_then(|r| r.ips_sim_mean);
            if let (Some(ra), Some(fl), Some(vm)) = (mean("reverse_aided"), mean("flooding"), mean("vmimo")) {
                if !(ra <= fl && fl <= vm) {
                    order.push(format!("lambda={}: {ra:.1}, {fl:.1}, {vm:.1}", group[0].params.lambda()));
                }
            }
        }

        let small = SweepSpec {
            values: vec![0.004, 0.01],
            replications: 2,
            budget: Budget { max_slots: 2_000, ..self.budget },
            ..spec.clone()
        };
        let a = sweep_csv(&run_sweep(&small, self.workers).unwrap());
        let b = sweep_csv(&run_sweep(&small, self.workers).unwrap());
        let determinism = if a == b { vec![] } else { vec!["CSV differs between runs".into()] };

        vec![
            outcome("experiments", "sweep_rows_succeed", failed, format!("{} rows", rows.len())),
            outcome("experiments", "validation_sweep_error", rel, "4 densities, within 20%".into()),
            outcome("experiments", "scheme_ordering", order, "reverse_aided <= flooding <= vmimo".into()),
            outcome("experiments", "sweep_determinism", determinism, "byte-identical CSV".into()),
        ]
    }
}

/// Coefficient of determination and slope of `ips_vmimo - v` against `λ³`
/// over `λ_r = λ_f = λ ∈ [1e-4, 1e-3]`.
pub fn cubic_fit_r2() -> (f64, f64) {
    let v = 25.0;
    let pts: Vec<(f64, f64)> = crate::experiments::grid(1e-4, 1e-3, 25, false)
        .unwrap()
        .into_iter()
        .map(|l| {
            let ips = ips_vmimo(&ScenarioParams::symmetric(l, v)).unwrap();
            (l * l * l, ips - v)
        })
        .collect();
    linear_r2(&pts)
}

/// Least-squares line through `pts`; returns `(R², slope)`.
pub fn linear_r2(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    (1.0 - ss_res / syy, slope)
}

fn run_lengths(labels: &[StateLabel]) -> Vec<(StateLabel, usize)> {
    let mut out = Vec::new();
    let mut iter = labels.iter();
    let Some(&first) = iter.next() else { return out };
    let (mut cur, mut len) = (first, 1);
    for &l in iter {
        if l == cur {
            len += 1;
        } else {
            out.push((cur, len));
            cur = l;
            len = 1;
        }
    }
    out.push((cur, len));
    out
}

fn mean_of(runs: &[(StateLabel, usize)], label: StateLabel) -> f64 {
    let picked: Vec<usize> = runs.iter().filter(|r| r.0 == label).map(|r| r.1).collect();
    if picked.is_empty() {
        return f64::NAN;
    }
    picked.iter().sum::<usize>() as f64 / picked.len() as f64
}

/// Steps one run slot by slot and checks that the head never retreats, that
/// no vehicle ever loses the beacon and that a slot never moves the head
/// further than the scheme's reach.
pub fn fuzz_monotonicity(
    params: &ScenarioParams,
    scheme: SchemeKind,
    slots: u64,
    seed: u64,
    head: &mut Vec<String>,
    informed: &mut Vec<String>,
    hop: &mut Vec<String>,
) -> crate::Result<()> {
    let mut state = RoadState::seeded(params, Margins::for_params(params), seed)?;
    let reach = match scheme {
        SchemeKind::Vmimo => params.detect_range,
        _ => params.tx_range,
    } + params.relative_speed() * params.tau;
    for _ in 0..slots {
        let before: Vec<(LaneKind, f64)> = [LaneKind::Reverse, LaneKind::Forward]
            .into_iter()
            .flat_map(|k| {
                let lane = state.lane(k);
                (0..lane.len())
                    .filter(|&i| lane.is_informed(i))
                    .map(move |i| (k, lane.vehicle_key(i)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let rec = step_slot(&mut state, params, scheme);
        if rec.head_after < rec.head_before {
            head.push(format!("{scheme} slot {}: {} -> {}", rec.slot_index, rec.head_before, rec.head_after));
        }
        if rec.head_after - rec.head_before > reach + 1e-9 {
            hop.push(format!("{scheme} slot {}: hop {}", rec.slot_index, rec.head_after - rec.head_before));
        }
        let trail = state.trail_edge();
        for (k, key) in before {
            let lane = state.lane(k);
            match lane.index_of_key(key) {
                Some(i) if lane.is_informed(i) => {}
                Some(_) => informed.push(format!("{scheme} slot {}: {k} {key} reset", rec.slot_index)),
                None if k == LaneKind::Reverse && key < trail => {}
                None => informed.push(format!("{scheme} slot {}: {k} {key} vanished", rec.slot_index)),
            }
        }
    }
    Ok(())
}
