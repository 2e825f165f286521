//! Slotted propagation engine.
//!
//! Each slot every informed vehicle broadcasts, receivers apply the scheme's
//! decode rule against the informed set at slot start, the forward lane
//! advances by `2vτ`, and the head is re-derived. Slots are labelled with the
//! renewal state they belong to and grouped into PROPAGATE/STOP cycles.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{decode_threshold, ScenarioParams};
use crate::seed::derive_seed;
use crate::traffic::{LaneKind, Margins, RoadState};

/// Broadcast scheme under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// Receivers combine every detectable informed transmitter.
    Vmimo,
    /// A receiver decodes only from a single informed vehicle within `r`.
    Flooding,
    /// The head alone unicasts one hop of at most `r`, each hop costing
    /// `handshake_slots` slots.
    ReverseAided { handshake_slots: u32 },
}

impl SchemeKind {
    pub const REVERSE_AIDED_DEFAULT: SchemeKind = SchemeKind::ReverseAided { handshake_slots: 1 };

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Vmimo => "vmimo",
            SchemeKind::Flooding => "flooding",
            SchemeKind::ReverseAided { .. } => "reverse_aided",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SchemeKind::ReverseAided { handshake_slots: 0 } => {
                Err(Error::invalid("requires handshake_slots >= 1"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vmimo" => Ok(SchemeKind::Vmimo),
            "flooding" => Ok(SchemeKind::Flooding),
            "reverse_aided" => Ok(SchemeKind::REVERSE_AIDED_DEFAULT),
            other => Err(Error::invalid(format!(
                "unknown scheme {other:?} (expected vmimo, flooding or reverse_aided)"
            ))),
        }
    }
}

/// Renewal state of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateLabel {
    /// The beacon was decoded beyond the previous head.
    PropI,
    /// Blocked, but held by a forward-lane head moving at `2v`.
    PropII,
    /// Blocked on a static reverse-lane head.
    Stop,
}

impl StateLabel {
    pub fn name(self) -> &'static str {
        match self {
            StateLabel::PropI => "PROP_I",
            StateLabel::PropII => "PROP_II",
            StateLabel::Stop => "STOP",
        }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub slot_index: u64,
    pub head_before: f64,
    pub head_after: f64,
    pub state_label: StateLabel,
    pub newly_informed: u32,
}

impl SlotRecord {
    pub const CSV_HEADER: &'static str = "slot,head_before,head_after,state,newly_informed";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.slot_index, self.head_before, self.head_after, self.state_label, self.newly_informed
        )
    }
}

/// One PROPAGATE run followed by one STOP run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub propagate_duration: f64,
    pub stop_duration: f64,
    pub distance: f64,
}

/// Applies the scheme's decode rule for one slot, advances traffic and
/// regenerates the window. The state must have its horizon ensured, which
/// every state built by [`RoadState::seeded`] and returned from here has.
pub fn step_slot(state: &mut RoadState, params: &ScenarioParams, scheme: SchemeKind) -> SlotRecord {
    let head_before = state.head_position;
    let decoded = match scheme {
        SchemeKind::Vmimo => combine_decodes(state, params),
        SchemeKind::Flooding => single_link_decodes(state, params),
        SchemeKind::ReverseAided { handshake_slots } => unicast_decode(state, params, handshake_slots),
    };
    let mut decoded_ahead = false;
    for &(lane, i) in &decoded {
        let l = state.lane_mut(lane);
        decoded_ahead |= l.position(i) > head_before;
        l.inform(i);
    }
    state.advance_slot(params);
    state.ensure_horizon();

    let state_label = if decoded_ahead {
        StateLabel::PropI
    } else if state.head_lane == LaneKind::Forward {
        StateLabel::PropII
    } else {
        StateLabel::Stop
    };
    SlotRecord {
        slot_index: state.slot_index - 1,
        head_before,
        head_after: state.head_position,
        state_label,
        newly_informed: decoded.len() as u32,
    }
}

/// Informed positions on `[lo, hi]` across both lanes, sorted.
fn informed_positions(state: &RoadState, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for lane in [&state.reverse, &state.forward] {
        let end = lane.upper_bound(hi);
        out.extend(
            (lane.lower_bound(lo)..end)
                .filter(|&i| lane.is_informed(i))
                .map(|i| lane.position(i)),
        );
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Uninformed receivers whose transmitters all lie inside the window.
fn candidates(state: &RoadState, params: &ScenarioParams) -> Vec<(LaneKind, usize, f64)> {
    let lo = state.trail_edge() + params.detect_range;
    let hi = state.head_position + params.detect_range;
    let mut out = Vec::new();
    for lane in [&state.reverse, &state.forward] {
        let end = lane.upper_bound(hi);
        out.extend(
            (lane.lower_bound(lo)..end)
                .filter(|&i| !lane.is_informed(i))
                .map(|i| (lane.kind(), i, lane.position(i))),
        );
    }
    out
}

fn combine_decodes(state: &RoadState, params: &ScenarioParams) -> Vec<(LaneKind, usize)> {
    let big_r = params.detect_range;
    let threshold = decode_threshold(params.tx_range);
    let tx = informed_positions(state, state.trail_edge(), state.head_position);
    let mut decoded = Vec::new();
    for (lane, i, x) in candidates(state, params) {
        let start = tx.partition_point(|&t| t < x - big_r);
        let end = tx.partition_point(|&t| t <= x + big_r);
        let mut stat = 0.0;
        for &t in &tx[start..end] {
            let d = x - t;
            if d == 0.0 {
                stat = f64::INFINITY;
                break;
            }
            stat += 1.0 / (d * d);
        }
        if stat >= threshold {
            decoded.push((lane, i));
        }
    }
    decoded
}

fn single_link_decodes(state: &RoadState, params: &ScenarioParams) -> Vec<(LaneKind, usize)> {
    let r = params.tx_range;
    let tx = informed_positions(state, state.trail_edge(), state.head_position);
    candidates(state, params)
        .into_iter()
        .filter(|&(_, _, x)| {
            let k = tx.partition_point(|&t| t < x - r);
            k < tx.len() && tx[k] <= x + r
        })
        .map(|(lane, i, _)| (lane, i))
        .collect()
}

fn unicast_decode(
    state: &mut RoadState,
    params: &ScenarioParams,
    handshake_slots: u32,
) -> Vec<(LaneKind, usize)> {
    let head = state.head_position;
    let reach = head + params.tx_range;
    let mut target: Option<(LaneKind, usize, f64)> = None;
    for lane in [&state.reverse, &state.forward] {
        let end = lane.upper_bound(reach);
        for i in (lane.upper_bound(head)..end).rev() {
            if !lane.is_informed(i) {
                let x = lane.position(i);
                if target.is_none_or(|(_, _, best)| x > best) {
                    target = Some((lane.kind(), i, x));
                }
                break;
            }
        }
    }
    match target {
        Some((lane, i, _)) => {
            state.handshake_progress += 1;
            if state.handshake_progress >= handshake_slots {
                state.handshake_progress = 0;
                vec![(lane, i)]
            } else {
                Vec::new()
            }
        }
        None => {
            state.handshake_progress = 0;
            Vec::new()
        }
    }
}

/// Run length and warm-up policy of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub max_slots: u64,
    /// Stop once this many cycles completed after warm-up.
    pub min_cycles: u32,
    pub warmup_slots: u64,
    pub warmup_cycles: u32,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_slots: 20_000,
            min_cycles: 50,
            warmup_slots: 200,
            warmup_cycles: 5,
        }
    }
}

impl Budget {
    /// Slot at which warm-up ends even if too few cycles completed.
    pub fn warmup_cap(&self) -> u64 {
        self.max_slots / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_cap() < self.warmup_slots || self.max_slots == 0 {
            return Err(Error::UnderBudget(format!(
                "max_slots = {} cannot cover {} warm-up slots plus as many measured slots",
                self.max_slots, self.warmup_slots
            )));
        }
        Ok(())
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    /// Head displacement per second after warm-up, m/s.
    pub ips: f64,
    pub measured_slots: u64,
    pub warmup_slots: u64,
    pub cycles_measured: u32,
    pub head_at_warmup_end: f64,
    pub head_final: f64,
}

/// Groups slot labels into renewal cycles.
#[derive(Debug, Default, Clone)]
struct CycleTracker {
    open: bool,
    prop_slots: u64,
    stop_slots: u64,
    start_head: f64,
}

impl CycleTracker {
    /// Feeds one slot; returns a cycle when a STOP run just ended.
    fn push(&mut self, rec: &SlotRecord, tau: f64) -> Option<CycleRecord> {
        let stopped = rec.state_label == StateLabel::Stop;
        if !self.open {
            if !stopped {
                *self = CycleTracker {
                    open: true,
                    prop_slots: 1,
                    stop_slots: 0,
                    start_head: rec.head_before,
                };
            }
            return None;
        }
        if stopped {
            self.stop_slots += 1;
            return None;
        }
        if self.stop_slots == 0 {
            self.prop_slots += 1;
            return None;
        }
        let done = CycleRecord {
            propagate_duration: self.prop_slots as f64 * tau,
            stop_duration: self.stop_slots as f64 * tau,
            distance: rec.head_before - self.start_head,
        };
        *self = CycleTracker {
            open: true,
            prop_slots: 1,
            stop_slots: 0,
            start_head: rec.head_before,
        };
        Some(done)
    }
}

/// Simulates one replication from a seeded source.
pub fn run_scenario(
    params: &ScenarioParams,
    scheme: SchemeKind,
    budget: &Budget,
    seed: u64,
) -> Result<(Replication, Vec<CycleRecord>)> {
    run_scenario_traced(params, scheme, budget, seed, |_| {})
}

/// [`run_scenario`] with a per-slot observer.
pub fn run_scenario_traced<F: FnMut(&SlotRecord)>(
    params: &ScenarioParams,
    scheme: SchemeKind,
    budget: &Budget,
    seed: u64,
    mut observe: F,
) -> Result<(Replication, Vec<CycleRecord>)> {
    params.validate_for_simulation()?;
    scheme.validate()?;
    budget.validate()?;
    let mut state = RoadState::seeded(params, Margins::for_params(params), seed)?;
    let mut tracker = CycleTracker::default();
    let mut completed = 0u32;
    let mut warm: Option<(u64, f64)> = None;
    let mut measured_cycles = Vec::new();

    while state.slot_index < budget.max_slots {
        let rec = step_slot(&mut state, params, scheme);
        observe(&rec);
        if let Some(cycle) = tracker.push(&rec, params.tau) {
            completed += 1;
            if warm.is_some() {
                measured_cycles.push(cycle);
            }
        }
        let slots = state.slot_index;
        match warm {
            None => {
                let enough = slots >= budget.warmup_slots && completed >= budget.warmup_cycles;
                if enough || slots >= budget.warmup_cap() {
                    warm = Some((slots, state.head_position));
                }
            }
            Some(_) => {
                if measured_cycles.len() as u32 >= budget.min_cycles && budget.min_cycles > 0 {
                    break;
                }
            }
        }
    }

    let (warm_slot, warm_head) = warm.expect("warm-up ends by the cap");
    let measured = state.slot_index - warm_slot;
    let ips = if measured == 0 {
        0.0
    } else {
        (state.head_position - warm_head) / (measured as f64 * params.tau)
    };
    Ok((
        Replication {
            ips,
            measured_slots: measured,
            warmup_slots: warm_slot,
            cycles_measured: measured_cycles.len() as u32,
            head_at_warmup_end: warm_head,
            head_final: state.head_position,
        },
        measured_cycles,
    ))
}

/// Seed of replication `rep` under `base_seed`. Independent of the scheme, so
/// schemes compared at one point drive over identical traffic.
pub fn replication_seed(base_seed: u64, rep: u64) -> u64 {
    derive_seed(base_seed, &[rep])
}

/// Runs `replications` independent replications, in parallel on `workers`
/// threads (0 = all cores). Results are ordered by replication index.
pub fn run_replications(
    params: &ScenarioParams,
    scheme: SchemeKind,
    budget: &Budget,
    replications: u32,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<Replication>> {
    let run = || {
        (0..replications as u64)
            .into_par_iter()
            .map(|rep| {
                run_scenario(params, scheme, budget, replication_seed(base_seed, rep)).map(|(r, _)| r)
            })
            .collect::<Result<Vec<_>>>()
    };
    with_workers(workers, run)
}

pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Mean speed with a normal-approximation 95% interval across replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpsEstimate {
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub replications: u32,
    pub slots_per_rep: f64,
    pub warmup_slots: f64,
}

impl IpsEstimate {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci95_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95_halfwidth
    }
}

const Z95: f64 = 1.959_963_984_540_054;

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Aggregates replications. The result does not depend on input order.
pub fn estimate_ips(replications: &[Replication]) -> Result<IpsEstimate> {
    if replications.len() < 2 {
        return Err(Error::invalid("requires at least 2 replications"));
    }
    let n = replications.len() as f64;
    let mut ips: Vec<f64> = replications.iter().map(|r| r.ips).collect();
    let mean = sorted_sum(&mut ips) / n;
    let mut dev: Vec<f64> = ips.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = sorted_sum(&mut dev) / (n - 1.0);
    let mut slots: Vec<f64> = replications.iter().map(|r| r.measured_slots as f64).collect();
    let mut warm: Vec<f64> = replications.iter().map(|r| r.warmup_slots as f64).collect();
    Ok(IpsEstimate {
        mean,
        ci95_halfwidth: Z95 * (var / n).sqrt(),
        replications: replications.len() as u32,
        slots_per_rep: sorted_sum(&mut slots) / n,
        warmup_slots: sorted_sum(&mut warm) / n,
    })
}

/// Convenience wrapper over plain per-replication speeds.
pub fn estimate_from_speeds(speeds: &[f64]) -> Result<IpsEstimate> {
    let reps: Vec<Replication> = speeds
        .iter()
        .map(|&ips| Replication {
            ips,
            measured_slots: 0,
            warmup_slots: 0,
            cycles_measured: 0,
            head_at_warmup_end: 0.0,
            head_final: 0.0,
        })
        .collect();
    estimate_ips(&reps)
}

/// A vehicle informed under flooding but not under combining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceViolation {
    pub slot_index: u64,
    pub lane: LaneKind,
    pub position: f64,
    pub vmimo_head: f64,
    pub flooding_head: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub slots: u64,
    pub violations: Vec<DominanceViolation>,
    /// `head_vmimo - head_flooding` at every slot boundary.
    pub head_gap: Vec<f64>,
}

/// Runs combining and flooding over the same traffic and checks, at every
/// slot boundary, that flooding's informed set is contained in combining's.
///
/// The comparison covers the region where both runs evaluate receivers
/// exactly: everything from the start of the combining run's receiver window
/// onwards.
pub fn coupled_dominance_run(params: &ScenarioParams, budget: &Budget, seed: u64) -> Result<DominanceReport> {
    params.validate_for_simulation()?;
    budget.validate()?;
    let margins = Margins::for_params(params);
    let mut vm = RoadState::seeded(params, margins, seed)?;
    let mut fl = RoadState::seeded(params, margins, seed)?;
    let mut violations = Vec::new();
    let mut head_gap = Vec::with_capacity(budget.max_slots as usize);

    for _ in 0..budget.max_slots {
        step_slot(&mut vm, params, SchemeKind::Vmimo);
        step_slot(&mut fl, params, SchemeKind::Flooding);
        head_gap.push(vm.head_position - fl.head_position);
        let from = vm.trail_edge() + params.detect_range;
        for kind in [LaneKind::Reverse, LaneKind::Forward] {
            let (a, b) = (fl.lane(kind), vm.lane(kind));
            for i in a.lower_bound(from)..a.len() {
                if !a.is_informed(i) {
                    continue;
                }
                let covered = b.index_of_key(a.vehicle_key(i)).is_some_and(|j| b.is_informed(j));
                if !covered {
                    violations.push(DominanceViolation {
                        slot_index: vm.slot_index,
                        lane: kind,
                        position: a.position(i),
                        vmimo_head: vm.head_position,
                        flooding_head: fl.head_position,
                    });
                }
            }
        }
    }
    Ok(DominanceReport {
        slots: budget.max_slots,
        violations,
        head_gap,
    })
}
