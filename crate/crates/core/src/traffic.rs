//! Poisson traffic on the two lanes, kept in the reverse-lane frame.
//!
//! Reverse-lane (westbound) vehicles are static in this frame and
//! forward-lane (eastbound) vehicles move east at `2v`. Traffic is generated
//! lazily around the head: each lane draws its exponential gaps from its own
//! pair of streams (one growing east, one growing west), so the realization is
//! the same no matter how often or how far the window is extended. Two runs
//! with the same seed therefore see identical traffic even when their heads
//! move differently.
//!
//! Forward-lane vehicles are stored in lane-local coordinates plus a shared
//! offset, so advancing a slot is O(1) and nothing behind the head is ever
//! discarded: those vehicles drive up to a stalled head and overtake it.
//! Reverse-lane vehicles more than the trail margin behind the head are
//! pruned; nothing can bring them back into range.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::model::ScenarioParams;
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaneKind {
    Reverse,
    Forward,
}

impl LaneKind {
    pub fn name(self) -> &'static str {
        match self {
            LaneKind::Reverse => "reverse",
            LaneKind::Forward => "forward",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            LaneKind::Reverse => 1,
            LaneKind::Forward => 2,
        }
    }
}

impl fmt::Display for LaneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Plain copy of one lane at a slot boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneSnapshot {
    pub lane: LaneKind,
    pub positions: Vec<f64>,
    pub informed: Vec<bool>,
}

impl LaneSnapshot {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Draws a strictly positive exponential gap, redrawing on the (measure-zero)
/// event that the step does not move the coordinate.
fn draw_step<R: Rng + ?Sized>(rng: &mut R, gaps: &Exp<f64>, from: f64, sign: f64) -> f64 {
    loop {
        let next = from + sign * gaps.sample(rng);
        if next != from {
            return next;
        }
    }
}

/// Poisson traffic on `(x_min, x_max)` built from i.i.d. exponential gaps
/// starting at `x_min`. An empty lane when `lambda == 0`.
pub fn generate_lane<R: Rng + ?Sized>(
    lane: LaneKind,
    lambda: f64,
    x_min: f64,
    x_max: f64,
    rng: &mut R,
) -> Result<LaneSnapshot> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("requires lambda >= 0"));
    }
    if !(x_min < x_max) {
        return Err(Error::invalid("requires x_min < x_max"));
    }
    let mut positions = Vec::new();
    if lambda > 0.0 {
        let gaps = Exp::new(lambda).expect("positive rate");
        let mut x = x_min;
        loop {
            x = draw_step(rng, &gaps, x, 1.0);
            if x >= x_max {
                break;
            }
            positions.push(x);
        }
    }
    let informed = vec![false; positions.len()];
    Ok(LaneSnapshot {
        lane,
        positions,
        informed,
    })
}

/// One lane of live traffic.
#[derive(Debug, Clone)]
pub struct Lane {
    kind: LaneKind,
    gaps: Option<Exp<f64>>,
    /// Lane-local coordinates, strictly increasing.
    local: VecDeque<f64>,
    informed: VecDeque<bool>,
    /// `position = local + offset`.
    offset: f64,
    /// Local coordinates of the outermost generated points. Traffic is
    /// complete on `[back_edge, front_edge]`.
    front_edge: f64,
    back_edge: f64,
    front_rng: ChaCha8Rng,
    back_rng: ChaCha8Rng,
}

impl Lane {
    /// Empty lane anchored at `anchor`, drawing from streams derived from
    /// `seed`.
    pub fn new(kind: LaneKind, lambda: f64, anchor: f64, seed: u64) -> Self {
        Lane {
            kind,
            gaps: (lambda > 0.0).then(|| Exp::new(lambda).expect("positive rate")),
            local: VecDeque::new(),
            informed: VecDeque::new(),
            offset: 0.0,
            front_edge: anchor,
            back_edge: anchor,
            front_rng: rng_from(seed, &[kind.stream_id(), 0]),
            back_rng: rng_from(seed, &[kind.stream_id(), 1]),
        }
    }

    pub fn kind(&self) -> LaneKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    #[inline]
    pub fn position(&self, i: usize) -> f64 {
        self.local[i] + self.offset
    }

    #[inline]
    pub fn is_informed(&self, i: usize) -> bool {
        self.informed[i]
    }

    /// Lane-local coordinate, stable for the lifetime of the vehicle.
    #[inline]
    pub fn vehicle_key(&self, i: usize) -> f64 {
        self.local[i]
    }

    /// Index of the vehicle with lane-local coordinate `key`, if present.
    pub fn index_of_key(&self, key: f64) -> Option<usize> {
        let i = self.local.partition_point(|&p| p < key);
        (i < self.local.len() && self.local[i] == key).then_some(i)
    }

    /// Marks vehicle `i` informed. Flags never reset.
    pub fn inform(&mut self, i: usize) {
        self.informed[i] = true;
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// First index whose position is `>= x`.
    pub fn lower_bound(&self, x: f64) -> usize {
        let offset = self.offset;
        self.local.partition_point(|&p| p + offset < x)
    }

    /// First index whose position is `> x`.
    pub fn upper_bound(&self, x: f64) -> usize {
        let offset = self.offset;
        self.local.partition_point(|&p| p + offset <= x)
    }

    /// Inserts a single vehicle, keeping the order. Used for the source.
    fn insert(&mut self, position: f64, informed: bool) {
        let key = position - self.offset;
        let i = self.local.partition_point(|&p| p < key);
        self.local.insert(i, key);
        self.informed.insert(i, informed);
        self.front_edge = self.front_edge.max(key);
        self.back_edge = self.back_edge.min(key);
    }

    /// Generates traffic until the lane is complete up to `target`.
    fn extend_front(&mut self, target: f64) {
        let Some(gaps) = self.gaps else { return };
        while self.front_edge + self.offset < target {
            let next = draw_step(&mut self.front_rng, &gaps, self.front_edge, 1.0);
            self.local.push_back(next);
            self.informed.push_back(false);
            self.front_edge = next;
        }
    }

    /// Generates traffic until the lane is complete back to `target`.
    fn extend_back(&mut self, target: f64) {
        let Some(gaps) = self.gaps else { return };
        while self.back_edge + self.offset > target {
            let next = draw_step(&mut self.back_rng, &gaps, self.back_edge, -1.0);
            self.local.push_front(next);
            self.informed.push_front(false);
            self.back_edge = next;
        }
    }

    fn prune_before(&mut self, cutoff: f64) -> usize {
        let n = self.lower_bound(cutoff);
        self.local.drain(..n);
        self.informed.drain(..n);
        n
    }

    fn shift(&mut self, dx: f64) {
        self.offset += dx;
    }

    /// Largest informed position at or beyond `from`, if any.
    pub fn max_informed_from(&self, from: f64) -> Option<f64> {
        let lo = self.lower_bound(from);
        (lo..self.len())
            .rev()
            .find(|&i| self.informed[i])
            .map(|i| self.position(i))
    }

    pub fn snapshot(&self) -> LaneSnapshot {
        LaneSnapshot {
            lane: self.kind,
            positions: (0..self.len()).map(|i| self.position(i)).collect(),
            informed: self.informed.iter().copied().collect(),
        }
    }
}

/// Window sizes of the regenerated road, in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    /// Traffic is kept complete this far ahead of the head.
    pub horizon: f64,
    /// Traffic is kept this far behind the head; reverse-lane vehicles beyond
    /// it are pruned.
    pub trail: f64,
}

impl Margins {
    pub const DEFAULT_HORIZON_FACTOR: f64 = 10.0;
    pub const DEFAULT_TRAIL_FACTOR: f64 = 2.0;

    pub fn for_params(params: &ScenarioParams) -> Self {
        Margins {
            horizon: Self::DEFAULT_HORIZON_FACTOR * params.detect_range,
            trail: Self::DEFAULT_TRAIL_FACTOR * params.detect_range,
        }
    }

    pub fn validate(&self, params: &ScenarioParams) -> Result<()> {
        if !(self.horizon >= params.detect_range + params.relative_speed() * params.tau) {
            return Err(Error::invalid("requires horizon margin >= R + 2v*tau"));
        }
        if !(self.trail >= 2.0 * params.detect_range) {
            return Err(Error::invalid("requires trail margin >= 2R"));
        }
        Ok(())
    }
}

/// The whole road at a slot boundary.
#[derive(Debug, Clone)]
pub struct RoadState {
    pub reverse: Lane,
    pub forward: Lane,
    pub slot_index: u64,
    pub head_position: f64,
    pub head_lane: LaneKind,
    /// Where the beacon was issued.
    pub origin: f64,
    pub margins: Margins,
    /// Local forward-lane coordinate of the trailing edge of the simulated
    /// window at the previous regeneration.
    forward_cut: f64,
    /// Slots spent so far on the pending reverse-aided handshake.
    pub handshake_progress: u32,
}

impl RoadState {
    /// A road with the beacon held by a reverse-lane vehicle at coordinate 0.
    pub fn seeded(params: &ScenarioParams, margins: Margins, seed: u64) -> Result<Self> {
        params.validate_for_simulation()?;
        margins.validate(params)?;
        let mut reverse = Lane::new(LaneKind::Reverse, params.lambda_r, 0.0, seed);
        reverse.insert(0.0, true);
        let forward = Lane::new(LaneKind::Forward, params.lambda_f, 0.0, seed);
        let mut state = RoadState {
            reverse,
            forward,
            slot_index: 0,
            head_position: 0.0,
            head_lane: LaneKind::Reverse,
            origin: 0.0,
            margins,
            forward_cut: -margins.trail,
            handshake_progress: 0,
        };
        state.ensure_horizon();
        Ok(state)
    }

    pub fn lane(&self, kind: LaneKind) -> &Lane {
        match kind {
            LaneKind::Reverse => &self.reverse,
            LaneKind::Forward => &self.forward,
        }
    }

    pub fn lane_mut(&mut self, kind: LaneKind) -> &mut Lane {
        match kind {
            LaneKind::Reverse => &mut self.reverse,
            LaneKind::Forward => &mut self.forward,
        }
    }

    /// Places one extra vehicle on `lane`. Used for the source and for
    /// hand-built scenarios.
    pub fn insert_vehicle(&mut self, lane: LaneKind, position: f64, informed: bool) {
        self.lane_mut(lane).insert(position, informed);
    }

    /// Start of the retained window.
    pub fn trail_edge(&self) -> f64 {
        self.head_position - self.margins.trail
    }

    /// Moves the forward lane by `2vτ`, advances the slot counter and
    /// re-derives the head.
    pub fn advance_slot(&mut self, params: &ScenarioParams) {
        self.forward.shift(params.relative_speed() * params.tau);
        self.slot_index += 1;
        self.refresh_head();
    }

    /// Recomputes the head as the largest informed position. The head never
    /// moves west, so only vehicles at or beyond the previous head are
    /// inspected.
    pub fn refresh_head(&mut self) {
        let from = self.head_position;
        let rev = self.reverse.max_informed_from(from);
        let fwd = self.forward.max_informed_from(from);
        match (rev, fwd) {
            (Some(a), Some(b)) if b >= a => {
                self.head_position = b;
                self.head_lane = LaneKind::Forward;
            }
            (Some(a), _) => {
                self.head_position = a;
                self.head_lane = LaneKind::Reverse;
            }
            (None, Some(b)) => {
                self.head_position = b;
                self.head_lane = LaneKind::Forward;
            }
            (None, None) => {}
        }
    }

    /// Keeps both lanes complete on `[head - trail, head + horizon]`.
    ///
    /// Forward-lane vehicles that drift into the window from behind have
    /// crossed the region the beacon already swept; those east of the origin
    /// enter informed. Reverse-lane vehicles behind the window are dropped.
    pub fn ensure_horizon(&mut self) {
        let front = self.head_position + self.margins.horizon;
        let back = self.trail_edge();
        self.reverse.extend_front(front);
        self.forward.extend_front(front);
        self.forward.extend_back(back);

        let cut = back - self.forward.offset();
        if cut < self.forward_cut {
            let lo = self.forward.local.partition_point(|&p| p < cut);
            let hi = self.forward.local.partition_point(|&p| p < self.forward_cut);
            for i in lo..hi {
                if self.forward.position(i) >= self.origin {
                    self.forward.informed[i] = true;
                }
            }
        }
        self.forward_cut = cut;
        self.reverse.prune_before(back);
    }

    pub fn snapshot(&self) -> (LaneSnapshot, LaneSnapshot) {
        (self.reverse.snapshot(), self.forward.snapshot())
    }

    /// Writes one `lane position informed_flag` line per vehicle.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for lane in [&self.reverse, &self.forward] {
            for i in 0..lane.len() {
                writeln!(
                    out,
                    "{} {} {}",
                    lane.kind(),
                    lane.position(i),
                    u8::from(lane.is_informed(i))
                )?;
            }
        }
        Ok(())
    }
}

/// Reads back a dump written by [`RoadState::write_dump`].
pub fn read_dump<R: BufRead>(input: R) -> Result<Vec<(LaneKind, f64, bool)>> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dump>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("malformed dump line {}: {line:?}", n + 1));
        let mut fields = line.split_whitespace();
        let lane = match fields.next() {
            Some("reverse") => LaneKind::Reverse,
            Some("forward") => LaneKind::Forward,
            _ => return Err(bad()),
        };
        let pos: f64 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let flag = match fields.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad()),
        };
        rows.push((lane, pos, flag));
    }
    Ok(rows)
}
