//! Measurement procedures: trajectory logs, saturation flow, queue-discharge
//! traces, fuzzy travel times and vehicle counts, the flow-density sweep on a
//! ring, and basic-operation accounting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, HaltSet};
use crate::error::{Result, SimError};
use crate::fuzzy::{Calibration, FuzzyState};
use crate::nasch::{child_seed, step_nasch_ring, RunObserver};
use crate::rules::{rule_saturation_flow, NaschParams, RuleTable, TableEntries};
use crate::tfn::TriangularFuzzy;

/// Provenance recorded with every run, sufficient to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub model: String,
    pub parameters: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    pub version: String,
}

/// State of one channel at one time step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    pub positions: Vec<i64>,
    pub velocities: Vec<i64>,
}

/// Per-step record of all channels of one run (five for the fuzzy engine,
/// one for NaSch), including the initial state, plus operation accounting.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub channel_names: Vec<String>,
    pub snapshots: Vec<Vec<ChannelSnapshot>>,
    pub op_count: u64,
    pub ordering_violated: bool,
    pub metadata: LogMetadata,
}

impl TrajectoryLog {
    pub fn new(channel_names: Vec<String>, metadata: LogMetadata) -> Self {
        Self { channel_names, snapshots: Vec::new(), op_count: 0, ordering_violated: false, metadata }
    }

    pub fn record(&mut self, channels: &[&Channel]) {
        debug_assert_eq!(channels.len(), self.channel_names.len());
        self.snapshots.push(
            channels
                .iter()
                .map(|ch| ChannelSnapshot {
                    positions: ch.positions().to_vec(),
                    velocities: ch.velocities().to_vec(),
                })
                .collect(),
        );
    }

    /// Number of simulated steps T; the log holds T + 1 snapshots.
    pub fn steps(&self) -> u64 {
        self.snapshots.len().saturating_sub(1) as u64
    }

    pub fn vehicle_count(&self) -> usize {
        self.snapshots
            .first()
            .and_then(|s| s.first())
            .map_or(0, |c| c.positions.len())
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channel_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SimError::InvalidParameter(format!("log has no channel '{name}'")))
    }

    /// Indices of the three fuzzy component channels.
    pub fn component_indices(&self) -> Result<[usize; 3]> {
        Ok([
            self.channel_index("m1")?,
            self.channel_index("m2")?,
            self.channel_index("m3")?,
        ])
    }

    pub fn positions(&self, t: u64, channel: usize) -> &[i64] {
        &self.snapshots[t as usize][channel].positions
    }
}

/// Standing bumper-to-bumper queue of `n` vehicles immediately upstream of
/// `stop_cell`, leading vehicle first.
pub fn saturated_queue_positions(stop_cell: i64, n: usize) -> Vec<i64> {
    (1..=n as i64).map(|j| stop_cell - j).collect()
}

/// Counts stop-line crossings of one channel over `[warmup, warmup+horizon)`
/// and scales to vehicles per hour (1 step = 1 s). The measurement requires
/// a persistent queue: it fails with `QueueExhausted` when no vehicle remains
/// upstream of the stop cell before the window ends.
pub fn measure_saturation_flow(
    log: &TrajectoryLog,
    channel: usize,
    stop_cell: i64,
    warmup: u64,
    horizon: u64,
) -> Result<f64> {
    if warmup + horizon > log.steps() {
        return Err(SimError::InvalidParameter(format!(
            "window {warmup}+{horizon} exceeds log horizon {}",
            log.steps()
        )));
    }
    let mut count = 0u64;
    for t in warmup..warmup + horizon {
        let now = log.positions(t, channel);
        let next = log.positions(t + 1, channel);
        if !now.iter().any(|&x| x <= stop_cell) {
            return Err(SimError::QueueExhausted(t));
        }
        count += now
            .iter()
            .zip(next)
            .filter(|&(&a, &b)| a <= stop_cell && b > stop_cell)
            .count() as u64;
    }
    Ok(count as f64 * 3600.0 / horizon as f64)
}

/// Saturation flow of each fuzzy component channel, sorted ascending into a
/// fuzzy number (veh/h).
pub fn fuzzy_saturation_flow(
    log: &TrajectoryLog,
    stop_cell: i64,
    warmup: u64,
    horizon: u64,
) -> Result<TriangularFuzzy> {
    let idx = log.component_indices()?;
    let mut flows = [0.0; 3];
    for (f, &c) in flows.iter_mut().zip(idx.iter()) {
        *f = measure_saturation_flow(log, c, stop_cell, warmup, horizon)?;
    }
    TriangularFuzzy::from_sorted(flows)
}

/// Streaming crossing counter for ensemble runs; same semantics as
/// `measure_saturation_flow` without storing the trajectory.
pub struct CrossingCounter {
    stop_cell: i64,
    warmup: u64,
    horizon: u64,
    prev: Vec<i64>,
    count: u64,
    exhausted: Option<u64>,
}

impl CrossingCounter {
    pub fn new(stop_cell: i64, warmup: u64, horizon: u64) -> Self {
        Self { stop_cell, warmup, horizon, prev: Vec::new(), count: 0, exhausted: None }
    }
}

impl RunObserver for CrossingCounter {
    fn observe(&mut self, t: u64, ch: &Channel) {
        if t > 0 {
            let step = t - 1;
            if step >= self.warmup && step < self.warmup + self.horizon && self.exhausted.is_none() {
                if !self.prev.iter().any(|&x| x <= self.stop_cell) {
                    self.exhausted = Some(step);
                } else {
                    self.count += self
                        .prev
                        .iter()
                        .zip(ch.positions())
                        .filter(|&(&a, &b)| a <= self.stop_cell && b > self.stop_cell)
                        .count() as u64;
                }
            }
        }
        self.prev.clear();
        self.prev.extend_from_slice(ch.positions());
    }

    fn finish(&mut self) -> Result<Vec<f64>> {
        if let Some(t) = self.exhausted {
            return Err(SimError::QueueExhausted(t));
        }
        Ok(vec![self.count as f64 * 3600.0 / self.horizon as f64])
    }
}

/// Stationary regime reached by a discharging queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub v_max: i64,
    pub gap: i64,
    pub flow_veh_step: f64,
}

/// Cell-state table of a queue discharge: velocity in occupied cells, -1 in
/// empty cells, one row per time step.
#[derive(Debug, Clone)]
pub struct DischargeTrace {
    pub halt_cell: i64,
    pub cells: Vec<Vec<i64>>,
    pub final_positions: Vec<i64>,
    pub final_velocities: Vec<i64>,
    pub steady: Option<SteadyState>,
}

/// Releases a standing queue of `queue_len` vehicles and traces the cell
/// states for `steps` steps. The halt cell (red signal) is active only at
/// the first time step. Reports the steady (v_max, gap) once the stream
/// stabilises.
pub fn queue_discharge_trace(rule: &RuleTable, queue_len: usize, steps: u64) -> Result<DischargeTrace> {
    if queue_len < 2 {
        return Err(SimError::InvalidParameter(format!(
            "queue discharge needs at least 2 vehicles, got {queue_len}"
        )));
    }
    let halt_cell = queue_len as i64;
    let halt0: HaltSet = [halt_cell].into_iter().collect();
    let positions = saturated_queue_positions(halt_cell, queue_len);
    let mut ch = Channel::from_positions(positions, &halt0)?;

    let width = (queue_len as i64 + 1 + 3 * steps as i64) as usize;
    let mut cells = Vec::with_capacity(steps as usize + 1);
    let snapshot = |ch: &Channel| {
        let mut row = vec![-1i64; width];
        for (&x, &v) in ch.positions().iter().zip(ch.velocities()) {
            if (0..width as i64).contains(&x) {
                row[x as usize] = v;
            }
        }
        row
    };
    cells.push(snapshot(&ch));
    let empty = HaltSet::new();
    for t in 0..steps {
        let halt = if t == 0 { &halt0 } else { &empty };
        ch.advance(halt, t, |_, v, g, pg| rule.velocity(v, g, pg))?;
        cells.push(snapshot(&ch));
    }

    let steady = detect_steady(&ch);
    Ok(DischargeTrace {
        halt_cell,
        cells,
        final_positions: ch.positions().to_vec(),
        final_velocities: ch.velocities().to_vec(),
        steady,
    })
}

/// Steady state from the final configuration: the maximal velocity and the
/// uniform gap among pairs of consecutive vehicles moving at it. Requires
/// every vehicle to have reached the maximal velocity.
fn detect_steady(ch: &Channel) -> Option<SteadyState> {
    let v_max = *ch.velocities().iter().max()?;
    if v_max == 0 || ch.velocities().iter().any(|&v| v != v_max) {
        return None;
    }
    let mut gaps = ch.positions().windows(2).map(|w| w[0] - w[1] - 1);
    let first = gaps.next()?;
    if gaps.all(|g| g == first) {
        Some(SteadyState { v_max, gap: first, flow_veh_step: rule_saturation_flow(v_max, first) })
    } else {
        None
    }
}

/// Measures the stationary (v_max, gap) of a custom table by queue-discharge
/// simulation and returns a fully parameterised rule.
pub fn measure_stationary(name: &str, entries: TableEntries) -> Result<RuleTable> {
    let probe = RuleTable::new(name, entries, 1, 0)?;
    let trace = queue_discharge_trace(&probe, 10, 200)?;
    let steady = trace.steady.ok_or_else(|| {
        SimError::InvalidRuleTable(format!("rule '{name}' reached no stationary regime"))
    })?;
    RuleTable::new(name, entries, steady.v_max, steady.gap)
}

/// Fuzzy travel time of vehicle `vehicle` past `stop_cell`: the first step
/// at which each component channel has passed the cell. Components are
/// sorted ascending before building the fuzzy number (a leading component
/// crosses earlier, so the raw order is reversed).
pub fn fuzzy_travel_time(
    log: &TrajectoryLog,
    vehicle: usize,
    stop_cell: i64,
) -> Result<TriangularFuzzy> {
    let idx = log.component_indices()?;
    let mut times = [0.0; 3];
    for (m, (&c, slot)) in idx.iter().zip(times.iter_mut()).enumerate() {
        let arrival = (0..=log.steps())
            .find(|&t| log.positions(t, c)[vehicle] > stop_cell)
            .ok_or(SimError::NeverArrived { component: m + 1, cell: stop_cell })?;
        *slot = arrival as f64;
    }
    TriangularFuzzy::from_sorted(times)
}

/// Fuzzy vehicle count at step `t`: per component, the number of vehicles
/// at or upstream of `boundary_cell`, sorted ascending.
pub fn fuzzy_vehicle_count(
    log: &TrajectoryLog,
    t: u64,
    boundary_cell: i64,
) -> Result<TriangularFuzzy> {
    if t > log.steps() {
        return Err(SimError::InvalidParameter(format!(
            "step {t} beyond log horizon {}",
            log.steps()
        )));
    }
    let idx = log.component_indices()?;
    let mut counts = [0.0; 3];
    for (&c, slot) in idx.iter().zip(counts.iter_mut()) {
        *slot = log.positions(t, c).iter().filter(|&&x| x <= boundary_cell).count() as f64;
    }
    TriangularFuzzy::from_sorted(counts)
}

/// Streaming observer recording the travel time of one vehicle past a cell.
pub struct TravelTimeObserver {
    vehicle: usize,
    stop_cell: i64,
    arrival: Option<u64>,
}

impl TravelTimeObserver {
    pub fn new(vehicle: usize, stop_cell: i64) -> Self {
        Self { vehicle, stop_cell, arrival: None }
    }
}

impl RunObserver for TravelTimeObserver {
    fn observe(&mut self, t: u64, ch: &Channel) {
        if self.arrival.is_none() && ch.positions()[self.vehicle] > self.stop_cell {
            self.arrival = Some(t);
        }
    }

    fn finish(&mut self) -> Result<Vec<f64>> {
        match self.arrival {
            Some(t) => Ok(vec![t as f64]),
            None => Err(SimError::NeverArrived { component: 0, cell: self.stop_cell }),
        }
    }
}

/// Streaming observer sampling the upstream vehicle count every
/// `sample_every` steps.
pub struct VehicleCountObserver {
    boundary_cell: i64,
    sample_every: u64,
    counts: Vec<f64>,
}

impl VehicleCountObserver {
    pub fn new(boundary_cell: i64, sample_every: u64) -> Self {
        Self { boundary_cell, sample_every, counts: Vec::new() }
    }
}

impl RunObserver for VehicleCountObserver {
    fn observe(&mut self, t: u64, ch: &Channel) {
        if t % self.sample_every == 0 {
            self.counts
                .push(ch.positions().iter().filter(|&&x| x <= self.boundary_cell).count() as f64);
        }
    }

    fn finish(&mut self) -> Result<Vec<f64>> {
        Ok(std::mem::take(&mut self.counts))
    }
}

/// Combined per-run samples for arterial comparisons: travel time of the
/// last vehicle followed by sampled vehicle counts.
pub struct ArterialObserver {
    travel: TravelTimeObserver,
    counts: VehicleCountObserver,
}

impl ArterialObserver {
    pub fn new(last_vehicle: usize, stop_cell: i64, sample_every: u64) -> Self {
        Self {
            travel: TravelTimeObserver::new(last_vehicle, stop_cell),
            counts: VehicleCountObserver::new(stop_cell, sample_every),
        }
    }
}

impl RunObserver for ArterialObserver {
    fn observe(&mut self, t: u64, ch: &Channel) {
        self.travel.observe(t, ch);
        self.counts.observe(t, ch);
    }

    fn finish(&mut self) -> Result<Vec<f64>> {
        let mut out = self.travel.finish()?;
        out.extend(self.counts.finish()?);
        Ok(out)
    }
}

/// Model selector for the flow-density sweep.
pub enum SweepModel<'a> {
    Fuzzy(&'a Calibration),
    Nasch(NaschParams),
}

/// One point of the fundamental diagram: flows in veh/h (one value for
/// NaSch, three components for the fuzzy engine).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub density: f64,
    pub flows_veh_h: Vec<f64>,
}

/// Flow-density diagram on a periodic ring: vehicles are placed at seeded
/// uniform random cells, the system warms up, then flow is measured as the
/// velocity sum over the measurement window divided by (ring length x
/// window), scaled to veh/h.
pub fn flow_density_sweep(
    model: &SweepModel,
    densities: &[f64],
    ring_cells: i64,
    warmup: u64,
    measure: u64,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if ring_cells < 1 || measure < 1 {
        return Err(SimError::InvalidParameter(
            "ring size and measurement window must be positive".to_string(),
        ));
    }
    let mut points = Vec::with_capacity(densities.len());
    for (idx, &density) in densities.iter().enumerate() {
        if !(density > 0.0 && density <= 1.0) {
            return Err(SimError::InvalidParameter(format!("density {density} outside (0, 1]")));
        }
        let n = (density * ring_cells as f64).round() as usize;
        if n as i64 > ring_cells {
            return Err(SimError::Overfull { vehicles: n, cells: ring_cells });
        }
        if n == 0 {
            points.push(SweepPoint {
                density,
                flows_veh_h: match model {
                    SweepModel::Fuzzy(_) => vec![0.0; 3],
                    SweepModel::Nasch(_) => vec![0.0],
                },
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, idx as u64));
        let mut cells: Vec<i64> = rand::seq::index::sample(&mut rng, ring_cells as usize, n)
            .into_iter()
            .map(|c| c as i64)
            .collect();
        cells.sort_unstable_by(|a, b| b.cmp(a));
        let ch = Channel::from_positions_ring(cells, ring_cells)?;

        let flows = match model {
            SweepModel::Nasch(params) => {
                let mut ch = ch;
                let mut sum = 0i64;
                for t in 0..warmup + measure {
                    step_nasch_ring(&mut ch, params, ring_cells, t, &mut rng)?;
                    if t >= warmup {
                        sum += ch.velocities().iter().sum::<i64>();
                    }
                }
                vec![sum as f64 / (ring_cells as f64 * measure as f64) * 3600.0]
            }
            SweepModel::Fuzzy(cal) => {
                let mut state = FuzzyState::from_channel(ch);
                let mut sums = [0i64; 3];
                for t in 0..warmup + measure {
                    state.step_ring(cal, ring_cells)?;
                    if t >= warmup {
                        for (m, sum) in sums.iter_mut().enumerate() {
                            *sum += state.component(m).velocities().iter().sum::<i64>();
                        }
                    }
                }
                sums.iter()
                    .map(|&s| s as f64 / (ring_cells as f64 * measure as f64) * 3600.0)
                    .collect()
            }
        };
        points.push(SweepPoint { density, flows_veh_h: flows });
    }
    Ok(points)
}

/// Basic-operation comparison of a fuzzy run against a NaSch ensemble over
/// the same scenario dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpCostReport {
    pub fuzzy_ops: u64,
    pub nasch_ops: u64,
    pub ratio: f64,
}

pub fn op_cost_report(
    fuzzy_log: &TrajectoryLog,
    ensemble: &crate::nasch::Ensemble,
) -> Result<OpCostReport> {
    let (t, n) = (fuzzy_log.steps(), fuzzy_log.vehicle_count());
    if t != ensemble.steps || n != ensemble.vehicles {
        return Err(SimError::DimensionMismatch {
            fuzzy_t: t,
            fuzzy_n: n,
            nasch_t: ensemble.steps,
            nasch_n: ensemble.vehicles,
        });
    }
    debug_assert_eq!(fuzzy_log.op_count, 5 * t * n as u64);
    debug_assert_eq!(ensemble.op_count, ensemble.runs * t * n as u64);
    let ratio = if fuzzy_log.op_count > 0 {
        ensemble.op_count as f64 / fuzzy_log.op_count as f64
    } else {
        0.0
    };
    Ok(OpCostReport { fuzzy_ops: fuzzy_log.op_count, nasch_ops: ensemble.op_count, ratio })
}
