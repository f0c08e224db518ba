//! Single-lane CA lattice: one deterministic realization of the road.
//!
//! Positions live on an unbounded integer axis; vehicle 0 is the leading
//! vehicle and positions are strictly decreasing with the index. Red signals
//! act as halt cells: a vehicle may stop in the cell immediately before a
//! halt cell, never in it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Active red-signal cells for the current step.
pub type HaltSet = BTreeSet<i64>;

/// Effectively-infinite gap used when nothing blocks a vehicle.
pub const OPEN_GAP: i64 = i64::MAX / 4;

/// Fixed-time signal at one stop line. `green_start` is the offset of the
/// green onset within the cycle; yellow counts as green.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSchedule {
    pub halt_cell: i64,
    pub cycle: u32,
    pub green_start: u32,
    pub green_duration: u32,
}

impl SignalSchedule {
    pub fn new(halt_cell: i64, cycle: u32, green_start: u32, green_duration: u32) -> Result<Self> {
        if !(green_duration > 0 && green_duration < cycle) {
            return Err(SimError::InvalidSchedule(format!(
                "need 0 < green_duration < cycle, got green={green_duration}, cycle={cycle}"
            )));
        }
        if green_start >= cycle {
            return Err(SimError::InvalidSchedule(format!(
                "green_start {green_start} must lie within the cycle {cycle}"
            )));
        }
        Ok(Self { halt_cell, cycle, green_start, green_duration })
    }

    /// True when the signal shows red at step `t`.
    pub fn is_red(&self, t: u64) -> bool {
        let phase = (t as i64 - self.green_start as i64).rem_euclid(self.cycle as i64);
        phase >= self.green_duration as i64
    }
}

/// Halt cells of all signals showing red at step `t`.
pub fn active_halt_cells(schedules: &[SignalSchedule], t: u64) -> HaltSet {
    schedules.iter().filter(|s| s.is_red(t)).map(|s| s.halt_cell).collect()
}

/// One CA realization: per-vehicle positions, velocities, and the gaps
/// observed at the previous step (needed by the delayed-start table entry).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    positions: Vec<i64>,
    velocities: Vec<i64>,
    prev_gaps: Vec<i64>,
}

impl Channel {
    /// Builds a channel of standing vehicles. Initial velocities are 0 and
    /// initial `prev_gaps` equal the gaps of the initial configuration
    /// (computed against `halt`, the halt cells active at step 0).
    pub fn from_positions(positions: Vec<i64>, halt: &HaltSet) -> Result<Self> {
        for w in positions.windows(2) {
            if w[0] <= w[1] {
                return Err(SimError::GeometryError(format!(
                    "positions must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let velocities = vec![0; positions.len()];
        let mut ch = Self { positions, velocities, prev_gaps: Vec::new() };
        ch.prev_gaps = (0..ch.len()).map(|i| ch.gap_ahead(i, halt)).collect();
        Ok(ch)
    }

    /// Ring-topology variant: initial `prev_gaps` wrap around the ring.
    pub fn from_positions_ring(positions: Vec<i64>, ring_cells: i64) -> Result<Self> {
        let mut ch = Self::from_positions(positions, &HaltSet::new())?;
        if let Some(&first) = ch.positions.first() {
            if first >= ring_cells || *ch.positions.last().unwrap() < 0 {
                return Err(SimError::GeometryError(format!(
                    "positions must lie in [0, {ring_cells})"
                )));
            }
        }
        if ch.len() as i64 > ring_cells {
            return Err(SimError::Overfull { vehicles: ch.len(), cells: ring_cells });
        }
        ch.prev_gaps = (0..ch.len()).map(|i| ch.gap_ahead_ring(i, ring_cells)).collect();
        Ok(ch)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[i64] {
        &self.velocities
    }

    pub fn prev_gaps(&self) -> &[i64] {
        &self.prev_gaps
    }

    /// Free cells between vehicle `i` and the nearest obstacle ahead: its
    /// leader or the closest active halt cell beyond its position.
    pub fn gap_ahead(&self, i: usize, halt: &HaltSet) -> i64 {
        let pos = self.positions[i];
        let leader = if i == 0 { OPEN_GAP } else { self.positions[i - 1] };
        let nearest_halt = halt.range(pos + 1..).next().copied().unwrap_or(OPEN_GAP);
        leader.min(nearest_halt) - pos - 1
    }

    /// Ring-topology gap: the leader of vehicle 0 is the last vehicle one
    /// wrap ahead. Halt cells do not apply on the ring.
    pub fn gap_ahead_ring(&self, i: usize, ring_cells: i64) -> i64 {
        let leader = if i == 0 {
            self.positions[self.len() - 1] + ring_cells
        } else {
            self.positions[i - 1]
        };
        leader - self.positions[i] - 1
    }

    /// Synchronous update: all gaps are read from the pre-step configuration,
    /// then every vehicle's velocity and position change simultaneously.
    /// `velocity_fn(i, v_prev, gap, prev_gap)` must return a velocity not
    /// exceeding the gap; a violation surfaces as `CollisionDetected`.
    pub fn advance<F>(&mut self, halt: &HaltSet, step: u64, mut velocity_fn: F) -> Result<()>
    where
        F: FnMut(usize, i64, i64, i64) -> Result<i64>,
    {
        let n = self.len();
        let mut gaps = Vec::with_capacity(n);
        for i in 0..n {
            gaps.push(self.gap_ahead(i, halt));
        }
        for i in 0..n {
            let v = velocity_fn(i, self.velocities[i], gaps[i], self.prev_gaps[i])?;
            if v < 0 || v > gaps[i] {
                return Err(SimError::CollisionDetected {
                    step,
                    vehicle: i,
                    cell: self.positions[i] + v,
                });
            }
            self.velocities[i] = v;
            self.positions[i] += v;
        }
        self.prev_gaps = gaps;
        debug_assert!(self.positions.windows(2).all(|w| w[0] > w[1]));
        Ok(())
    }

    /// Synchronous update on a periodic ring of `ring_cells` cells.
    /// The gap for the ring leader wraps around; the collision check is the
    /// same velocity <= gap contract.
    pub fn advance_ring<F>(&mut self, ring_cells: i64, step: u64, mut velocity_fn: F) -> Result<()>
    where
        F: FnMut(usize, i64, i64, i64) -> Result<i64>,
    {
        let n = self.len();
        let mut gaps = Vec::with_capacity(n);
        for i in 0..n {
            gaps.push(self.gap_ahead_ring(i, ring_cells));
        }
        for i in 0..n {
            let v = velocity_fn(i, self.velocities[i], gaps[i], self.prev_gaps[i])?;
            if v < 0 || v > gaps[i] {
                return Err(SimError::CollisionDetected {
                    step,
                    vehicle: i,
                    cell: self.positions[i] + v,
                });
            }
            self.velocities[i] = v;
            self.positions[i] += v;
        }
        self.prev_gaps = gaps;
        Ok(())
    }
}
