//! Road scenarios: geometry in meters, derived stop cells, signal timings,
//! and initial standing queues. Also the JSON config file schema used by the
//! CLI (see FORMATS.md at the repo root for field definitions).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::SignalSchedule;
use crate::error::{Result, SimError};
use crate::rules::TableEntries;
use crate::tfn::TriangularFuzzy;

/// Which engine a scenario is built for; decides the default cell length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fuzzy,
    Nasch,
}

/// Cell lengths chosen so both models share the 13.5 m/s free-flow speed:
/// 7.5 m for NaSch (v_f = 2 - 0.2 = 1.8 cells/s) and
/// 7.5 * 1.8 / 2 = 6.75 m for the fuzzy engine (v_f = 2 cells/s).
pub const CELL_LENGTH_FUZZY_M: f64 = 6.75;
pub const CELL_LENGTH_NASCH_M: f64 = 7.5;

/// Signal timing at one stop line, in seconds (1 step = 1 s).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalTiming {
    pub cycle_s: u32,
    pub green_start_s: u32,
    pub green_s: u32,
}

/// A single one-way road with signalised stop lines and standing initial
/// queues. Positions are configured in meters; cells are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub road_length_m: f64,
    pub cell_length_m: f64,
    pub stop_lines_m: Vec<f64>,
    pub timings: Vec<SignalTiming>,
    pub initial_queue_per_intersection: u32,
    pub last_vehicle_at_first_cell: bool,
    pub steps: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_length_m > 0.0) {
            return Err(SimError::GeometryError(format!(
                "cell length must be positive, got {}",
                self.cell_length_m
            )));
        }
        if self.stop_lines_m.len() != self.timings.len() {
            return Err(SimError::GeometryError(format!(
                "{} stop lines but {} signal timings",
                self.stop_lines_m.len(),
                self.timings.len()
            )));
        }
        let mut prev = 0.0;
        for &m in &self.stop_lines_m {
            if m <= prev {
                return Err(SimError::GeometryError(format!(
                    "stop lines must be strictly increasing and positive, got {m} after {prev}"
                )));
            }
            if m > self.road_length_m {
                return Err(SimError::GeometryError(format!(
                    "stop line at {m} m beyond road length {} m",
                    self.road_length_m
                )));
            }
            prev = m;
        }
        // queues must fit between consecutive stop lines (and above cell 0)
        let stop_cells = self.stop_cells();
        let q = self.initial_queue_per_intersection as i64;
        for (idx, &cell) in stop_cells.iter().enumerate() {
            let tail = cell - q;
            let floor = if idx == 0 {
                if self.last_vehicle_at_first_cell {
                    0
                } else {
                    -1
                }
            } else {
                stop_cells[idx - 1]
            };
            if tail <= floor {
                return Err(SimError::GeometryError(format!(
                    "queue of {q} at stop cell {cell} overlaps cell {floor} upstream"
                )));
            }
        }
        // schedules must be constructible
        self.schedules()?;
        Ok(())
    }

    /// Stop cell indices: floor(position_m / cell_length_m).
    pub fn stop_cells(&self) -> Vec<i64> {
        self.stop_lines_m
            .iter()
            .map(|m| (m / self.cell_length_m).floor() as i64)
            .collect()
    }

    pub fn schedules(&self) -> Result<Vec<SignalSchedule>> {
        self.stop_cells()
            .iter()
            .zip(&self.timings)
            .map(|(&cell, t)| SignalSchedule::new(cell, t.cycle_s, t.green_start_s, t.green_s))
            .collect()
    }

    /// Initial vehicle positions, leading vehicle first: bumper-to-bumper
    /// queues immediately upstream of each stop line (head in the cell just
    /// before the halt cell), plus one extra vehicle in the first cell of
    /// the road when configured.
    pub fn initial_positions(&self) -> Result<Vec<i64>> {
        self.validate()?;
        let q = self.initial_queue_per_intersection as i64;
        let mut positions = Vec::new();
        for &cell in self.stop_cells().iter().rev() {
            for j in 1..=q {
                positions.push(cell - j);
            }
        }
        if self.last_vehicle_at_first_cell {
            positions.push(0);
        }
        Ok(positions)
    }

    pub fn vehicle_count(&self) -> usize {
        self.stop_lines_m.len() * self.initial_queue_per_intersection as usize
            + usize::from(self.last_vehicle_at_first_cell)
    }

    /// Index of the last (most upstream) vehicle.
    pub fn last_vehicle_index(&self) -> usize {
        self.vehicle_count().saturating_sub(1)
    }

    /// Stop cell of the final intersection, the crossing threshold used for
    /// travel times and vehicle counts.
    pub fn final_stop_cell(&self) -> Option<i64> {
        self.stop_cells().last().copied()
    }
}

/// Builds the three-intersection arterial: 3 km road, stop lines at 750,
/// 1500 and 2250 m, green phases shifted by `offset_s` per successive
/// intersection.
pub fn build_arterial(
    queue_len: u32,
    cycle_s: u32,
    green_s: u32,
    offset_s: u32,
    model: ModelKind,
    steps: u64,
) -> Result<Scenario> {
    let cell_length_m = match model {
        ModelKind::Fuzzy => CELL_LENGTH_FUZZY_M,
        ModelKind::Nasch => CELL_LENGTH_NASCH_M,
    };
    let timings = (0..3)
        .map(|k| SignalTiming {
            cycle_s,
            green_start_s: (k * offset_s) % cycle_s.max(1),
            green_s,
        })
        .collect();
    let scenario = Scenario {
        road_length_m: 3000.0,
        cell_length_m,
        stop_lines_m: vec![750.0, 1500.0, 2250.0],
        timings,
        initial_queue_per_intersection: queue_len,
        last_vehicle_at_first_cell: true,
        steps,
    };
    scenario.validate()?;
    Ok(scenario)
}

// --- config file schema ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Fuzzy {
        rule_l: String,
        rule_h: String,
        saturation_flow_veh_h: TriangularFuzzy,
    },
    Nasch {
        v_max: i64,
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySection {
    pub road_length_m: f64,
    pub cell_length_m: f64,
    pub stop_lines_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSection {
    pub queue_per_intersection: u32,
    #[serde(default = "default_true")]
    pub last_vehicle_at_first_cell: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectory_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics_json: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub samples_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub summary_json: Option<String>,
}

/// Top-level config document: sections model/geometry/signals/initial/output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub model: ModelSpec,
    pub geometry: GeometrySection,
    pub signals: Vec<SignalTiming>,
    pub initial: InitialSection,
    pub steps: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub custom_rules: BTreeMap<String, TableEntries>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let s = Scenario {
            road_length_m: self.geometry.road_length_m,
            cell_length_m: self.geometry.cell_length_m,
            stop_lines_m: self.geometry.stop_lines_m.clone(),
            timings: self.signals.clone(),
            initial_queue_per_intersection: self.initial.queue_per_intersection,
            last_vehicle_at_first_cell: self.initial.last_vehicle_at_first_cell,
            steps: self.steps,
        };
        s.validate()?;
        Ok(s)
    }
}
