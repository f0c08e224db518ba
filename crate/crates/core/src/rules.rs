//! Deterministic velocity rules.
//!
//! Two kinds of rule are supported: table-driven rules (a 4x6 lookup over
//! previous velocity and capped gap, with delayed-start semantics encoded as
//! a `-1` entry) and the closed-form NaSch sub-rules with deceleration off
//! (NSH) or on (NSL).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Rows index previous velocity 0..=3, columns index `min(gap, 5)`.
pub type TableEntries = [[i8; 6]; 4];

/// Table matrix for rule R1 (stationary v_max = 2, gap = 4).
pub const R1_TABLE: TableEntries = [
    [0, -1, 1, 1, 1, 1],
    [0, 1, 1, 1, 2, 2],
    [0, 1, 1, 1, 2, 2],
    [0, 1, 1, 1, 2, 2],
];

/// Table matrix for rule R2 (stationary v_max = 2, gap = 3).
pub const R2_TABLE: TableEntries = [
    [0, -1, 1, 2, 1, 1],
    [0, 1, 1, 2, 2, 2],
    [0, 1, 1, 2, 3, 2],
    [0, 1, 1, 2, 3, 2],
];

/// A deterministic table-driven CA rule plus its stationary saturation
/// parameters: the velocity `v_max` and uniform gap `g_stat` of the
/// saturated stream it produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTable {
    name: String,
    u: TableEntries,
    v_max: i64,
    g_stat: i64,
}

/// Checks the structural invariants a velocity table must satisfy.
pub fn validate_table(u: &TableEntries) -> Result<()> {
    for (j, row) in u.iter().enumerate() {
        if row[0] != 0 {
            return Err(SimError::InvalidRuleTable(format!(
                "row {} column 0 must be 0 (gap 0 forces velocity 0), got {}",
                j, row[0]
            )));
        }
        for (k, &entry) in row.iter().enumerate() {
            if entry < -1 {
                return Err(SimError::InvalidRuleTable(format!(
                    "entry ({j},{k}) = {entry} below -1"
                )));
            }
            if entry == -1 && !(j == 0 && k == 1) {
                return Err(SimError::InvalidRuleTable(format!(
                    "delayed-start entry -1 only allowed at row 0 column 1, found at ({j},{k})"
                )));
            }
            if entry > 3 {
                return Err(SimError::InvalidRuleTable(format!(
                    "entry ({j},{k}) = {entry} exceeds 3"
                )));
            }
            // velocity must never exceed the gap the column represents
            if k < 5 && entry > k as i8 {
                return Err(SimError::InvalidRuleTable(format!(
                    "entry ({j},{k}) = {entry} exceeds gap {k}"
                )));
            }
        }
    }
    Ok(())
}

impl RuleTable {
    pub fn new(name: impl Into<String>, u: TableEntries, v_max: i64, g_stat: i64) -> Result<Self> {
        validate_table(&u)?;
        if v_max < 1 || g_stat < 0 {
            return Err(SimError::InvalidRuleTable(format!(
                "stationary parameters v_max={v_max}, g_stat={g_stat} out of range"
            )));
        }
        Ok(Self { name: name.into(), u, v_max, g_stat })
    }

    /// Built-in rules R1 and R2.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "R1" => Self::new("R1", R1_TABLE, 2, 4),
            "R2" => Self::new("R2", R2_TABLE, 2, 3),
            other => Err(SimError::UnknownRule(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &TableEntries {
        &self.u
    }

    pub fn v_max(&self) -> i64 {
        self.v_max
    }

    pub fn g_stat(&self) -> i64 {
        self.g_stat
    }

    /// Stationary saturation flow of this rule, vehicles per time step.
    pub fn saturation_flow(&self) -> f64 {
        rule_saturation_flow(self.v_max, self.g_stat)
    }

    /// Table lookup: velocity for a vehicle with previous velocity `v_prev`
    /// and `gap` free cells ahead. The `-1` entry (stopped vehicle, gap 1)
    /// yields the previous step's gap, clamped so the result never exceeds
    /// `min(gap, 3)`.
    pub fn velocity(&self, v_prev: i64, gap: i64, prev_gap: i64) -> Result<i64> {
        if !(0..=3).contains(&v_prev) {
            return Err(SimError::VelocityOutOfRange(v_prev));
        }
        debug_assert!(gap >= 0 && prev_gap >= 0);
        let k = gap.min(5) as usize;
        let entry = self.u[v_prev as usize][k] as i64;
        if entry >= 0 {
            Ok(entry)
        } else {
            Ok(prev_gap.min(gap).min(3))
        }
    }
}

/// NaSch model parameters: maximal velocity and deceleration probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaschParams {
    pub v_max: i64,
    pub p: f64,
}

impl NaschParams {
    pub fn new(v_max: i64, p: f64) -> Result<Self> {
        if v_max < 1 {
            return Err(SimError::InvalidParameter(format!("v_max must be >= 1, got {v_max}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::InvalidParameter(format!("p must lie in [0,1], got {p}")));
        }
        Ok(Self { v_max, p })
    }

    /// Free-flow velocity v_max - p, cells per step.
    pub fn free_flow_velocity(&self) -> f64 {
        self.v_max as f64 - self.p
    }
}

/// NaSch sub-rule velocity: NSH (`decelerate = false`) is
/// `min(v_prev + 1, gap, v_max)`; NSL (`decelerate = true`) subtracts 1,
/// floored at 0.
pub fn nasch_velocity(params: &NaschParams, v_prev: i64, gap: i64, decelerate: bool) -> i64 {
    let v = (v_prev + 1).min(gap).min(params.v_max);
    if decelerate {
        (v - 1).max(0)
    } else {
        v
    }
}

/// Saturation flow rate of a deterministic rule with stationary velocity
/// `v_max` and uniform gap `g`, in vehicles per time step.
pub fn rule_saturation_flow(v_max: i64, g: i64) -> f64 {
    v_max as f64 / (g + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_r1_matrix() {
        let r1 = RuleTable::builtin("R1").unwrap();
        assert_eq!(r1.entries()[1], [0, 1, 1, 1, 2, 2]);
        assert_eq!(r1.v_max(), 2);
        assert_eq!(r1.g_stat(), 4);
    }

    #[test]
    fn builtin_r2_matrix() {
        let r2 = RuleTable::builtin("R2").unwrap();
        // v_prev = 2, gap = 4 yields velocity 3
        assert_eq!(r2.entries()[2][4], 3);
        assert_eq!(r2.v_max(), 2);
        assert_eq!(r2.g_stat(), 3);
    }

    #[test]
    fn unknown_rule_rejected() {
        assert!(matches!(RuleTable::builtin("R9"), Err(SimError::UnknownRule(_))));
    }

    #[test]
    fn table_velocity_cases() {
        let r1 = RuleTable::builtin("R1").unwrap();
        let r2 = RuleTable::builtin("R2").unwrap();
        assert_eq!(r1.velocity(1, 3, 0).unwrap(), 1);
        assert_eq!(r2.velocity(1, 3, 0).unwrap(), 2);
        // delayed start: stopped vehicle with gap 1 reuses the previous gap
        assert_eq!(r1.velocity(0, 1, 0).unwrap(), 0);
        assert_eq!(r1.velocity(0, 1, 1).unwrap(), 1);
        assert_eq!(r2.velocity(0, 0, 5).unwrap(), 0);
        // gap saturation: columns cap at gap 5
        assert_eq!(r1.velocity(1, 50, 0).unwrap(), 2);
    }

    #[test]
    fn velocity_out_of_range() {
        let r1 = RuleTable::builtin("R1").unwrap();
        assert!(matches!(r1.velocity(4, 3, 0), Err(SimError::VelocityOutOfRange(4))));
    }

    #[test]
    fn table_velocity_never_exceeds_gap() {
        // Exhaustive over both built-in tables.
        for rule in [RuleTable::builtin("R1").unwrap(), RuleTable::builtin("R2").unwrap()] {
            for v_prev in 0..=3 {
                for gap in 0..=10 {
                    for prev_gap in 0..=10 {
                        let v = rule.velocity(v_prev, gap, prev_gap).unwrap();
                        assert!(v >= 0 && v <= gap.min(3), "{} v_prev={v_prev} gap={gap} prev_gap={prev_gap} -> {v}", rule.name());
                    }
                }
            }
        }
    }

    #[test]
    fn nasch_velocity_cases() {
        let p = NaschParams::new(2, 0.2).unwrap();
        assert_eq!(nasch_velocity(&p, 1, 5, false), 2);
        assert_eq!(nasch_velocity(&p, 1, 5, true), 1);
        assert_eq!(nasch_velocity(&p, 0, 0, true), 0);
    }

    #[test]
    fn nasch_decelerated_dominated_and_gap_safe() {
        let p = NaschParams::new(2, 0.5).unwrap();
        for v_prev in 0..=2 {
            for gap in 0..=10 {
                let hi = nasch_velocity(&p, v_prev, gap, false);
                let lo = nasch_velocity(&p, v_prev, gap, true);
                assert!(lo <= hi);
                assert!(hi <= gap);
                assert!(lo >= 0);
            }
        }
    }

    #[test]
    fn saturation_flow_values() {
        assert_eq!(rule_saturation_flow(2, 4), 0.4);
        assert_eq!(rule_saturation_flow(2, 3), 0.5);
        assert_eq!(rule_saturation_flow(1, 0), 1.0);
        assert_eq!(rule_saturation_flow(2, 4) * 3600.0, 1440.0);
        assert_eq!(rule_saturation_flow(2, 3) * 3600.0, 1800.0);
    }

    #[test]
    fn invalid_tables_rejected() {
        let mut u = R1_TABLE;
        u[2][0] = 1; // gap 0 must force velocity 0
        assert!(validate_table(&u).is_err());
        let mut u = R1_TABLE;
        u[1][2] = -1; // -1 outside its designated slot
        assert!(validate_table(&u).is_err());
        let mut u = R1_TABLE;
        u[3][5] = 4; // exceeds 3
        assert!(validate_table(&u).is_err());
        let mut u = R1_TABLE;
        u[0][2] = 3; // exceeds the gap its column represents
        assert!(validate_table(&u).is_err());
    }

    #[test]
    fn nasch_params_validation() {
        assert!(NaschParams::new(0, 0.2).is_err());
        assert!(NaschParams::new(2, 1.5).is_err());
        assert!(NaschParams::new(2, -0.1).is_err());
        assert!((NaschParams::new(2, 0.2).unwrap().free_flow_velocity() - 1.8).abs() < 1e-12);
    }
}
