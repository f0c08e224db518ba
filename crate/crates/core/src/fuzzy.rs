//! Fuzzy CA engine: five channels per simulation (auxiliary L and H bound
//! trajectories plus three fuzzy-component channels) updated by a pair of
//! deterministic rules. Rule selection per vehicle and component compares the
//! normalized position against a calibrated alpha threshold, which steers
//! each component toward an arbitrary saturation flow between the two rules'
//! extremes.

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channel::{active_halt_cells, Channel, HaltSet, SignalSchedule};
use crate::error::{Result, SimError};
use crate::metrics::{LogMetadata, TrajectoryLog};
use crate::rules::RuleTable;
use crate::scenario::Scenario;
use crate::tfn::TriangularFuzzy;

/// Saturation flow (vehicles per time step) as a function of the calibration
/// parameter: interpolates between the two rules' stationary parameters.
pub fn saturation_of_alpha(v_l: i64, g_l: i64, v_h: i64, g_h: i64, alpha: f64) -> f64 {
    let v = v_l as f64 + alpha * (v_h - v_l) as f64;
    let g = g_l as f64 + alpha * (g_h - g_l) as f64;
    v / (g + 1.0)
}

/// Inverse of `saturation_of_alpha`: the alpha reproducing a target
/// saturation flow `s` (vehicles per time step). Errors when `s` falls
/// outside the range the rule pair can span.
pub fn alpha_for_saturation(v_l: i64, g_l: i64, v_h: i64, g_h: i64, s: f64) -> Result<f64> {
    let s_l = saturation_of_alpha(v_l, g_l, v_h, g_h, 0.0);
    let s_h = saturation_of_alpha(v_l, g_l, v_h, g_h, 1.0);
    if !(s >= s_l && s <= s_h) {
        return Err(SimError::OutOfRange { s, lo: s_l, hi: s_h });
    }
    let denom = (v_h - v_l) as f64 - s * (g_h - g_l) as f64;
    if denom.abs() < 1e-12 {
        return Err(SimError::InvalidParameter(format!(
            "degenerate rule pair: alpha undefined for s = {s}"
        )));
    }
    Ok((s * (g_l + 1) as f64 - v_l as f64) / denom)
}

/// A rule pair plus the three alpha thresholds for the fuzzy components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    rule_l: RuleTable,
    rule_h: RuleTable,
    alpha: [f64; 3],
}

impl Calibration {
    pub fn new(rule_l: RuleTable, rule_h: RuleTable, alpha: [f64; 3]) -> Result<Self> {
        if rule_l.saturation_flow() >= rule_h.saturation_flow() {
            return Err(SimError::InvalidParameter(format!(
                "rule {} must have lower saturation flow than rule {}",
                rule_l.name(),
                rule_h.name()
            )));
        }
        for &a in &alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(SimError::InvalidParameter(format!("alpha {a} outside [0,1]")));
            }
        }
        if !(alpha[0] <= alpha[1] && alpha[1] <= alpha[2]) {
            return Err(SimError::InvalidParameter(format!(
                "alpha components must be ascending, got {alpha:?}"
            )));
        }
        Ok(Self { rule_l, rule_h, alpha })
    }

    /// Calibrates the three alpha thresholds from a fuzzy saturation flow
    /// given in vehicles per hour.
    pub fn from_saturation(s: TriangularFuzzy, rule_l: RuleTable, rule_h: RuleTable) -> Result<Self> {
        let per_step = s.scale(1.0 / 3600.0)?;
        let mut alpha = [0.0; 3];
        for (a, s_step) in alpha.iter_mut().zip(per_step.components()) {
            *a = alpha_for_saturation(
                rule_l.v_max(),
                rule_l.g_stat(),
                rule_h.v_max(),
                rule_h.g_stat(),
                s_step,
            )?;
        }
        Self::new(rule_l, rule_h, alpha)
    }

    pub fn rule_l(&self) -> &RuleTable {
        &self.rule_l
    }

    pub fn rule_h(&self) -> &RuleTable {
        &self.rule_h
    }

    pub fn alpha(&self) -> [f64; 3] {
        self.alpha
    }

    /// Saturation flow each component targets, vehicles per step.
    pub fn saturation_per_component(&self) -> [f64; 3] {
        self.alpha.map(|a| {
            saturation_of_alpha(
                self.rule_l.v_max(),
                self.rule_l.g_stat(),
                self.rule_h.v_max(),
                self.rule_h.g_stat(),
                a,
            )
        })
    }
}

/// Position of `x` rescaled between the auxiliary bounds, in [0, 1].
/// The degenerate case `x_h == x_l` (which forces `x == x_l`) maps to 0, so
/// the selection rule picks the high rule and the state un-degenerates.
pub fn normalized_position(x: i64, x_l: i64, x_h: i64) -> Result<f64> {
    if x < x_l || x > x_h {
        return Err(SimError::BoundViolation { x, lo: x_l, hi: x_h });
    }
    if x_h == x_l {
        Ok(0.0)
    } else {
        Ok((x - x_l) as f64 / (x_h - x_l) as f64)
    }
}

/// Rule evaluations per vehicle per step: the two auxiliary channels plus
/// the three components.
pub const OPS_PER_VEHICLE_STEP: u64 = 5;

/// Full state of one fuzzy simulation.
#[derive(Debug, Clone)]
pub struct FuzzyState {
    ch_l: Channel,
    ch_h: Channel,
    ch_m: [Channel; 3],
    t: u64,
    ordering_warned: bool,
    clamped: u64,
}

impl FuzzyState {
    /// All five channels start from the same standing configuration.
    pub fn from_positions(positions: Vec<i64>, halt0: &HaltSet) -> Result<Self> {
        Ok(Self::from_channel(Channel::from_positions(positions, halt0)?))
    }

    /// Builds the five channels from one prepared channel (used for rings).
    pub fn from_channel(ch: Channel) -> Self {
        Self {
            ch_l: ch.clone(),
            ch_h: ch.clone(),
            ch_m: [ch.clone(), ch.clone(), ch],
            t: 0,
            ordering_warned: false,
            clamped: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn vehicle_count(&self) -> usize {
        self.ch_l.len()
    }

    pub fn channel_l(&self) -> &Channel {
        &self.ch_l
    }

    pub fn channel_h(&self) -> &Channel {
        &self.ch_h
    }

    pub fn component(&self, m: usize) -> &Channel {
        &self.ch_m[m]
    }

    /// One synchronous step: advance the auxiliary trajectories with their
    /// rules, then update each component with the rule selected by comparing
    /// its pre-step normalized position against that component's alpha.
    pub fn step(&mut self, cal: &Calibration, schedules: &[SignalSchedule]) -> Result<()> {
        let halt = active_halt_cells(schedules, self.t);
        self.step_with(cal, |ch, step, f| ch.advance(&halt, step, f))
    }

    /// Same update on a periodic ring without signals.
    pub fn step_ring(&mut self, cal: &Calibration, ring_cells: i64) -> Result<()> {
        self.step_with(cal, |ch, step, f| ch.advance_ring(ring_cells, step, f))
    }

    fn step_with<A>(&mut self, cal: &Calibration, mut advance: A) -> Result<()>
    where
        A: FnMut(
            &mut Channel,
            u64,
            &mut dyn FnMut(usize, i64, i64, i64) -> Result<i64>,
        ) -> Result<()>,
    {
        let t = self.t;
        let pre_l = self.ch_l.positions().to_vec();
        let pre_h = self.ch_h.positions().to_vec();

        advance(&mut self.ch_l, t, &mut |_, v, g, pg| cal.rule_l.velocity(v, g, pg))?;
        advance(&mut self.ch_h, t, &mut |_, v, g, pg| cal.rule_h.velocity(v, g, pg))?;

        let next_l = self.ch_l.positions();
        let next_h = self.ch_h.positions();
        for m in 0..3 {
            let alpha = cal.alpha[m];
            let ch = &mut self.ch_m[m];
            let pre_m = ch.positions().to_vec();
            let mut use_high = Vec::with_capacity(ch.len());
            for i in 0..ch.len() {
                let xbar = normalized_position(pre_m[i], pre_l[i], pre_h[i])?;
                use_high.push(xbar <= alpha);
            }
            let clamped = &mut self.clamped;
            advance(ch, t, &mut |i, v, g, pg| {
                let raw = if use_high[i] {
                    cal.rule_h.velocity(v, g, pg)?
                } else {
                    cal.rule_l.velocity(v, g, pg)?
                };
                // keep the component between its auxiliary trajectories;
                // both clamps stay within the gap, so no collision can result
                let bounded = raw.max(next_l[i] - pre_m[i]).min(next_h[i] - pre_m[i]);
                if bounded != raw {
                    *clamped += 1;
                }
                Ok(bounded)
            })?;
        }

        // bounding invariant: every component stays between the auxiliaries
        for m in 0..3 {
            for i in 0..self.ch_m[m].len() {
                let x = self.ch_m[m].positions()[i];
                let lo = self.ch_l.positions()[i];
                let hi = self.ch_h.positions()[i];
                if x < lo || x > hi {
                    return Err(SimError::BoundViolation { x, lo, hi });
                }
            }
        }
        // component ordering is empirical, not guaranteed; report once
        if !self.ordering_warned {
            for i in 0..self.ch_m[0].len() {
                let (a, b, c) = (
                    self.ch_m[0].positions()[i],
                    self.ch_m[1].positions()[i],
                    self.ch_m[2].positions()[i],
                );
                if !(a <= b && b <= c) {
                    warn!(
                        "component ordering violated at step {} vehicle {i}: {a}, {b}, {c}",
                        t + 1
                    );
                    self.ordering_warned = true;
                    break;
                }
            }
        }
        self.t += 1;
        Ok(())
    }

    /// True if a component-ordering violation was observed at any step.
    pub fn ordering_violated(&self) -> bool {
        self.ordering_warned
    }

    /// Number of component velocity updates adjusted to stay within the
    /// auxiliary bounds.
    pub fn clamp_events(&self) -> u64 {
        self.clamped
    }

    fn snapshot_channels(&self) -> Vec<&Channel> {
        vec![&self.ch_l, &self.ch_h, &self.ch_m[0], &self.ch_m[1], &self.ch_m[2]]
    }
}

/// Channel names used in fuzzy trajectory logs, auxiliaries first.
pub const FUZZY_CHANNEL_NAMES: [&str; 5] = ["L", "H", "m1", "m2", "m3"];

/// Runs the fuzzy engine over a scenario, recording every step of all five
/// channels. Deterministic: identical inputs produce identical logs.
pub fn run_fuzzy(scenario: &Scenario, cal: &Calibration) -> Result<TrajectoryLog> {
    let schedules = scenario.schedules()?;
    let positions = scenario.initial_positions()?;
    run_fuzzy_over(positions, &schedules, scenario.steps, cal, Some(scenario))
}

/// Runs the fuzzy engine from explicit initial positions and schedules.
pub fn run_fuzzy_over(
    positions: Vec<i64>,
    schedules: &[SignalSchedule],
    steps: u64,
    cal: &Calibration,
    scenario: Option<&Scenario>,
) -> Result<TrajectoryLog> {
    let halt0 = active_halt_cells(schedules, 0);
    let mut state = FuzzyState::from_positions(positions, &halt0)?;
    let n = state.vehicle_count();
    let mut log = TrajectoryLog::new(
        FUZZY_CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        LogMetadata {
            model: "fuzzy".to_string(),
            parameters: json!({
                "rule_l": cal.rule_l().name(),
                "rule_h": cal.rule_h().name(),
                "alpha": cal.alpha(),
                "steps": steps,
                "scenario": scenario.map(|s| serde_json::to_value(s).unwrap()),
            }),
            seed: None,
            rng: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    );
    log.record(&state.snapshot_channels());
    for _ in 0..steps {
        state.step(cal, schedules)?;
        log.record(&state.snapshot_channels());
        log.op_count += OPS_PER_VEHICLE_STEP * n as u64;
    }
    log.ordering_violated = state.ordering_violated();
    if let serde_json::Value::Object(map) = &mut log.metadata.parameters {
        map.insert("clamp_events".to_string(), json!(state.clamp_events()));
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r1r2() -> (RuleTable, RuleTable) {
        (RuleTable::builtin("R1").unwrap(), RuleTable::builtin("R2").unwrap())
    }

    #[test]
    fn saturation_endpoints() {
        assert_eq!(saturation_of_alpha(2, 4, 2, 3, 0.0), 0.4);
        assert_eq!(saturation_of_alpha(2, 4, 2, 3, 1.0), 0.5);
        // alpha = 0.43 reproduces the median component of the target flow
        let s = saturation_of_alpha(2, 4, 2, 3, 0.43);
        assert!((s - 2.0 / (4.0 - 0.43 + 1.0)).abs() < 1e-12);
        assert!((s - 0.4376).abs() < 5e-5);
        assert!((s * 3600.0 - 1575.0).abs() < 2.0);
    }

    #[test]
    fn calibrate_reference_flow() {
        let (r1, r2) = r1r2();
        let s = TriangularFuzzy::new(1503.0, 1575.0, 1638.0).unwrap();
        let cal = Calibration::from_saturation(s, r1, r2).unwrap();
        let a = cal.alpha();
        assert!((a[0] - 0.2096).abs() < 5e-4, "{a:?}");
        assert!((a[1] - 0.4286).abs() < 5e-4);
        assert!((a[2] - 0.6044).abs() < 5e-4);
        // matches the published rounded values
        assert!((a[0] - 0.21).abs() < 0.01);
        assert!((a[1] - 0.43).abs() < 0.01);
        assert!((a[2] - 0.60).abs() < 0.01);
    }

    #[test]
    fn calibrate_crisp_endpoints() {
        let (r1, r2) = r1r2();
        let s = TriangularFuzzy::crisp(1440.0).unwrap();
        let cal = Calibration::from_saturation(s, r1.clone(), r2.clone()).unwrap();
        for a in cal.alpha() {
            assert!(a.abs() < 1e-12);
        }
        let s = TriangularFuzzy::crisp(1900.0).unwrap();
        assert!(matches!(
            Calibration::from_saturation(s, r1, r2),
            Err(SimError::OutOfRange { .. })
        ));
    }

    #[test]
    fn for_r1_r2_calibration_matches_closed_form() {
        // with (v, g) = (2, 4) and (2, 3) the inverse reduces to 5 - 2/s
        for k in 0..100 {
            let s = 0.4 + 0.1 * (k as f64 + 0.5) / 100.0;
            let a = alpha_for_saturation(2, 4, 2, 3, s).unwrap();
            assert!((a - (5.0 - 2.0 / s)).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_alpha_saturation() {
        for k in 0..100 {
            let s = 0.4 + 0.1 * k as f64 / 99.0;
            let a = alpha_for_saturation(2, 4, 2, 3, s).unwrap();
            assert!((saturation_of_alpha(2, 4, 2, 3, a) - s).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_position_cases() {
        assert_eq!(normalized_position(12, 10, 14).unwrap(), 0.5);
        assert_eq!(normalized_position(10, 10, 10).unwrap(), 0.0);
        assert_eq!(normalized_position(14, 10, 14).unwrap(), 1.0);
        assert!(matches!(
            normalized_position(9, 10, 14),
            Err(SimError::BoundViolation { .. })
        ));
        assert!(matches!(
            normalized_position(15, 10, 14),
            Err(SimError::BoundViolation { .. })
        ));
    }

    #[test]
    fn calibration_rejects_misordered_rules() {
        let (r1, r2) = r1r2();
        assert!(Calibration::new(r2, r1, [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn alpha_one_tracks_high_channel_exactly() {
        let (r1, r2) = r1r2();
        let cal = Calibration::new(r1, r2, [1.0, 1.0, 1.0]).unwrap();
        let halt0 = HaltSet::new();
        let positions: Vec<i64> = (0..10).map(|i| 30 - 2 * i).collect();
        let mut state = FuzzyState::from_positions(positions, &halt0).unwrap();
        for _ in 0..200 {
            state.step(&cal, &[]).unwrap();
            assert_eq!(state.component(0).positions(), state.channel_h().positions());
            assert_eq!(state.component(1).positions(), state.channel_h().positions());
            assert_eq!(state.component(2).positions(), state.channel_h().positions());
        }
    }

    #[test]
    fn free_vehicle_reaches_two_cells_per_step_in_all_channels() {
        let (r1, r2) = r1r2();
        let cal = Calibration::new(r1, r2, [0.21, 0.43, 0.60]).unwrap();
        let mut state = FuzzyState::from_positions(vec![0], &HaltSet::new()).unwrap();
        for _ in 0..10 {
            state.step(&cal, &[]).unwrap();
        }
        // after the acceleration transient every channel cruises at v_max = 2
        for _ in 0..5 {
            let before: Vec<i64> = (0..3).map(|m| state.component(m).positions()[0]).collect();
            let l_before = state.channel_l().positions()[0];
            state.step(&cal, &[]).unwrap();
            for m in 0..3 {
                assert_eq!(state.component(m).positions()[0] - before[m], 2);
            }
            assert_eq!(state.channel_l().positions()[0] - l_before, 2);
        }
    }

    #[test]
    fn empty_road_runs_to_empty_log() {
        let (r1, r2) = r1r2();
        let cal = Calibration::new(r1, r2, [0.2, 0.4, 0.6]).unwrap();
        let log = run_fuzzy_over(vec![], &[], 10, &cal, None).unwrap();
        assert_eq!(log.op_count, 0);
        assert_eq!(log.steps(), 10);
        assert_eq!(log.vehicle_count(), 0);
    }

    #[test]
    fn op_count_is_five_t_n() {
        let (r1, r2) = r1r2();
        let cal = Calibration::new(r1, r2, [0.2, 0.4, 0.6]).unwrap();
        let positions: Vec<i64> = (0..7).map(|i| 40 - 3 * i).collect();
        let log = run_fuzzy_over(positions, &[], 25, &cal, None).unwrap();
        assert_eq!(log.op_count, 5 * 25 * 7);
    }

    #[test]
    fn run_is_deterministic() {
        let (r1, r2) = r1r2();
        let cal = Calibration::new(r1, r2, [0.21, 0.43, 0.60]).unwrap();
        let schedules = vec![SignalSchedule::new(50, 60, 0, 30).unwrap()];
        let positions: Vec<i64> = (0..12).map(|i| 49 - i).collect();
        let a = run_fuzzy_over(positions.clone(), &schedules, 300, &cal, None).unwrap();
        let b = run_fuzzy_over(positions, &schedules, 300, &cal, None).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.op_count, b.op_count);
    }
}
