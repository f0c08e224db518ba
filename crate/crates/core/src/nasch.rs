//! Stochastic NaSch baseline: a single run draws one uniform number per
//! vehicle per step (vehicle-index order) to pick between the NSH and NSL
//! sub-rules; an ensemble repeats the run K times with per-run child seeds
//! derived from a master seed and aggregates metric samples.
//!
//! The generator is ChaCha8 seeded per run via a SplitMix64 hash of
//! (master_seed, run index); both are fixed, documented and portable, so a
//! given configuration is bit-reproducible across platforms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channel::{active_halt_cells, Channel, HaltSet, SignalSchedule};
use crate::error::{Result, SimError};
use crate::metrics::{LogMetadata, TrajectoryLog};
use crate::rules::{nasch_velocity, NaschParams};
use crate::scenario::Scenario;

/// Name of the per-run generator, recorded in output metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic child seed for run `k` of an ensemble.
pub fn child_seed(master_seed: u64, k: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(k.wrapping_add(1)))
}

/// Ensemble dimensions and seeding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub params: NaschParams,
    pub runs: u64,
    pub steps: u64,
    pub master_seed: u64,
}

impl EnsembleConfig {
    pub fn new(params: NaschParams, runs: u64, steps: u64, master_seed: u64) -> Result<Self> {
        if runs < 1 || steps < 1 {
            return Err(SimError::InvalidParameter(format!(
                "need runs >= 1 and steps >= 1, got runs={runs}, steps={steps}"
            )));
        }
        Ok(Self { params, runs, steps, master_seed })
    }
}

/// One synchronous NaSch step. Draws exactly one uniform number per vehicle,
/// in vehicle-index order, and returns the number of draws.
pub fn step_nasch(
    ch: &mut Channel,
    params: &NaschParams,
    halt: &HaltSet,
    t: u64,
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    let mut draws = 0u64;
    let p = params.p;
    ch.advance(halt, t, |_, v_prev, gap, _| {
        let xi: f64 = rng.random();
        draws += 1;
        Ok(nasch_velocity(params, v_prev, gap, xi < p))
    })?;
    Ok(draws)
}

/// Ring variant of `step_nasch`.
pub fn step_nasch_ring(
    ch: &mut Channel,
    params: &NaschParams,
    ring_cells: i64,
    t: u64,
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    let mut draws = 0u64;
    let p = params.p;
    ch.advance_ring(ring_cells, t, |_, v_prev, gap, _| {
        let xi: f64 = rng.random();
        draws += 1;
        Ok(nasch_velocity(params, v_prev, gap, xi < p))
    })?;
    Ok(draws)
}

/// Streaming consumer of one run: sees the initial state and every post-step
/// state, then reduces to metric samples.
pub trait RunObserver {
    fn observe(&mut self, t: u64, ch: &Channel);
    fn finish(&mut self) -> Result<Vec<f64>>;
}

/// One seeded NaSch run from explicit initial positions. Returns the total
/// number of random draws (= steps * vehicle count).
pub fn run_nasch<O: RunObserver>(
    positions: Vec<i64>,
    schedules: &[SignalSchedule],
    params: &NaschParams,
    steps: u64,
    seed: u64,
    observer: &mut O,
) -> Result<u64> {
    let halt0 = active_halt_cells(schedules, 0);
    let mut ch = Channel::from_positions(positions, &halt0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = 0u64;
    observer.observe(0, &ch);
    for t in 0..steps {
        let halt = active_halt_cells(schedules, t);
        draws += step_nasch(&mut ch, params, &halt, t, &mut rng)?;
        observer.observe(t + 1, &ch);
    }
    Ok(draws)
}

/// Observer that records the full trajectory.
pub struct FullLogObserver {
    pub log: TrajectoryLog,
}

impl FullLogObserver {
    pub fn new(params: &NaschParams, seed: u64) -> Self {
        Self {
            log: TrajectoryLog::new(
                vec!["nasch".to_string()],
                LogMetadata {
                    model: "nasch".to_string(),
                    parameters: json!({ "v_max": params.v_max, "p": params.p }),
                    seed: Some(seed),
                    rng: Some(RNG_ALGORITHM.to_string()),
                    version: env!("CARGO_PKG_VERSION").to_string(),
                },
            ),
        }
    }
}

impl RunObserver for FullLogObserver {
    fn observe(&mut self, _t: u64, ch: &Channel) {
        self.log.record(&[ch]);
    }

    fn finish(&mut self) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

/// One seeded run recorded as a full trajectory log.
pub fn run_nasch_log(
    positions: Vec<i64>,
    schedules: &[SignalSchedule],
    params: &NaschParams,
    steps: u64,
    seed: u64,
) -> Result<TrajectoryLog> {
    let mut obs = FullLogObserver::new(params, seed);
    let draws = run_nasch(positions, schedules, params, steps, seed, &mut obs)?;
    obs.log.op_count = draws;
    Ok(obs.log)
}

/// Result of a K-run ensemble: one metric-sample vector per run plus exact
/// operation accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub samples: Vec<Vec<f64>>,
    pub op_count: u64,
    pub draw_count: u64,
    pub runs: u64,
    pub steps: u64,
    pub vehicles: usize,
    pub master_seed: u64,
    pub rng: String,
}

/// Runs the ensemble from explicit initial positions. Run `k` uses
/// `child_seed(master_seed, k)`; results are indexed by run, so execution
/// order can never affect the output.
pub fn run_ensemble_with<O, F>(
    positions: &[i64],
    schedules: &[SignalSchedule],
    cfg: &EnsembleConfig,
    mut make_observer: F,
) -> Result<Ensemble>
where
    O: RunObserver,
    F: FnMut(u64) -> O,
{
    let mut samples = Vec::with_capacity(cfg.runs as usize);
    let mut draw_count = 0u64;
    for k in 0..cfg.runs {
        let mut obs = make_observer(k);
        draw_count += run_nasch(
            positions.to_vec(),
            schedules,
            &cfg.params,
            cfg.steps,
            child_seed(cfg.master_seed, k),
            &mut obs,
        )?;
        samples.push(obs.finish()?);
    }
    Ok(Ensemble {
        samples,
        op_count: cfg.runs * cfg.steps * positions.len() as u64,
        draw_count,
        runs: cfg.runs,
        steps: cfg.steps,
        vehicles: positions.len(),
        master_seed: cfg.master_seed,
        rng: RNG_ALGORITHM.to_string(),
    })
}

/// Scenario-level ensemble entry point.
pub fn run_ensemble<O, F>(
    scenario: &Scenario,
    cfg: &EnsembleConfig,
    make_observer: F,
) -> Result<Ensemble>
where
    O: RunObserver,
    F: FnMut(u64) -> O,
{
    let positions = scenario.initial_positions()?;
    let schedules = scenario.schedules()?;
    run_ensemble_with(&positions, &schedules, cfg, make_observer)
}

/// Nearest-rank percentile: the ceil(q/100 * n)-th order statistic of the
/// sorted sample (q = 0 maps to the minimum).
pub fn percentiles(samples: &[f64], q_list: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(SimError::EmptySample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable samples"));
    let n = sorted.len();
    Ok(q_list
        .iter()
        .map(|&q| {
            let rank = (q / 100.0 * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::HaltSet;

    struct MeanSpeed {
        sum: i64,
        steps: u64,
    }

    impl RunObserver for MeanSpeed {
        fn observe(&mut self, t: u64, ch: &Channel) {
            if t > 0 {
                self.sum += ch.velocities().iter().sum::<i64>();
                self.steps += 1;
            }
        }
        fn finish(&mut self) -> Result<Vec<f64>> {
            Ok(vec![self.sum as f64 / self.steps as f64])
        }
    }

    #[test]
    fn p_zero_matches_pure_nsh() {
        let params = NaschParams::new(2, 0.0).unwrap();
        let mut ch = Channel::from_positions(vec![10, 5, 0], &HaltSet::new()).unwrap();
        let mut reference = ch.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in 0..50 {
            step_nasch(&mut ch, &params, &HaltSet::new(), t, &mut rng).unwrap();
            reference
                .advance(&HaltSet::new(), t, |_, v, g, _| Ok(nasch_velocity(&params, v, g, false)))
                .unwrap();
            assert_eq!(ch, reference);
        }
    }

    #[test]
    fn p_one_matches_pure_nsl() {
        let params = NaschParams::new(2, 1.0).unwrap();
        let mut ch = Channel::from_positions(vec![10, 5, 0], &HaltSet::new()).unwrap();
        let mut reference = ch.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in 0..50 {
            step_nasch(&mut ch, &params, &HaltSet::new(), t, &mut rng).unwrap();
            reference
                .advance(&HaltSet::new(), t, |_, v, g, _| Ok(nasch_velocity(&params, v, g, true)))
                .unwrap();
            assert_eq!(ch, reference);
        }
    }

    #[test]
    fn free_flow_speed_converges() {
        let params = NaschParams::new(2, 0.2).unwrap();
        let mut obs = MeanSpeed { sum: 0, steps: 0 };
        run_nasch(vec![0], &[], &params, 10_000, 42, &mut obs).unwrap();
        let mean = obs.finish().unwrap()[0];
        assert!((mean - 1.8).abs() < 0.03, "mean free-flow speed {mean}");
    }

    #[test]
    fn one_draw_per_vehicle_per_step() {
        let params = NaschParams::new(2, 0.5).unwrap();
        struct Noop;
        impl RunObserver for Noop {
            fn observe(&mut self, _: u64, _: &Channel) {}
            fn finish(&mut self) -> Result<Vec<f64>> {
                Ok(Vec::new())
            }
        }
        let positions: Vec<i64> = (0..6).map(|i| 20 - 3 * i).collect();
        let draws = run_nasch(positions, &[], &params, 37, 5, &mut Noop).unwrap();
        assert_eq!(draws, 37 * 6);
    }

    #[test]
    fn ensemble_reproducible_and_counts_ops() {
        let params = NaschParams::new(2, 0.3).unwrap();
        let cfg = EnsembleConfig::new(params, 5, 40, 99).unwrap();
        let positions: Vec<i64> = (0..4).map(|i| 15 - 2 * i).collect();
        let make = |_k| MeanSpeed { sum: 0, steps: 0 };
        let a = run_ensemble_with(&positions, &[], &cfg, make).unwrap();
        let b = run_ensemble_with(&positions, &[], &cfg, make).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.op_count, 5 * 40 * 4);
        assert_eq!(a.draw_count, a.op_count);
        assert_eq!(a.samples.len(), 5);
    }

    #[test]
    fn degenerate_p_has_zero_variance() {
        for p in [0.0, 1.0] {
            let params = NaschParams::new(2, p).unwrap();
            let cfg = EnsembleConfig::new(params, 8, 60, 3).unwrap();
            let positions: Vec<i64> = (0..5).map(|i| 30 - 4 * i).collect();
            let ens =
                run_ensemble_with(&positions, &[], &cfg, |_| MeanSpeed { sum: 0, steps: 0 })
                    .unwrap();
            let first = ens.samples[0][0];
            assert!(ens.samples.iter().all(|s| s[0] == first));
        }
    }

    #[test]
    fn nearest_rank_percentiles() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let out = percentiles(&samples, &[50.0, 5.0, 95.0, 0.0, 100.0]).unwrap();
        assert_eq!(out, vec![50.0, 5.0, 95.0, 1.0, 100.0]);
        assert_eq!(out[2] - out[1], 90.0); // spread p95 - p05
        assert_eq!(percentiles(&[7.0], &[1.0, 50.0, 99.0]).unwrap(), vec![7.0; 3]);
        assert!(matches!(percentiles(&[], &[50.0]), Err(SimError::EmptySample)));
    }

    #[test]
    fn child_seeds_distinct() {
        let seeds: std::collections::BTreeSet<u64> =
            (0..1000).map(|k| child_seed(123, k)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }
}
