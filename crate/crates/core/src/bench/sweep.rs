use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::RunReport;
use crate::attention::{AttentionEngine, SkipMode, TileGeometry};
use crate::calibration::{dense_outputs, relative_l1_error_slices, ThresholdSchedule};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::harness::{generate_trajectory, TrajectoryConfig};
use crate::matrix::Matrix;
use crate::operand::Trajectory;
use crate::ordering::OrderingStrategy;

/// Median wall time of `reps` calls (at least one), on a monotonic clock.
pub fn median_seconds<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut times = Vec::with_capacity(reps.max(1));
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], last.expect("at least one repetition")))
}

/// Runs the whole trajectory sequentially `reps` times with one persistent
/// mask per run and reports the median wall time. `mode` fixes the mode and,
/// unless `schedule` is given, the threshold of every step. Errors are
/// measured against `dense` (per step, per slice) when provided.
pub fn measure_run(
    engine: &AttentionEngine,
    trajectory: &Trajectory,
    mode: SkipMode,
    schedule: Option<&ThresholdSchedule>,
    reps: usize,
    dense: Option<&[Vec<Matrix<f64>>]>,
) -> Result<RunReport> {
    mode.validate()?;
    if let Some(s) = schedule {
        if s.len() != trajectory.len() {
            return Err(Error::shape(format!(
                "schedule has {} thresholds for {} timesteps",
                s.len(),
                trajectory.len()
            )));
        }
    }
    let mode_at = |t: usize| match (mode, schedule) {
        (SkipMode::Dense, _) | (_, None) => mode,
        (SkipMode::Pv { .. }, Some(s)) => SkipMode::Pv { epsilon: s.eps()[t] },
        (SkipMode::Qk { .. }, Some(s)) => SkipMode::Qk { epsilon: s.eps()[t] },
    };
    let mut mask_sparsity = Vec::new();
    let (wall, run) = median_seconds(reps, || {
        mask_sparsity.clear();
        engine.run_sequence_observed(trajectory, mode_at, |_, _, mask| {
            mask_sparsity.push(mask.sparsity());
        })
    })?;
    let eta_per_t = match dense {
        Some(dense) => run
            .outputs
            .iter()
            .zip(dense)
            .map(|(out, reference)| relative_l1_error_slices(out, reference))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let total = run.total_report();
    let geom = engine.geometry();
    let epsilon = match schedule {
        Some(s) if s.eps().windows(2).any(|w| w[0] != w[1]) => None,
        Some(s) => s.eps().first().copied(),
        None => mode.epsilon(),
    };
    Ok(RunReport {
        mode: mode.name().to_string(),
        ordering: engine.ordering().to_string(),
        epsilon: if mode == SkipMode::Dense { None } else { epsilon },
        n: trajectory.n(),
        d: trajectory.d(),
        steps: trajectory.len(),
        layers: trajectory.layers(),
        heads: trajectory.heads(),
        h_q: geom.h_q(),
        h_k: geom.h_k(),
        sparsity_per_t: run.reports.iter().map(|r| r.sparsity()).collect(),
        mask_sparsity_per_t: if mode.uses_mask() {
            mask_sparsity
        } else {
            vec![0.0; trajectory.len()]
        },
        flops_performed: total.flops_performed,
        flops_dense_equivalent: total.flops_dense_equivalent,
        wall_seconds: wall,
        repetitions: reps.max(1),
        workers: workers(engine.execution()),
        eta_per_t,
        degenerate_rows: total.degenerate_rows,
    })
}

/// Threads available to a run under `execution`.
pub fn workers(execution: Execution) -> usize {
    #[cfg(feature = "parallel")]
    if execution.is_parallel() {
        return rayon::current_num_threads();
    }
    let _ = execution;
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    /// Flop sparsity of the final timestep.
    pub final_sparsity: f64,
    pub wall_seconds: f64,
    pub report: RunReport,
}

/// Runs the drift harness at each sequence length with a fixed mode.
pub fn length_sweep(
    base: &TrajectoryConfig,
    tile: (usize, usize),
    ns: &[usize],
    mode: SkipMode,
    ordering: OrderingStrategy,
    execution: Execution,
    reps: usize,
) -> Result<Vec<SweepPoint>> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("sequence lengths must be strictly ascending"));
    }
    ns.iter()
        .map(|&n| {
            let cfg = TrajectoryConfig { n, ..base.clone() };
            let traj = generate_trajectory(&cfg)?;
            let geom = TileGeometry::new(n, tile.0, tile.1)?;
            let engine = AttentionEngine::new(geom, ordering).with_execution(execution);
            let report = measure_run(&engine, &traj, mode, None, reps, None)?;
            Ok(SweepPoint {
                n,
                final_sparsity: report.sparsity_per_t.last().copied().unwrap_or(0.0),
                wall_seconds: report.wall_seconds,
                report,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub epsilon: f64,
    pub sparsity: f64,
    pub wall_seconds: f64,
    pub eta_final: f64,
    /// `1 - wall / dense_wall`.
    pub wall_reduction: f64,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffTable {
    pub baseline: RunReport,
    pub rows: Vec<TradeoffRow>,
}

/// One QK-skip run per threshold against a dense baseline on the same trajectory.
pub fn sparsity_runtime_tradeoff(
    engine: &AttentionEngine,
    trajectory: &Trajectory,
    epsilons: &[f64],
    reps: usize,
) -> Result<TradeoffTable> {
    let dense = dense_outputs(trajectory, engine.execution());
    let baseline = measure_run(engine, trajectory, SkipMode::Dense, None, reps, Some(&dense))?;
    let rows = epsilons
        .iter()
        .map(|&eps| {
            let report = measure_run(engine, trajectory, SkipMode::qk(eps)?, None, reps, Some(&dense))?;
            Ok(TradeoffRow {
                epsilon: eps,
                sparsity: report.sparsity(),
                wall_seconds: report.wall_seconds,
                eta_final: report.eta_final(),
                wall_reduction: report.wall_reduction_vs(&baseline)?,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TradeoffTable { baseline, rows })
}
