use super::geometry::TileGeometry;
use super::tiled::{AttentionEngine, SkipMode, TileReport, TileStatus, TiledOutput};
use crate::calibration::ThresholdSchedule;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::operand::{AttentionOperand, Trajectory};
use crate::ordering::OrderingStrategy;
use crate::skip::{SkipMask, TileMask};

/// All (layer, head) slices of one timestep.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub outputs: Vec<Matrix<f64>>,
    /// Sum of the per-slice reports.
    pub report: TileReport,
    pub slice_reports: Vec<TileReport>,
    pub statuses: Vec<Vec<TileStatus>>,
}

/// Outputs and reports of a sequential run with one persistent skip mask.
#[derive(Clone, Debug)]
pub struct SequenceRun {
    /// `outputs[t][slice]`.
    pub outputs: Vec<Vec<Matrix<f64>>>,
    pub reports: Vec<TileReport>,
    pub mask: SkipMask,
}

impl SequenceRun {
    pub fn total_report(&self) -> TileReport {
        self.reports.iter().copied().sum()
    }
}

impl AttentionEngine {
    /// Evaluates every slice of one timestep. `mask` is required in QK mode.
    pub fn run_step(
        &self,
        ops: &[AttentionOperand],
        mode: SkipMode,
        mask: Option<&mut SkipMask>,
    ) -> Result<StepOutput> {
        let geom = self.geometry();
        let mut scratch;
        let masks: &mut [TileMask] = match (mode.uses_mask(), mask) {
            (true, Some(mask)) => {
                if mask.slices().len() != ops.len() {
                    return Err(Error::shape(format!(
                        "mask has {} slices, step has {}",
                        mask.slices().len(),
                        ops.len()
                    )));
                }
                mask.slices_mut()
            }
            (true, None) => return Err(Error::param("QK-skip mode requires a skip mask")),
            (false, _) => {
                scratch = vec![TileMask::new(geom.ti(), geom.tj()); ops.len()];
                &mut scratch
            }
        };
        let results: Vec<Result<TiledOutput>> = self
            .execution()
            .map_zip_mut(ops, masks, |_, op, mask| {
                self.run(op, mode, mode.uses_mask().then_some(mask))
            });
        let mut step = StepOutput {
            outputs: Vec::with_capacity(ops.len()),
            report: TileReport::default(),
            slice_reports: Vec::with_capacity(ops.len()),
            statuses: Vec::with_capacity(ops.len()),
        };
        for r in results {
            let r = r?;
            step.report += r.report;
            step.slice_reports.push(r.report);
            step.outputs.push(r.output);
            step.statuses.push(r.statuses);
        }
        Ok(step)
    }

    /// Runs every timestep in order with a single persistent mask, calling
    /// `observe` after each step with the step result and the mask state.
    pub fn run_sequence_observed(
        &self,
        trajectory: &Trajectory,
        mode_at: impl Fn(usize) -> SkipMode,
        mut observe: impl FnMut(usize, &StepOutput, &SkipMask),
    ) -> Result<SequenceRun> {
        let geom = self.geometry();
        geom.check_sequence(trajectory.n())?;
        let mut mask = SkipMask::new(trajectory.layers(), trajectory.heads(), geom.ti(), geom.tj());
        let mut outputs = Vec::with_capacity(trajectory.len());
        let mut reports = Vec::with_capacity(trajectory.len());
        for t in 0..trajectory.len() {
            let step = self.run_step(trajectory.step(t), mode_at(t), Some(&mut mask))?;
            observe(t, &step, &mask);
            reports.push(step.report);
            outputs.push(step.outputs);
        }
        Ok(SequenceRun {
            outputs,
            reports,
            mask,
        })
    }

    /// QK-skip run with threshold `schedule[t]` at timestep `t`.
    pub fn run_sequence(&self, trajectory: &Trajectory, schedule: &ThresholdSchedule) -> Result<SequenceRun> {
        check_schedule(trajectory, schedule)?;
        self.run_sequence_observed(trajectory, |t| SkipMode::Qk { epsilon: schedule.eps()[t] }, |_, _, _| {})
    }
}

pub(crate) fn check_schedule(trajectory: &Trajectory, schedule: &ThresholdSchedule) -> Result<()> {
    if schedule.len() != trajectory.len() {
        return Err(Error::shape(format!(
            "schedule has {} thresholds for {} timesteps",
            schedule.len(),
            trajectory.len()
        )));
    }
    Ok(())
}

/// Sequential QK-skip run over a trajectory with a persistent skip mask.
pub fn run_timestep_sequence(
    trajectory: &Trajectory,
    geometry: TileGeometry,
    schedule: &ThresholdSchedule,
    ordering: OrderingStrategy,
) -> Result<SequenceRun> {
    AttentionEngine::new(geometry, ordering).run_sequence(trajectory, schedule)
}
