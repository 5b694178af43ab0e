//! Per-timestep threshold calibration against segmented error bounds.
//!
//! Timesteps are split into three segments with error bounds `xi - tau`,
//! `xi` and `xi + tau`. Each timestep then gets the smallest (most
//! aggressive) grid threshold whose relative L1 error against the dense
//! output stays within its bound, with the skip mask carried forward under
//! the thresholds already chosen.

use serde::{Deserialize, Serialize};

use crate::attention::{dense_attention, AttentionEngine, SkipMode, TileGeometry};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::operand::Trajectory;
use crate::ordering::OrderingStrategy;
use crate::skip::SkipMask;

/// One skip threshold per timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdSchedule(Vec<f64>);

impl ThresholdSchedule {
    pub fn new(eps: Vec<f64>) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::param("schedule must have at least one timestep"));
        }
        if let Some(bad) = eps.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::param(format!("schedule thresholds must be finite and >= 0, got {bad}")));
        }
        Ok(Self(eps))
    }

    pub fn constant(epsilon: f64, steps: usize) -> Result<Self> {
        Self::new(vec![epsilon; steps])
    }

    pub fn eps(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ThresholdSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ThresholdSchedule> for Vec<f64> {
    fn from(s: ThresholdSchedule) -> Self {
        s.0
    }
}

/// Base bound `xi`, segment offset `tau` and timestep count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundSpec {
    pub xi: f64,
    pub tau: f64,
    pub steps: usize,
}

impl ErrorBoundSpec {
    pub fn new(xi: f64, tau: f64, steps: usize) -> Result<Self> {
        let spec = Self { xi, tau, steps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi.is_finite() && self.tau.is_finite()) || self.tau < 0.0 || self.xi - self.tau <= 0.0 {
            return Err(Error::param(format!(
                "error bounds need tau >= 0 and xi - tau > 0 (xi={}, tau={})",
                self.xi, self.tau
            )));
        }
        if self.steps == 0 {
            return Err(Error::param("error bounds need at least one timestep"));
        }
        Ok(())
    }
}

/// `xi - tau` for `t < floor(T/3)`, `xi` up to `floor(2T/3)`, `xi + tau` after.
pub fn segment_bounds(spec: &ErrorBoundSpec) -> Vec<f64> {
    let t_len = spec.steps;
    let (first, second) = (t_len / 3, 2 * t_len / 3);
    (0..t_len)
        .map(|t| {
            if t < first {
                spec.xi - spec.tau
            } else if t < second {
                spec.xi
            } else {
                spec.xi + spec.tau
            }
        })
        .collect()
}

/// `sum |sparse - dense| / sum |dense|` over all entries.
pub fn relative_l1_error(sparse: &Matrix<f64>, dense: &Matrix<f64>) -> Result<f64> {
    relative_l1_error_slices(std::slice::from_ref(sparse), std::slice::from_ref(dense))
}

/// Relative L1 error over several matrices treated as one concatenated tensor.
pub fn relative_l1_error_slices(sparse: &[Matrix<f64>], dense: &[Matrix<f64>]) -> Result<f64> {
    if sparse.len() != dense.len() {
        return Err(Error::shape(format!("{} outputs vs {} references", sparse.len(), dense.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, o) in sparse.iter().zip(dense) {
        if s.shape() != o.shape() {
            return Err(Error::shape(format!("{:?} output vs {:?} reference", s.shape(), o.shape())));
        }
        num += s.as_slice().iter().zip(o.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        den += o.l1_norm();
    }
    if den == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(num / den)
}

/// Outcome of a calibration sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub schedule: ThresholdSchedule,
    pub bounds: Vec<f64>,
    /// Error of the chosen threshold at each timestep.
    pub eta: Vec<f64>,
    /// Timesteps where no grid value met the bound.
    pub flagged: Vec<usize>,
    /// `sweep[t][g]`: error at timestep `t` with grid value `g`.
    pub sweep: Vec<Vec<f64>>,
}

impl Calibration {
    /// Timesteps whose sweep error increased with a larger threshold.
    pub fn non_monotone_steps(&self) -> Vec<usize> {
        self.sweep
            .iter()
            .enumerate()
            .filter(|(_, row)| row.windows(2).any(|w| w[1] > w[0]))
            .map(|(t, _)| t)
            .collect()
    }
}

/// Dense oracle outputs of every slice of every timestep.
pub fn dense_outputs(trajectory: &Trajectory, execution: Execution) -> Vec<Vec<Matrix<f64>>> {
    trajectory
        .steps()
        .iter()
        .map(|step| execution.map_indices(step.len(), |s| dense_attention(&step[s])))
        .collect()
}

pub fn calibrate(
    trajectory: &Trajectory,
    geometry: TileGeometry,
    grid: &[f64],
    spec: &ErrorBoundSpec,
    ordering: OrderingStrategy,
) -> Result<Calibration> {
    calibrate_with(&AttentionEngine::new(geometry, ordering), trajectory, grid, spec)
}

/// Calibrates with an explicit engine. The whole grid is evaluated at every
/// timestep so the sweep can be inspected; the chosen threshold's mask
/// updates are then committed before moving on.
pub fn calibrate_with(
    engine: &AttentionEngine,
    trajectory: &Trajectory,
    grid: &[f64],
    spec: &ErrorBoundSpec,
) -> Result<Calibration> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::param("calibration grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("calibration grid must be strictly ascending"));
    }
    for &eps in grid {
        SkipMode::qk(eps)?;
    }
    if spec.steps != trajectory.len() {
        return Err(Error::shape(format!(
            "bounds cover {} timesteps, trajectory has {}",
            spec.steps,
            trajectory.len()
        )));
    }
    let geom = engine.geometry();
    geom.check_sequence(trajectory.n())?;

    let bounds = segment_bounds(spec);
    let dense = dense_outputs(trajectory, engine.execution());
    let mut mask = SkipMask::new(trajectory.layers(), trajectory.heads(), geom.ti(), geom.tj());
    let mut eps = Vec::with_capacity(trajectory.len());
    let mut eta = Vec::with_capacity(trajectory.len());
    let mut flagged = Vec::new();
    let mut sweep = Vec::with_capacity(trajectory.len());

    for t in 0..trajectory.len() {
        let mut errors = Vec::with_capacity(grid.len());
        let mut chosen: Option<(usize, SkipMask)> = None;
        for (g, &candidate) in grid.iter().enumerate() {
            let mut trial = mask.clone();
            let step = engine.run_step(trajectory.step(t), SkipMode::Qk { epsilon: candidate }, Some(&mut trial))?;
            let err = relative_l1_error_slices(&step.outputs, &dense[t])?;
            errors.push(err);
            if chosen.is_none() && err <= bounds[t] {
                chosen = Some((g, trial));
            }
        }
        let (g, next) = match chosen {
            Some(c) => c,
            None => {
                flagged.push(t);
                let last = grid.len() - 1;
                let mut trial = mask.clone();
                engine.run_step(trajectory.step(t), SkipMode::Qk { epsilon: grid[last] }, Some(&mut trial))?;
                (last, trial)
            }
        };
        mask = next;
        eps.push(grid[g]);
        eta.push(errors[g]);
        sweep.push(errors);
    }

    Ok(Calibration {
        schedule: ThresholdSchedule::new(eps)?,
        bounds,
        eta,
        flagged,
        sweep,
    })
}
