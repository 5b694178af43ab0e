use serde::{Deserialize, Serialize};

use crate::attention::{AttentionEngine, SkipMode, TileStatus};
use crate::error::{Error, Result};
use crate::operand::Trajectory;

/// Persistence of skip-condition satisfaction from timestep `t` to `t + delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistencePoint {
    pub t: usize,
    pub delta: usize,
    /// Fraction of tiles firing at `t` that also fire at `t + delta`;
    /// `None` when nothing fires at `t`.
    pub persisted: Option<f64>,
    /// Fraction of all tiles firing at `t + delta`.
    pub base_rate: f64,
    pub fired_at_t: usize,
    pub fired_both: usize,
    pub tiles: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub epsilon: f64,
    pub points: Vec<PersistencePoint>,
}

impl PersistenceReport {
    /// Points where the persisted fraction does not strictly exceed the base rate.
    pub fn incoherent_points(&self) -> Vec<&PersistencePoint> {
        self.points
            .iter()
            .filter(|p| p.persisted.is_none_or(|x| x <= p.base_rate))
            .collect()
    }
}

/// Evaluates every timestep with a fresh, unmasked PV-skip pass and compares
/// which tiles satisfy the skip condition at `t` and `t + delta`, for every
/// `t` with `t + delta < T`.
pub fn persistence_experiment(
    engine: &AttentionEngine,
    trajectory: &Trajectory,
    epsilon: f64,
    deltas: &[usize],
) -> Result<PersistenceReport> {
    let mode = SkipMode::pv(epsilon)?;
    if let Some(&bad) = deltas.iter().find(|&&d| d == 0 || d >= trajectory.len()) {
        return Err(Error::param(format!(
            "delta {bad} must satisfy 1 <= delta < T={}",
            trajectory.len()
        )));
    }
    let fired: Vec<Vec<bool>> = (0..trajectory.len())
        .map(|t| {
            let step = engine.run_step(trajectory.step(t), mode, None)?;
            Ok(step
                .statuses
                .iter()
                .flatten()
                .map(|s: &TileStatus| s.fired())
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for &delta in deltas {
        for t in 0..trajectory.len() - delta {
            let (now, later) = (&fired[t], &fired[t + delta]);
            let tiles = now.len();
            let fired_at_t = now.iter().filter(|&&x| x).count();
            let fired_later = later.iter().filter(|&&x| x).count();
            let fired_both = now.iter().zip(later).filter(|(a, b)| **a && **b).count();
            points.push(PersistencePoint {
                t,
                delta,
                persisted: (fired_at_t > 0).then(|| fired_both as f64 / fired_at_t as f64),
                base_rate: fired_later as f64 / tiles as f64,
                fired_at_t,
                fired_both,
                tiles,
            });
        }
    }
    Ok(PersistenceReport { epsilon, points })
}
