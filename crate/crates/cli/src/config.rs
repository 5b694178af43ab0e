use std::path::{Path, PathBuf};

use anyhow::Result;
use evoskip::harness::TrajectoryConfig;
use evoskip::{OrderingStrategy, SkipMode, TileGeometry};
use serde::{Deserialize, Serialize};

use crate::invalid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dense,
    Pv,
    Qk,
}

/// Contents of a `--config` file. Every key is optional; unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub steps: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub rho: Option<f64>,
    pub seed: Option<u64>,
    pub score_scale: Option<f64>,
    pub locality: Option<f64>,
    pub stationary: Option<bool>,
    pub h_q: Option<usize>,
    pub h_k: Option<usize>,
    pub mode: Option<Mode>,
    pub ordering: Option<OrderingStrategy>,
    pub threshold: Option<f64>,
    pub schedule: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub reps: Option<usize>,
    pub grid: Option<Vec<f64>>,
    pub xi: Option<f64>,
    pub tau: Option<f64>,
    pub deltas: Option<Vec<usize>>,
    pub inject: Option<Vec<usize>>,
    pub epsilon_inject: Option<f64>,
    pub coupling: Option<f64>,
    pub ns: Option<Vec<usize>>,
    pub trials: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(format!("reading config {}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// Keeps `self` where set, falling back to `other`.
    pub fn or(self, other: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: self.$f.or(other.$f)),* } };
        }
        pick!(
            steps, layers, heads, n, d, rho, seed, score_scale, locality, stationary, h_q, h_k, mode, ordering,
            threshold, schedule, input, out, workers, reps, grid, xi, tau, deltas, inject, epsilon_inject,
            coupling, ns, trials
        )
    }
}

/// Fully resolved configuration, embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    #[serde(flatten)]
    pub trajectory: TrajectoryConfig,
    pub h_q: usize,
    pub h_k: usize,
    pub mode: Mode,
    pub ordering: OrderingStrategy,
    /// Signed threshold; the engine uses `epsilon = -threshold`.
    pub threshold: f64,
    pub epsilon: f64,
    pub schedule: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    /// 0 uses every available core.
    pub workers: usize,
    pub reps: usize,
    pub grid: Vec<f64>,
    pub xi: f64,
    pub tau: f64,
    pub deltas: Vec<usize>,
    pub inject: Vec<usize>,
    pub epsilon_inject: f64,
    pub coupling: f64,
    pub ns: Vec<usize>,
    pub trials: usize,
}

impl Config {
    pub fn resolve(f: FileConfig) -> Result<Self> {
        let defaults = TrajectoryConfig::default();
        let trajectory = TrajectoryConfig {
            steps: f.steps.unwrap_or(defaults.steps),
            layers: f.layers.unwrap_or(defaults.layers),
            heads: f.heads.unwrap_or(defaults.heads),
            n: f.n.unwrap_or(defaults.n),
            d: f.d.unwrap_or(defaults.d),
            rho: f.rho.unwrap_or(defaults.rho),
            seed: f.seed.unwrap_or(defaults.seed),
            score_scale: f.score_scale.unwrap_or(defaults.score_scale),
            locality: f.locality.unwrap_or(defaults.locality),
            stationary: f.stationary.unwrap_or(defaults.stationary),
        };
        trajectory.validate().map_err(|e| invalid(e.to_string()))?;
        let threshold = f.threshold.unwrap_or(-4.0);
        if !threshold.is_finite() || threshold > 0.0 {
            return Err(invalid(format!("threshold must be finite and <= 0, got {threshold}")));
        }
        let steps = trajectory.steps;
        let cfg = Config {
            h_q: f.h_q.unwrap_or(16),
            h_k: f.h_k.unwrap_or(16),
            mode: f.mode.unwrap_or(Mode::Qk),
            ordering: f.ordering.unwrap_or(OrderingStrategy::Linear),
            threshold,
            epsilon: threshold.abs(),
            schedule: f.schedule,
            input: f.input,
            out: f.out.unwrap_or_else(|| PathBuf::from("out")),
            workers: f.workers.unwrap_or(0),
            reps: f.reps.unwrap_or(3),
            grid: f.grid.unwrap_or_else(|| vec![2.0, 4.0, 6.0, 8.0, 12.0]),
            xi: f.xi.unwrap_or(0.075),
            tau: f.tau.unwrap_or(0.01),
            deltas: f
                .deltas
                .unwrap_or_else(|| [1, 4, 8].into_iter().filter(|&d| d < steps).collect()),
            inject: f
                .inject
                .unwrap_or_else(|| vec![0, steps / 3, 2 * steps / 3, steps.saturating_sub(1)]),
            epsilon_inject: f.epsilon_inject.unwrap_or(2.0),
            coupling: f.coupling.unwrap_or(2.0),
            ns: f.ns.unwrap_or_else(|| vec![256, 512, 1024, 2048]),
            trials: f.trials.unwrap_or(100_000),
            trajectory,
        };
        cfg.geometry()?;
        if cfg.reps == 0 {
            return Err(invalid("reps must be at least 1"));
        }
        if cfg.grid.iter().any(|&e| !(e.is_finite() && e >= 0.0)) {
            return Err(invalid("grid values are thresholds epsilon and must be finite and >= 0"));
        }
        if !(cfg.epsilon_inject.is_finite() && cfg.epsilon_inject >= 0.0) {
            return Err(invalid("epsilon_inject must be finite and >= 0"));
        }
        Ok(cfg)
    }

    pub fn geometry(&self) -> Result<TileGeometry> {
        TileGeometry::new(self.trajectory.n, self.h_q, self.h_k).map_err(|e| invalid(e.to_string()))
    }

    pub fn skip_mode(&self) -> SkipMode {
        match self.mode {
            Mode::Dense => SkipMode::Dense,
            Mode::Pv => SkipMode::Pv { epsilon: self.epsilon },
            Mode::Qk => SkipMode::Qk { epsilon: self.epsilon },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("seed = 1\nn = 64\nthreshold = -2.0").unwrap();
        let flags = FileConfig { seed: Some(7), ..FileConfig::default() };
        let cfg = Config::resolve(flags.or(file)).unwrap();
        assert_eq!(cfg.trajectory.seed, 7);
        assert_eq!(cfg.trajectory.n, 64);
        assert_eq!(cfg.epsilon, 2.0);
        assert_eq!(cfg.skip_mode(), SkipMode::Qk { epsilon: 2.0 });
    }

    #[test]
    fn default_deltas_fit_the_trajectory() {
        let cfg = Config::resolve(FileConfig { steps: Some(5), ..FileConfig::default() }).unwrap();
        assert_eq!(cfg.deltas, vec![1, 4]);
        assert_eq!(cfg.inject, vec![0, 1, 3, 4]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(toml::from_str::<FileConfig>("nope = 1").is_err());
        assert!(toml::from_str::<FileConfig>("mode = \"sparse\"").is_err());
        for bad in [
            FileConfig { threshold: Some(0.1), ..FileConfig::default() },
            FileConfig { threshold: Some(f64::NAN), ..FileConfig::default() },
            FileConfig { reps: Some(0), ..FileConfig::default() },
            FileConfig { rho: Some(2.0), ..FileConfig::default() },
            FileConfig { h_q: Some(0), ..FileConfig::default() },
            FileConfig { grid: Some(vec![-1.0]), ..FileConfig::default() },
        ] {
            assert!(Config::resolve(bad).is_err());
        }
    }
}
