use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "mode",
    "n",
    "d",
    "T",
    "epsilon",
    "sparsity",
    "flops_performed",
    "flops_dense",
    "wall_seconds",
    "eta_final",
    "degenerate_rows",
];

/// Summary of one timed sequential run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub ordering: String,
    /// Constant threshold, if the run used one.
    pub epsilon: Option<f64>,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub layers: usize,
    pub heads: usize,
    pub h_q: usize,
    pub h_k: usize,
    /// Fraction of dense-equivalent flops skipped at each timestep.
    pub sparsity_per_t: Vec<f64>,
    /// Skip-mask occupancy after each timestep (zero outside QK mode).
    pub mask_sparsity_per_t: Vec<f64>,
    pub flops_performed: u64,
    pub flops_dense_equivalent: u64,
    /// Median over `repetitions` runs.
    pub wall_seconds: f64,
    pub repetitions: usize,
    pub workers: usize,
    pub eta_per_t: Vec<f64>,
    pub degenerate_rows: u64,
}

impl RunReport {
    /// Fraction of dense-equivalent flops skipped over the whole run.
    pub fn sparsity(&self) -> f64 {
        if self.flops_dense_equivalent == 0 {
            0.0
        } else {
            1.0 - self.flops_performed as f64 / self.flops_dense_equivalent as f64
        }
    }

    pub fn eta_final(&self) -> f64 {
        self.eta_per_t.last().copied().unwrap_or(0.0)
    }

    /// `1 - wall / baseline_wall`. Only defined for equal worker counts.
    pub fn wall_reduction_vs(&self, baseline: &RunReport) -> Result<f64> {
        if self.workers != baseline.workers {
            return Err(Error::param(format!(
                "cannot compare timings from {} and {} workers",
                self.workers, baseline.workers
            )));
        }
        Ok(1.0 - self.wall_seconds / baseline.wall_seconds)
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            mode: self.mode.clone(),
            n: self.n,
            d: self.d,
            steps: self.steps,
            epsilon: self.epsilon,
            sparsity: self.sparsity(),
            flops_performed: self.flops_performed,
            flops_dense: self.flops_dense_equivalent,
            wall_seconds: self.wall_seconds,
            eta_final: self.eta_final(),
            degenerate_rows: self.degenerate_rows,
        }
    }
}

/// One benchmark CSV row; field order matches [`CSV_HEADER`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub mode: String,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub epsilon: Option<f64>,
    pub sparsity: f64,
    pub flops_performed: u64,
    pub flops_dense: u64,
    pub wall_seconds: f64,
    pub eta_final: f64,
    pub degenerate_rows: u64,
}

/// Writes the fixed header followed by `rows`.
pub fn write_csv<W: Write>(w: W, rows: &[CsvRow]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    writer.write_record(CSV_HEADER).map_err(io)?;
    for row in rows {
        writer.serialize(row).map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}
