use std::fmt;
use std::ops::AddAssign;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::TileGeometry;
use super::kernel::{scores_into, skip_condition, OnlineSoftmaxState};
use crate::bench::TileFlops;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::operand::AttentionOperand;
use crate::ordering::OrderingStrategy;
use crate::skip::{set_row_bit, KeptRanges, TileMask};

/// Execution mode of the tiled engine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SkipMode {
    /// Every tile is computed.
    Dense,
    /// Scores and maxima are computed for every tile; exponentiation and the
    /// value product are skipped for dominated tiles.
    Pv { epsilon: f64 },
    /// Tiles marked in the skip mask are bypassed entirely; dominated tiles
    /// are marked and skipped as in `Pv`.
    Qk { epsilon: f64 },
}

impl SkipMode {
    pub fn pv(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(SkipMode::Pv { epsilon })
    }

    pub fn qk(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(SkipMode::Qk { epsilon })
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            SkipMode::Dense => None,
            SkipMode::Pv { epsilon } | SkipMode::Qk { epsilon } => Some(epsilon),
        }
    }

    pub fn uses_mask(&self) -> bool {
        matches!(self, SkipMode::Qk { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SkipMode::Dense => "dense",
            SkipMode::Pv { .. } => "pv",
            SkipMode::Qk { .. } => "qk",
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.epsilon().map_or(Ok(()), check_epsilon)
    }
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.epsilon() {
            Some(eps) => write!(f, "{}(eps={eps})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::param(format!("skip threshold must be finite and >= 0, got {epsilon}")));
    }
    Ok(())
}

/// What happened to one (query tile, key tile) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileStatus {
    #[default]
    Computed,
    /// Dominated this step; scores computed, value product skipped.
    PvSkipped,
    /// Dominated this step and newly marked in the skip mask.
    Marked,
    /// Bypassed because the skip mask already marked it.
    Masked,
}

impl TileStatus {
    /// Whether the tile satisfied the skip condition during this evaluation.
    pub fn fired(self) -> bool {
        matches!(self, TileStatus::PvSkipped | TileStatus::Marked)
    }

    pub fn is_skipped(self) -> bool {
        self != TileStatus::Computed
    }
}

/// Tile counters of one evaluation. Reports add elementwise.
///
/// Newly marked tiles are also counted in `tiles_pv_skipped`, since their
/// scores were computed before the skip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileReport {
    pub tiles_total: u64,
    pub tiles_pv_skipped: u64,
    pub tiles_qk_skipped: u64,
    pub newly_marked: u64,
    pub degenerate_rows: u64,
    pub flops_performed: u64,
    pub flops_dense_equivalent: u64,
}

impl TileReport {
    pub fn merge(mut self, other: TileReport) -> TileReport {
        self += other;
        self
    }

    /// Fraction of dense-equivalent flops that were not performed.
    pub fn sparsity(&self) -> f64 {
        if self.flops_dense_equivalent == 0 {
            return 0.0;
        }
        1.0 - self.flops_performed as f64 / self.flops_dense_equivalent as f64
    }

    pub fn tiles_skipped(&self) -> u64 {
        self.tiles_pv_skipped + self.tiles_qk_skipped
    }
}

impl AddAssign for TileReport {
    fn add_assign(&mut self, o: TileReport) {
        self.tiles_total += o.tiles_total;
        self.tiles_pv_skipped += o.tiles_pv_skipped;
        self.tiles_qk_skipped += o.tiles_qk_skipped;
        self.newly_marked += o.newly_marked;
        self.degenerate_rows += o.degenerate_rows;
        self.flops_performed += o.flops_performed;
        self.flops_dense_equivalent += o.flops_dense_equivalent;
    }
}

impl std::iter::Sum for TileReport {
    fn sum<I: Iterator<Item = TileReport>>(iter: I) -> Self {
        iter.fold(TileReport::default(), TileReport::merge)
    }
}

/// Result of one tiled evaluation of a single head.
#[derive(Clone, Debug)]
pub struct TiledOutput {
    pub output: Matrix<f64>,
    pub report: TileReport,
    /// Per-tile outcome, row-major over `(i, j)`.
    pub statuses: Vec<TileStatus>,
}

impl TiledOutput {
    pub fn status(&self, tj: usize, i: usize, j: usize) -> TileStatus {
        self.statuses[i * tj + j]
    }
}

/// Tiled online-softmax attention with a fixed geometry, key-tile ordering
/// and scheduling policy.
#[derive(Clone, Copy, Debug)]
pub struct AttentionEngine {
    geometry: TileGeometry,
    ordering: OrderingStrategy,
    execution: Execution,
}

impl AttentionEngine {
    pub fn new(geometry: TileGeometry, ordering: OrderingStrategy) -> Self {
        Self {
            geometry,
            ordering,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn geometry(&self) -> TileGeometry {
        self.geometry
    }

    pub fn ordering(&self) -> OrderingStrategy {
        self.ordering
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    /// Evaluates one head. `mask` is required for [`SkipMode::Qk`] and
    /// ignored otherwise; in QK mode new marks are written into it.
    pub fn run(
        &self,
        op: &AttentionOperand,
        mode: SkipMode,
        mask: Option<&mut TileMask>,
    ) -> Result<TiledOutput> {
        let geom = self.geometry;
        geom.check_sequence(op.n())?;
        mode.validate()?;
        let (ti, tj, d) = (geom.ti(), geom.tj(), op.d());

        let mut scratch;
        let mask_words: &mut [u64] = match (mode.uses_mask(), mask) {
            (true, Some(mask)) => {
                if (mask.ti(), mask.tj()) != (ti, tj) {
                    return Err(Error::shape(format!(
                        "mask is {}x{}, geometry needs {ti}x{tj}",
                        mask.ti(),
                        mask.tj()
                    )));
                }
                mask.words_mut()
            }
            (true, None) => return Err(Error::param("QK-skip mode requires a skip mask")),
            (false, _) => {
                scratch = TileMask::new(ti, tj);
                scratch.words_mut()
            }
        };
        let words_per_row = mask_words.len() / ti;

        let mut output = Matrix::zeros(op.n(), d);
        let mut statuses = vec![TileStatus::Computed; ti * tj];
        let worker = RowWorker {
            op,
            geom,
            ordering: self.ordering,
            mode,
        };
        let out_chunk = geom.h_q() * d;

        #[cfg(feature = "parallel")]
        if self.execution.is_parallel() {
            let report = output
                .as_mut_slice()
                .par_chunks_mut(out_chunk)
                .zip(mask_words.par_chunks_mut(words_per_row))
                .zip(statuses.par_chunks_mut(tj))
                .enumerate()
                .map(|(i, ((out, words), status))| worker.run(i, out, words, status))
                .reduce(TileReport::default, TileReport::merge);
            return Ok(TiledOutput {
                output,
                report,
                statuses,
            });
        }

        let report = output
            .as_mut_slice()
            .chunks_mut(out_chunk)
            .zip(mask_words.chunks_mut(words_per_row))
            .zip(statuses.chunks_mut(tj))
            .enumerate()
            .map(|(i, ((out, words), status))| worker.run(i, out, words, status))
            .sum();
        Ok(TiledOutput {
            output,
            report,
            statuses,
        })
    }
}

/// Processes one query tile against all key tiles. Each worker owns its
/// output rows, its mask row and its status row.
struct RowWorker<'a> {
    op: &'a AttentionOperand,
    geom: TileGeometry,
    ordering: OrderingStrategy,
    mode: SkipMode,
}

impl RowWorker<'_> {
    fn run(&self, i: usize, out: &mut [f64], mask_row: &mut [u64], status: &mut [TileStatus]) -> TileReport {
        let geom = self.geom;
        let (ti, tj, d) = (geom.ti(), geom.tj(), self.op.d());
        let rows = geom.query_rows(i);
        let hq = rows.len();
        let q_tile = self.op.q().rows_slice(rows.start, rows.end);

        let mut report = TileReport {
            tiles_total: tj as u64,
            ..TileReport::default()
        };

        let order = self.ordering.order(i, ti, tj);
        let visit: Vec<usize> = if self.mode.uses_mask() {
            // start-of-step snapshot of this row; marks made below only touch
            // tiles already visited
            let kept = KeptRanges::from_words(mask_row, tj);
            for (j, st) in status.iter_mut().enumerate() {
                if !kept.is_kept(j) {
                    *st = TileStatus::Masked;
                }
            }
            report.tiles_qk_skipped = (tj - kept.kept_count()) as u64;
            match self.ordering {
                OrderingStrategy::Linear => kept.kept_indices().collect(),
                _ => order.into_iter().filter(|&j| kept.is_kept(j)).collect(),
            }
        } else {
            order
        };

        for j in 0..tj {
            let hk = geom.key_rows(j).len();
            report.flops_dense_equivalent += TileFlops::new(hq, hk, d).full();
        }

        let epsilon = self.mode.epsilon();
        let mut state = OnlineSoftmaxState::new(hq, d);
        let mut scores = vec![0.0f32; hq * geom.h_k()];
        let mut m_local = vec![0.0f64; hq];
        for j in visit {
            let keys = geom.key_rows(j);
            let hk = keys.len();
            let flops = TileFlops::new(hq, hk, d);
            let s = &mut scores[..hq * hk];
            scores_into(q_tile, self.op.k().rows_slice(keys.start, keys.end), d, s);
            for (m, row) in m_local.iter_mut().zip(s.chunks_exact(hk)) {
                *m = f64::from(row.iter().copied().fold(f32::NEG_INFINITY, f32::max));
            }
            state.update_max(&m_local);

            if let Some(eps) = epsilon {
                if skip_condition(&m_local, state.m(), eps) {
                    report.tiles_pv_skipped += 1;
                    report.flops_performed += flops.scores_only();
                    if self.mode.uses_mask() {
                        set_row_bit(mask_row, j);
                        report.newly_marked += 1;
                        status[j] = TileStatus::Marked;
                    } else {
                        status[j] = TileStatus::PvSkipped;
                    }
                    continue;
                }
            }

            state.accumulate(s, self.op.v().rows_slice(keys.start, keys.end));
            report.flops_performed += flops.full();
        }

        report.degenerate_rows = state.finish_into(out) as u64;
        report
    }
}

/// Evaluates one head with the default execution policy.
pub fn tiled_attention(
    op: &AttentionOperand,
    geometry: TileGeometry,
    mode: SkipMode,
    ordering: OrderingStrategy,
    mask: Option<&mut TileMask>,
) -> Result<TiledOutput> {
    AttentionEngine::new(geometry, ordering).run(op, mode, mask)
}
