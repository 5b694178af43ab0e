//! Tiled sparse attention with evolutionary tile skipping.
//!
//! The crate provides a dense attention oracle, a tiled online-softmax engine
//! with three execution modes (dense, per-step PV skipping and mask-driven QK
//! skipping), a persistent skip mask with a run-length-encoded skip list,
//! per-timestep threshold calibration, a synthetic denoising harness and a
//! small benchmarking layer.
//!
//! Parallel execution over query-tile rows and (layer, head) slices is
//! provided through rayon behind the `parallel` feature (on by default).
//! Without it every [`Execution`] policy runs sequentially. Both paths produce
//! bitwise-identical results.

pub mod attention;
pub mod bench;
pub mod calibration;
mod error;
mod exec;
pub mod format;
pub mod harness;
mod matrix;
mod operand;
pub mod ordering;
pub mod skip;

pub use attention::{
    dense_attention, run_timestep_sequence, skip_condition, tile_scores, tiled_attention,
    AttentionEngine, OnlineSoftmaxState, SequenceRun, SkipMode, TileGeometry, TileReport,
    TileStatus, TiledOutput,
};
pub use calibration::{
    calibrate, relative_l1_error, segment_bounds, Calibration, ErrorBoundSpec, ThresholdSchedule,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use matrix::Matrix;
pub use operand::{AttentionOperand, Trajectory};
pub use ordering::{visit_order, OrderingStrategy};
pub use skip::{compile_skip_list, KeptRanges, SkipList, SkipMask, TileMask};

/// Threshold large enough that the skip condition can never fire on finite scores.
pub const SKIP_DISABLED: f64 = 1e9;
