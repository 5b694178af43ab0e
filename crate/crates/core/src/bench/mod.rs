//! Flop accounting, timing and the sparsity/runtime sweeps.

mod flops;
mod report;
mod sweep;

pub use flops::{flop_model, FlopCounts, TileFlops};
pub use report::{write_csv, CsvRow, RunReport, CSV_HEADER};
pub use sweep::{
    length_sweep, measure_run, median_seconds, sparsity_runtime_tradeoff, SweepPoint, TradeoffRow,
    TradeoffTable,
};
