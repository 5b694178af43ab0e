//! Dense attention oracle and the tiled online-softmax engine.

mod dense;
mod geometry;
mod kernel;
mod sequence;
mod tiled;

pub use dense::{dense_attention, dense_probabilities};
pub use geometry::TileGeometry;
pub use kernel::{skip_condition, tile_scores, OnlineSoftmaxState};
pub use sequence::{run_timestep_sequence, SequenceRun, StepOutput};
pub use tiled::{tiled_attention, AttentionEngine, SkipMode, TileReport, TileStatus, TiledOutput};
