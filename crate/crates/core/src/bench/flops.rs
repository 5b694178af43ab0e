use serde::{Deserialize, Serialize};

use crate::attention::{TileGeometry, TileStatus};

/// Cost of one `h_q x h_k` tile with head dimension `d`. Multiply-adds count
/// as two flops, exponentials as one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileFlops {
    pub qk: u64,
    pub exp: u64,
    pub pv: u64,
    pub epilogue: u64,
}

impl TileFlops {
    pub fn new(h_q: usize, h_k: usize, d: usize) -> Self {
        let (h_q, h_k, d) = (h_q as u64, h_k as u64, d as u64);
        Self {
            qk: 2 * h_q * h_k * d,
            exp: h_q * h_k,
            pv: 2 * h_q * h_k * d,
            epilogue: 2 * h_q * d,
        }
    }

    pub fn full(&self) -> u64 {
        self.qk + self.exp + self.pv + self.epilogue
    }

    /// Cost of a tile skipped after its scores and row maxima were computed.
    pub fn scores_only(&self) -> u64 {
        self.qk
    }

    pub fn for_status(&self, status: TileStatus) -> u64 {
        match status {
            TileStatus::Computed => self.full(),
            TileStatus::PvSkipped | TileStatus::Marked => self.scores_only(),
            TileStatus::Masked => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounts {
    pub performed: u64,
    pub dense_equivalent: u64,
}

impl FlopCounts {
    pub fn reduction(&self) -> f64 {
        if self.dense_equivalent == 0 {
            0.0
        } else {
            1.0 - self.performed as f64 / self.dense_equivalent as f64
        }
    }
}

/// Flops implied by a grid of tile outcomes (row-major `ti x tj`).
pub fn flop_model(geom: &TileGeometry, d: usize, statuses: &[TileStatus]) -> FlopCounts {
    let tj = geom.tj();
    assert_eq!(statuses.len(), geom.ti() * tj, "status grid does not match geometry");
    let mut counts = FlopCounts::default();
    for (idx, &status) in statuses.iter().enumerate() {
        let cost = TileFlops::new(geom.query_rows(idx / tj).len(), geom.key_rows(idx % tj).len(), d);
        counts.performed += cost.for_status(status);
        counts.dense_equivalent += cost.full();
    }
    counts
}
