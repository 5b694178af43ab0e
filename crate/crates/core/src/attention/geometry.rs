use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of an `n`-token sequence into query tiles of height `h_q` and
/// key tiles of height `h_k`. The last tile in each dimension may be shorter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGeometry {
    n: usize,
    h_q: usize,
    h_k: usize,
}

impl TileGeometry {
    pub fn new(n: usize, h_q: usize, h_k: usize) -> Result<Self> {
        if n == 0 || h_q == 0 || h_k == 0 {
            return Err(Error::param(format!(
                "sequence length and tile heights must be positive (n={n}, h_q={h_q}, h_k={h_k})"
            )));
        }
        Ok(Self { n, h_q, h_k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h_q(&self) -> usize {
        self.h_q
    }

    pub fn h_k(&self) -> usize {
        self.h_k
    }

    /// Number of query tiles.
    pub fn ti(&self) -> usize {
        self.n.div_ceil(self.h_q)
    }

    /// Number of key tiles.
    pub fn tj(&self) -> usize {
        self.n.div_ceil(self.h_k)
    }

    pub fn query_rows(&self, i: usize) -> Range<usize> {
        i * self.h_q..((i + 1) * self.h_q).min(self.n)
    }

    pub fn key_rows(&self, j: usize) -> Range<usize> {
        j * self.h_k..((j + 1) * self.h_k).min(self.n)
    }

    pub fn check_sequence(&self, n: usize) -> Result<()> {
        if n != self.n {
            return Err(Error::shape(format!(
                "geometry is for n={}, operand has n={n}",
                self.n
            )));
        }
        Ok(())
    }
}
