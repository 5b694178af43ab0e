//! Visit orders for the key-tile loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingStrategy {
    /// Key tiles in ascending order.
    #[default]
    Linear,
    /// Key tiles outward from the tile aligned with the query tile on the
    /// attention diagonal, nearer tiles first, ties to the smaller index.
    Radial,
}

impl OrderingStrategy {
    pub fn order(self, i: usize, ti: usize, tj: usize) -> Vec<usize> {
        visit_order(self, i, ti, tj)
    }
}

/// Diagonal-aligned key tile for query tile `i`: `clamp(round(i * tj / ti), 0, tj - 1)`.
pub fn radial_center(i: usize, ti: usize, tj: usize) -> usize {
    // round-half-up of i*tj/ti in integers
    let c = (2 * i * tj + ti) / (2 * ti);
    c.min(tj - 1)
}

/// Permutation of `0..tj` in which query tile `i` visits the key tiles.
///
/// # Panics
///
/// Panics if `i >= ti` or either tile count is zero.
pub fn visit_order(strategy: OrderingStrategy, i: usize, ti: usize, tj: usize) -> Vec<usize> {
    assert!(ti > 0 && tj > 0, "tile counts must be positive");
    assert!(i < ti, "query tile {i} out of range for {ti} tiles");
    match strategy {
        OrderingStrategy::Linear => (0..tj).collect(),
        OrderingStrategy::Radial => {
            let c = radial_center(i, ti, tj);
            let mut order = Vec::with_capacity(tj);
            order.push(c);
            for r in 1..tj {
                if r <= c {
                    order.push(c - r);
                }
                if c + r < tj {
                    order.push(c + r);
                }
                if order.len() == tj {
                    break;
                }
            }
            order
        }
    }
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderingStrategy::Linear => "linear",
            OrderingStrategy::Radial => "radial",
        })
    }
}

impl FromStr for OrderingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(OrderingStrategy::Linear),
            "radial" => Ok(OrderingStrategy::Radial),
            other => Err(Error::param(format!("unknown ordering `{other}`"))),
        }
    }
}
