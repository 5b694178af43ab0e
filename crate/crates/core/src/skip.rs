//! Persistent skip mask and its run-length-encoded skip list.
//!
//! A [`TileMask`] is the `Ti x Tj` tile grid of one (layer, head) slice, one
//! bit per tile, `true` meaning the tile is skipped. Bits can only be set;
//! the only way back is [`SkipMask::reset`], which starts a new generation.
//! A [`SkipList`] stores, for each query-tile row, the maximal half-open
//! ranges of key tiles that are still computed.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// Skip bits of a single (layer, head) slice, packed row by row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileMask {
    ti: usize,
    tj: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl TileMask {
    pub fn new(ti: usize, tj: usize) -> Self {
        let words_per_row = tj.div_ceil(WORD_BITS);
        Self {
            ti,
            tj,
            words_per_row,
            words: vec![0; ti * words_per_row],
        }
    }

    pub fn ti(&self) -> usize {
        self.ti
    }

    pub fn tj(&self) -> usize {
        self.tj
    }

    pub fn cells(&self) -> usize {
        self.ti * self.tj
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.ti || j >= self.tj {
            return Err(Error::OutOfRange(format!(
                "tile ({i}, {j}) outside {}x{} grid",
                self.ti, self.tj
            )));
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Result<bool> {
        self.check(i, j)?;
        Ok(self.bit(i, j))
    }

    /// Marks tile `(i, j)` skipped. Returns whether the bit was newly set.
    pub fn set(&mut self, i: usize, j: usize) -> Result<bool> {
        self.check(i, j)?;
        let word = &mut self.words[i * self.words_per_row + j / WORD_BITS];
        let bit = 1u64 << (j % WORD_BITS);
        let fresh = *word & bit == 0;
        *word |= bit;
        Ok(fresh)
    }

    #[inline]
    pub(crate) fn bit(&self, i: usize, j: usize) -> bool {
        row_bit(&self.words[i * self.words_per_row..], j)
    }

    pub fn count_set(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Fraction of tiles marked skipped.
    pub fn sparsity(&self) -> f64 {
        if self.cells() == 0 {
            return 0.0;
        }
        self.count_set() as f64 / self.cells() as f64
    }

    /// Skip flags of row `i`.
    pub fn row(&self, i: usize) -> Vec<bool> {
        let words = self.row_words(i);
        (0..self.tj).map(|j| row_bit(words, j)).collect()
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let ti = rows.len();
        let tj = rows.first().map_or(0, Vec::len);
        let mut mask = Self::new(ti, tj);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != tj {
                return Err(Error::shape(format!("mask row {i} has {} cells, expected {tj}", row.len())));
            }
            for (j, &skip) in row.iter().enumerate() {
                if skip {
                    mask.set(i, j)?;
                }
            }
        }
        Ok(mask)
    }

    /// Whether every bit set in `self` is also set in `later`.
    pub fn is_subset_of(&self, later: &TileMask) -> bool {
        self.ti == later.ti
            && self.tj == later.tj
            && self.words.iter().zip(&later.words).all(|(a, b)| a & !b == 0)
    }

    pub fn reset(&mut self) {
        self.words.fill(0);
    }

    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    fn row_bytes(&self, i: usize) -> Vec<u8> {
        let nbytes = self.tj.div_ceil(8);
        self.row_words(i)
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(nbytes)
            .collect()
    }
}

#[inline]
pub(crate) fn row_bit(words: &[u64], j: usize) -> bool {
    words[j / WORD_BITS] >> (j % WORD_BITS) & 1 == 1
}

#[inline]
pub(crate) fn set_row_bit(words: &mut [u64], j: usize) {
    words[j / WORD_BITS] |= 1u64 << (j % WORD_BITS);
}

/// Persistent skip mask over every (layer, head) slice of a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipMask {
    layers: usize,
    heads: usize,
    ti: usize,
    tj: usize,
    slices: Vec<TileMask>,
}

impl SkipMask {
    pub fn new(layers: usize, heads: usize, ti: usize, tj: usize) -> Self {
        Self {
            layers,
            heads,
            ti,
            tj,
            slices: (0..layers * heads).map(|_| TileMask::new(ti, tj)).collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn ti(&self) -> usize {
        self.ti
    }

    pub fn tj(&self) -> usize {
        self.tj
    }

    fn index(&self, layer: usize, head: usize) -> Result<usize> {
        if layer >= self.layers || head >= self.heads {
            return Err(Error::OutOfRange(format!(
                "slice ({layer}, {head}) outside {} layers x {} heads",
                self.layers, self.heads
            )));
        }
        Ok(layer * self.heads + head)
    }

    pub fn slice(&self, layer: usize, head: usize) -> Result<&TileMask> {
        Ok(&self.slices[self.index(layer, head)?])
    }

    pub fn slice_mut(&mut self, layer: usize, head: usize) -> Result<&mut TileMask> {
        let idx = self.index(layer, head)?;
        Ok(&mut self.slices[idx])
    }

    /// Slices in layer-major order.
    pub fn slices(&self) -> &[TileMask] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [TileMask] {
        &mut self.slices
    }

    /// Sets the skip bit of tile `(i, j)` in slice `(layer, head)`. Idempotent.
    pub fn mark_skip(&mut self, layer: usize, head: usize, i: usize, j: usize) -> Result<()> {
        self.slice_mut(layer, head)?.set(i, j).map(|_| ())
    }

    pub fn is_skipped(&self, layer: usize, head: usize, i: usize, j: usize) -> Result<bool> {
        self.slice(layer, head)?.get(i, j)
    }

    pub fn count_set(&self) -> usize {
        self.slices.iter().map(TileMask::count_set).sum()
    }

    pub fn cells(&self) -> usize {
        self.slices.len() * self.ti * self.tj
    }

    /// Set-bit count over total cells.
    pub fn sparsity(&self) -> f64 {
        sparsity(self)
    }

    /// Clears every bit. Only meaningful between independent generations.
    pub fn reset(&mut self) {
        self.slices.iter_mut().for_each(TileMask::reset);
    }

    pub fn is_subset_of(&self, later: &SkipMask) -> bool {
        self.slices.len() == later.slices.len()
            && self.slices.iter().zip(&later.slices).all(|(a, b)| a.is_subset_of(b))
    }

    pub fn compile(&self) -> SkipList {
        compile_skip_list(self)
    }

    pub fn snapshot(&self) -> MaskSnapshot {
        MaskSnapshot {
            layers: self.layers,
            heads: self.heads,
            ti: self.ti,
            tj: self.tj,
            sparsity: self.sparsity(),
            slices: self
                .slices
                .iter()
                .enumerate()
                .map(|(idx, m)| SliceSnapshot {
                    layer: idx / self.heads,
                    head: idx % self.heads,
                    rows: (0..self.ti).map(|i| BASE64.encode(m.row_bytes(i))).collect(),
                })
                .collect(),
        }
    }
}

/// Fraction of mask cells marked skipped.
pub fn sparsity(mask: &SkipMask) -> f64 {
    let cells = mask.cells();
    if cells == 0 {
        0.0
    } else {
        mask.count_set() as f64 / cells as f64
    }
}

/// JSON export of a mask: one base64 string per tile row, bits packed
/// least-significant-first (bit `j % 8` of byte `j / 8` is tile `j`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSnapshot {
    pub layers: usize,
    pub heads: usize,
    pub ti: usize,
    pub tj: usize,
    pub sparsity: f64,
    pub slices: Vec<SliceSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSnapshot {
    pub layer: usize,
    pub head: usize,
    pub rows: Vec<String>,
}

impl MaskSnapshot {
    pub fn to_mask(&self) -> Result<SkipMask> {
        let mut mask = SkipMask::new(self.layers, self.heads, self.ti, self.tj);
        if self.slices.len() != self.layers * self.heads {
            return Err(Error::shape("snapshot slice count does not match its shape"));
        }
        for slice in &self.slices {
            if slice.rows.len() != self.ti {
                return Err(Error::shape("snapshot row count does not match ti"));
            }
            let target = mask.slice_mut(slice.layer, slice.head)?;
            for (i, row) in slice.rows.iter().enumerate() {
                let bytes = BASE64
                    .decode(row)
                    .map_err(|e| Error::Format(format!("bad base64 mask row: {e}")))?;
                if bytes.len() != self.tj.div_ceil(8) {
                    return Err(Error::shape("snapshot row has the wrong byte length"));
                }
                for j in 0..self.tj {
                    if bytes[j / 8] >> (j % 8) & 1 == 1 {
                        target.set(i, j)?;
                    }
                }
            }
        }
        Ok(mask)
    }
}

/// Maximal half-open ranges `[start, end)` of kept (non-skipped) key tiles in one row.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptRanges(Vec<(usize, usize)>);

impl KeptRanges {
    /// Run-length encodes the kept cells of a row of skip flags.
    pub fn from_flags(skip: impl IntoIterator<Item = bool>) -> Self {
        let mut ranges = Vec::new();
        let mut open: Option<usize> = None;
        let mut len = 0;
        for (j, skipped) in skip.into_iter().enumerate() {
            match (skipped, open) {
                (false, None) => open = Some(j),
                (true, Some(start)) => {
                    ranges.push((start, j));
                    open = None;
                }
                _ => {}
            }
            len = j + 1;
        }
        if let Some(start) = open {
            ranges.push((start, len));
        }
        KeptRanges(ranges)
    }

    pub(crate) fn from_words(words: &[u64], tj: usize) -> Self {
        Self::from_flags((0..tj).map(|j| row_bit(words, j)))
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of kept tiles.
    pub fn kept_count(&self) -> usize {
        self.0.iter().map(|(s, e)| e - s).sum()
    }

    /// Kept tile indices in ascending order.
    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().flat_map(|&(s, e)| s..e)
    }

    pub fn is_kept(&self, j: usize) -> bool {
        // ranges are sorted by start; find the last range starting at or before j
        let idx = self.0.partition_point(|&(s, _)| s <= j);
        idx > 0 && j < self.0[idx - 1].1
    }

    /// Skip flags of a row of width `tj`.
    pub fn decompress(&self, tj: usize) -> Vec<bool> {
        let mut flags = vec![true; tj];
        for j in self.kept_indices() {
            flags[j] = false;
        }
        flags
    }

    /// Sorted, disjoint, non-adjacent, non-empty and within `[0, tj)`.
    pub fn is_canonical(&self, tj: usize) -> bool {
        self.0.iter().all(|&(s, e)| s < e && e <= tj)
            && self.0.windows(2).all(|w| w[0].1 < w[1].0)
    }
}

/// Compiled skip list for every (layer, head, query-tile row).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipList {
    layers: usize,
    heads: usize,
    ti: usize,
    tj: usize,
    rows: Vec<KeptRanges>,
}

impl SkipList {
    pub fn row(&self, layer: usize, head: usize, i: usize) -> &KeptRanges {
        &self.rows[(layer * self.heads + head) * self.ti + i]
    }

    pub fn rows(&self) -> &[KeptRanges] {
        &self.rows
    }

    pub fn decompress(&self) -> SkipMask {
        let mut mask = SkipMask::new(self.layers, self.heads, self.ti, self.tj);
        for (s, slice) in mask.slices_mut().iter_mut().enumerate() {
            for i in 0..self.ti {
                let flags = self.rows[s * self.ti + i].decompress(self.tj);
                for (j, skip) in flags.into_iter().enumerate() {
                    if skip {
                        let _ = slice.set(i, j);
                    }
                }
            }
        }
        mask
    }
}

pub fn compile_skip_list(mask: &SkipMask) -> SkipList {
    let rows = mask
        .slices()
        .iter()
        .flat_map(|slice| (0..slice.ti()).map(move |i| KeptRanges::from_words(slice.row_words(i), slice.tj())))
        .collect();
    SkipList {
        layers: mask.layers(),
        heads: mask.heads(),
        ti: mask.ti(),
        tj: mask.tj(),
        rows,
    }
}
