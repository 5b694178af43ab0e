//! Per-tile building blocks of the online softmax.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    lanes.iter().sum::<f32>() + tail
}

/// Writes `Q_tile K_tile^T / sqrt(d)` into `out` (row-major, `q_rows x k_rows`).
#[inline]
pub(crate) fn scores_into(q_tile: &[f32], k_tile: &[f32], d: usize, out: &mut [f32]) {
    let scale = (d as f32).sqrt();
    let k_rows = k_tile.len() / d;
    for (qr, out_row) in q_tile.chunks_exact(d).zip(out.chunks_exact_mut(k_rows)) {
        for (s, kr) in out_row.iter_mut().zip(k_tile.chunks_exact(d)) {
            *s = dot(qr, kr) / scale;
        }
    }
}

/// Score tile `S_ij = Q_i K_j^T / sqrt(d)` in 32-bit arithmetic.
pub fn tile_scores(q_tile: &Matrix<f32>, k_tile: &Matrix<f32>) -> Result<Matrix<f32>> {
    if q_tile.cols() != k_tile.cols() || q_tile.cols() == 0 {
        return Err(Error::shape(format!(
            "query tile width {} does not match key tile width {}",
            q_tile.cols(),
            k_tile.cols()
        )));
    }
    let mut out = Matrix::zeros(q_tile.rows(), k_tile.rows());
    scores_into(q_tile.as_slice(), k_tile.as_slice(), q_tile.cols(), out.as_mut_slice());
    Ok(out)
}

/// Whether a tile whose per-row maxima are `m_local` is dominated by the
/// cumulative maxima `m_cum` (which already include `m_local`):
/// `max_rows(m_local - m_cum) <= -epsilon`.
///
/// Rows whose cumulative maximum is still `-inf` cast no vote; a tile where
/// no row votes is never skipped.
pub fn skip_condition(m_local: &[f64], m_cum: &[f64], epsilon: f64) -> bool {
    debug_assert_eq!(m_local.len(), m_cum.len());
    let mut worst = f64::NEG_INFINITY;
    let mut voted = false;
    for (&local, &cum) in m_local.iter().zip(m_cum) {
        if cum == f64::NEG_INFINITY {
            continue;
        }
        voted = true;
        worst = worst.max(local - cum);
    }
    voted && worst <= -epsilon
}

/// Running state of the online softmax for one query tile.
///
/// `m` is the running row maximum and is updated for every visited tile,
/// including skipped ones. `l` and `acc` are kept relative to `m_ref`, the
/// maximum in force at the last accumulated tile, and are rescaled lazily
/// when the next tile is accumulated.
#[derive(Clone, Debug)]
pub struct OnlineSoftmaxState {
    d: usize,
    m: Vec<f64>,
    m_ref: Vec<f64>,
    l: Vec<f64>,
    acc: Vec<f64>,
}

impl OnlineSoftmaxState {
    pub fn new(rows: usize, d: usize) -> Self {
        Self {
            d,
            m: vec![f64::NEG_INFINITY; rows],
            m_ref: vec![f64::NEG_INFINITY; rows],
            l: vec![0.0; rows],
            acc: vec![0.0; rows * d],
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn acc(&self) -> &[f64] {
        &self.acc
    }

    /// Folds a tile's local row maxima into the running maxima.
    pub fn update_max(&mut self, m_local: &[f64]) {
        for (m, &local) in self.m.iter_mut().zip(m_local) {
            *m = m.max(local);
        }
    }

    /// Accumulates `exp(S - m) V` for a score tile (`rows x k_rows`) and its
    /// value tile (`k_rows x d`). Must follow [`update_max`](Self::update_max)
    /// for the same tile.
    pub fn accumulate(&mut self, scores: &[f32], values: &[f32]) {
        let d = self.d;
        let k_rows = values.len() / d;
        let mut p = vec![0.0f64; k_rows];
        for a in 0..self.m.len() {
            let m_new = self.m[a];
            let acc = &mut self.acc[a * d..(a + 1) * d];
            if self.m_ref[a] != m_new {
                let factor = if self.m_ref[a] == f64::NEG_INFINITY {
                    0.0
                } else {
                    (self.m_ref[a] - m_new).exp()
                };
                self.l[a] *= factor;
                acc.iter_mut().for_each(|x| *x *= factor);
                self.m_ref[a] = m_new;
            }
            let row = &scores[a * k_rows..(a + 1) * k_rows];
            let mut rowsum = 0.0;
            for (pb, &s) in p.iter_mut().zip(row) {
                *pb = (f64::from(s) - m_new).exp();
                rowsum += *pb;
            }
            self.l[a] += rowsum;
            for (&pb, vb) in p.iter().zip(values.chunks_exact(d)) {
                for (x, &v) in acc.iter_mut().zip(vb) {
                    *x += pb * f64::from(v);
                }
            }
        }
    }

    /// Writes `acc / l` per row into `out`; rows with `l = 0` get zeros.
    /// Returns the number of such degenerate rows.
    pub fn finish_into(&self, out: &mut [f64]) -> usize {
        let d = self.d;
        let mut degenerate = 0;
        for (a, o) in out.chunks_exact_mut(d).enumerate() {
            let l = self.l[a];
            if l > 0.0 {
                for (x, &v) in o.iter_mut().zip(&self.acc[a * d..(a + 1) * d]) {
                    *x = v / l;
                }
            } else {
                o.fill(0.0);
                degenerate += 1;
            }
        }
        degenerate
    }
}
