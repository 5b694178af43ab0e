#![allow(dead_code)]

use evoskip::{AttentionOperand, Matrix, TileGeometry, TileStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian operand; `logit_scale` is the standard deviation of the Q/K entries.
pub fn gaussian_operand(n: usize, d: usize, logit_scale: f32, seed: u64) -> AttentionOperand {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qk = Normal::new(0.0f32, logit_scale).unwrap();
    let v = Normal::new(0.0f32, 1.0).unwrap();
    let q = Matrix::from_fn(n, d, |_, _| qk.sample(&mut rng));
    let k = Matrix::from_fn(n, d, |_, _| qk.sample(&mut rng));
    let v = Matrix::from_fn(n, d, |_, _| v.sample(&mut rng));
    AttentionOperand::new(q, k, v).unwrap()
}

/// Full score matrix in double precision.
pub fn scores_f64(op: &AttentionOperand) -> Vec<Vec<f64>> {
    let (n, d) = (op.n(), op.d());
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let mut s = 0.0;
                    for x in 0..d {
                        s += f64::from(op.q().get(r, x)) * f64::from(op.k().get(c, x));
                    }
                    s / (d as f64).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Two-pass softmax reference: first the row maxima, then the normalised
/// weighted sum.
pub fn two_pass_attention(op: &AttentionOperand) -> Matrix<f64> {
    let (n, d) = (op.n(), op.d());
    let s = scores_f64(op);
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        let max = s[r].iter().cloned().fold(f64::MIN, f64::max);
        let mut denom = 0.0;
        let mut num = vec![0.0; d];
        for c in 0..n {
            let w = (s[r][c] - max).exp();
            denom += w;
            for x in 0..d {
                num[x] += w * f64::from(op.v().get(c, x));
            }
        }
        for x in 0..d {
            out.set(r, x, num[x] / denom);
        }
    }
    out
}

/// Largest `exp(S_ij - m_final)` over the entries of each skipped tile, where
/// `m_final` is each row's maximum over all tiles that were not bypassed by
/// the mask. Returns `(tile index, max weight)` for every skipped tile.
pub fn skipped_tile_weights(
    op: &AttentionOperand,
    geom: &TileGeometry,
    statuses: &[TileStatus],
) -> Vec<((usize, usize), f64)> {
    let s = scores_f64(op);
    let tj = geom.tj();
    let mut m_final = vec![f64::NEG_INFINITY; op.n()];
    for i in 0..geom.ti() {
        for j in 0..tj {
            if statuses[i * tj + j] == TileStatus::Masked {
                continue;
            }
            for r in geom.query_rows(i) {
                for c in geom.key_rows(j) {
                    m_final[r] = m_final[r].max(s[r][c]);
                }
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..geom.ti() {
        for j in 0..tj {
            if !statuses[i * tj + j].fired() {
                continue;
            }
            let mut worst = 0.0f64;
            for r in geom.query_rows(i) {
                for c in geom.key_rows(j) {
                    worst = worst.max((s[r][c] - m_final[r]).exp());
                }
            }
            out.push(((i, j), worst));
        }
    }
    out
}

/// Slack for comparing 32-bit engine scores with 64-bit oracle scores in the
/// exponent.
pub const SCORE_ROUNDING: f64 = 1e-4;

/// Locality-structured operands from the trajectory generator (one step,
/// `heads` slices).
pub fn local_operands(n: usize, d: usize, heads: usize, seed: u64) -> Vec<AttentionOperand> {
    let cfg = evoskip::harness::TrajectoryConfig {
        steps: 1,
        layers: 1,
        heads,
        n,
        d,
        seed,
        ..Default::default()
    };
    evoskip::harness::generate_trajectory(&cfg).unwrap().steps()[0].clone()
}
