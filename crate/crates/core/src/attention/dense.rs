use crate::matrix::Matrix;
use crate::operand::AttentionOperand;

/// Row-stochastic attention matrix `softmax(Q K^T / sqrt(d))`, in double precision.
pub fn dense_probabilities(op: &AttentionOperand) -> Matrix<f64> {
    let (n, d) = (op.n(), op.d());
    let q = op.q().to_f64();
    let k = op.k().to_f64();
    let scale = (d as f64).sqrt();
    let mut p = Matrix::zeros(n, n);
    for r in 0..n {
        let qr = q.row(r);
        let row = p.row_mut(r);
        for (c, s) in row.iter_mut().enumerate() {
            *s = qr.iter().zip(k.row(c)).map(|(a, b)| a * b).sum::<f64>() / scale;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
    }
    p
}

/// Reference attention `softmax(Q K^T / sqrt(d)) V` computed in double precision.
///
/// Operand validation (shapes, finiteness) happens when the
/// [`AttentionOperand`] is built, so this cannot fail.
pub fn dense_attention(op: &AttentionOperand) -> Matrix<f64> {
    let (n, d) = (op.n(), op.d());
    let p = dense_probabilities(op);
    let v = op.v().to_f64();
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        let o = out.row_mut(r);
        for (c, &w) in p.row(r).iter().enumerate() {
            for (x, vc) in o.iter_mut().zip(v.row(c)) {
                *x += w * vc;
            }
        }
    }
    out
}
