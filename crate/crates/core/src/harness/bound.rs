use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Both sides of `||p_t V_t - p_prev V_prev|| <= ||p_t - p_prev|| ||V_t||_F + ||V_t - V_prev||_F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::param(format!("{name} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::param(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks the forward output-difference bound for one transition row.
///
/// The bound relies on `||p_prev|| <= 1`; rows are accepted when they sum to
/// one within `1e-6`, and that slack plus float rounding is allowed on the
/// right-hand side.
pub fn forward_bound_check(
    p_t: &[f64],
    p_prev: &[f64],
    v_t: &Matrix<f64>,
    v_prev: &Matrix<f64>,
) -> Result<BoundCheck> {
    check_distribution(p_t, "p_t")?;
    check_distribution(p_prev, "p_prev")?;
    let n = p_t.len();
    if p_prev.len() != n || v_t.rows() != n || v_prev.shape() != v_t.shape() {
        return Err(Error::shape(format!(
            "rows of length {n}/{} against values {:?}/{:?}",
            p_prev.len(),
            v_t.shape(),
            v_prev.shape()
        )));
    }
    let d = v_t.cols();
    let mut dy = vec![0.0; d];
    // sum of |terms| per column, for the rounding error of `dy`
    let mut magnitude = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            let (a, b) = (p_t[r] * v_t.get(r, c), p_prev[r] * v_prev.get(r, c));
            dy[c] += a - b;
            magnitude[c] += a.abs() + b.abs();
        }
    }
    let lhs = norm(dy.into_iter());
    // |fl(dy) - dy| <= gamma_k * magnitude with k = 2n + 2 roundings per column
    let k = (2 * n + 2) as f64;
    let gamma = k * f64::EPSILON / (1.0 - k * f64::EPSILON);
    let rounding = gamma * norm(magnitude.into_iter());
    let dp = norm(p_t.iter().zip(p_prev).map(|(a, b)| a - b));
    let dv = norm(v_t.as_slice().iter().zip(v_prev.as_slice()).map(|(a, b)| a - b));
    let rhs = dp * v_t.frobenius_norm() + dv;
    let p_prev_norm = norm(p_prev.iter().copied());
    let tolerance = (p_prev_norm - 1.0).max(0.0) * dv + 1e-12 * rhs + rounding;
    Ok(BoundCheck {
        holds: lhs <= rhs + tolerance,
        lhs,
        rhs,
        slack: rhs - lhs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckSummary {
    pub trials: usize,
    pub violations: usize,
    pub min_slack: f64,
    pub min_relative_slack: f64,
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let temperature = 10f64.powf(rng.gen_range(-1.0..1.5));
    let sparse = rng.gen_bool(0.2);
    let mut p: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && rng.gen_bool(0.5) {
                0.0
            } else {
                (temperature * rng.sample::<f64, _>(StandardNormal)).exp()
            }
        })
        .collect();
    if p.iter().all(|&x| x == 0.0) {
        p[rng.gen_range(0..n)] = 1.0;
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// Runs [`forward_bound_check`] on `trials` random valid inputs.
pub fn bound_check_experiment(trials: usize, seed: u64) -> Result<BoundCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = BoundCheckSummary {
        trials,
        violations: 0,
        min_slack: f64::INFINITY,
        min_relative_slack: f64::INFINITY,
    };
    for _ in 0..trials {
        let n = rng.gen_range(1..=24);
        let d = rng.gen_range(1..=8);
        let p_t = random_distribution(&mut rng, n);
        // nearby or unrelated previous row
        let p_prev = if rng.gen_bool(0.5) {
            let mut q: Vec<f64> = p_t
                .iter()
                .map(|&x| x * (1.0 + 0.1 * rng.gen::<f64>()))
                .collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|x| *x /= s);
            q
        } else {
            random_distribution(&mut rng, n)
        };
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let v_t = Matrix::from_fn(n, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let drift = match rng.gen_range(0..3) {
            0 => 0.0,
            1 => 1e-3,
            _ => 1.0,
        };
        let v_prev = Matrix::from_fn(n, d, |r, c| {
            v_t.get(r, c) + drift * scale * rng.sample::<f64, _>(StandardNormal)
        });
        let check = forward_bound_check(&p_t, &p_prev, &v_t, &v_prev)?;
        if !check.holds {
            summary.violations += 1;
        }
        summary.min_slack = summary.min_slack.min(check.slack);
        if check.rhs > 0.0 {
            summary.min_relative_slack = summary.min_relative_slack.min(check.slack / check.rhs);
        }
    }
    Ok(summary)
}
