use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionEngine, SkipMode};
use crate::calibration::relative_l1_error_slices;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::operand::{AttentionOperand, Trajectory};

/// Feedback path that carries each step's attention output into the next
/// step's operands: `X'_{t+1} = X_{t+1} + coupling * norm(O_t M_t) R_role`,
/// where `M_t` (per step) and `R_role` (per role) are fixed seeded orthogonal
/// maps and `norm` rescales every token to unit RMS. The normalisation keeps
/// the feedback magnitude fixed, so a perturbation changes the direction of
/// later operands rather than their scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub coupling: f64,
    pub seed: u64,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            coupling: 2.0,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPoint {
    pub inject_t: usize,
    /// Error of the perturbed step itself.
    pub eta_inject: f64,
    /// Error of the last step's attention output.
    pub eta_final: f64,
}

/// Gram-Schmidt orthonormalisation of a Gaussian `d x d` matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Matrix<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for r in &rows {
            let proj: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    Matrix::from_vec(d, d, rows.concat()).expect("square")
}

fn matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for r in 0..a.rows() {
        let o = out.row_mut(r);
        for (k, &x) in a.row(r).iter().enumerate() {
            for (y, &z) in o.iter_mut().zip(b.row(k)) {
                *y += x * z;
            }
        }
    }
    out
}

/// `O M` with every row rescaled to unit RMS.
fn feedback_state(output: &Matrix<f64>, mixing: &Matrix<f64>) -> Matrix<f64> {
    let mut h = matmul(output, mixing);
    let d = h.cols() as f64;
    for r in 0..h.rows() {
        let row = h.row_mut(r);
        let rms = (row.iter().map(|x| x * x).sum::<f64>() / d).sqrt();
        if rms > 0.0 {
            row.iter_mut().for_each(|x| *x /= rms);
        }
    }
    h
}

struct Maps {
    step: Vec<Matrix<f64>>,
    role: [Matrix<f64>; 3],
}

impl Maps {
    fn new(propagation: &Propagation, steps: usize, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(propagation.seed);
        let role = [
            random_orthogonal(&mut rng, d),
            random_orthogonal(&mut rng, d),
            random_orthogonal(&mut rng, d),
        ];
        let step = (0..steps).map(|_| random_orthogonal(&mut rng, d)).collect();
        Self { step, role }
    }
}

fn coupled(op: &AttentionOperand, feedback: Option<&Matrix<f64>>, maps: &Maps, coupling: f64) -> Result<AttentionOperand> {
    let Some(h) = feedback else {
        return Ok(op.clone());
    };
    let mut mats = [op.q(), op.k(), op.v()].into_iter().zip(&maps.role).map(|(x, r)| {
        let push = matmul(h, r);
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (f64::from(x.get(i, j)) + coupling * push.get(i, j)) as f32
        })
    });
    let (q, k, v) = (mats.next().unwrap(), mats.next().unwrap(), mats.next().unwrap());
    AttentionOperand::new(q, k, v)
}

/// Runs the coupled chain, applying `inject_mode` at `inject_t` and dense
/// tiled attention elsewhere. Returns the outputs of every step.
fn run_chain(
    engine: &AttentionEngine,
    trajectory: &Trajectory,
    propagation: &Propagation,
    maps: &Maps,
    inject: Option<(usize, SkipMode)>,
) -> Result<Vec<Vec<Matrix<f64>>>> {
    let mut outputs: Vec<Vec<Matrix<f64>>> = Vec::with_capacity(trajectory.len());
    let mut feedback: Option<Vec<Matrix<f64>>> = None;
    for t in 0..trajectory.len() {
        let ops = trajectory
            .step(t)
            .iter()
            .enumerate()
            .map(|(s, op)| coupled(op, feedback.as_ref().map(|f| &f[s]), maps, propagation.coupling))
            .collect::<Result<Vec<_>>>()?;
        let mode = match inject {
            Some((ti, mode)) if ti == t => mode,
            _ => SkipMode::Dense,
        };
        let step = engine.run_step(&ops, mode, None)?;
        feedback = Some(step.outputs.iter().map(|o| feedback_state(o, &maps.step[t])).collect());
        outputs.push(step.outputs);
    }
    Ok(outputs)
}

/// Final-step error caused by a single PV-skip step at each injection timestep,
/// with the rest of the chain evaluated densely.
pub fn perturbation_experiment(
    engine: &AttentionEngine,
    trajectory: &Trajectory,
    inject_ts: &[usize],
    epsilon_inject: f64,
    propagation: &Propagation,
) -> Result<Vec<PerturbationPoint>> {
    let mode = SkipMode::pv(epsilon_inject)?;
    let steps = trajectory.len();
    if let Some(&bad) = inject_ts.iter().find(|&&t| t >= steps) {
        return Err(Error::param(format!("injection timestep {bad} outside T={steps}")));
    }
    let maps = Maps::new(propagation, steps, trajectory.d());
    let reference = run_chain(engine, trajectory, propagation, &maps, None)?;
    let last = steps - 1;
    inject_ts
        .iter()
        .map(|&t| {
            let perturbed = run_chain(engine, trajectory, propagation, &maps, Some((t, mode)))?;
            Ok(PerturbationPoint {
                inject_t: t,
                eta_inject: relative_l1_error_slices(&perturbed[t], &reference[t])?,
                eta_final: relative_l1_error_slices(&perturbed[last], &reference[last])?,
            })
        })
        .collect()
}
