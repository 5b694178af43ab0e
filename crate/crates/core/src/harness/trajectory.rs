use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::operand::{AttentionOperand, Trajectory};

/// Shape and dynamics of a synthetic trajectory.
///
/// Each (layer, head, role) tensor moves along a quarter great circle between
/// two orthonormalised Gaussian endpoints, rescaled to a fixed norm, plus
/// independent per-step jitter of relative size `rho`. Queries and keys share
/// a smooth positional component of strength `locality`, which concentrates
/// attention near the diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub layers: usize,
    pub heads: usize,
    pub n: usize,
    pub d: usize,
    pub rho: f64,
    pub seed: u64,
    /// Standard deviation of the random part of the attention logits.
    pub score_scale: f64,
    /// Peak logit added between coincident positions.
    pub locality: f64,
    /// Use the same endpoint twice, so only jitter moves the operands.
    pub stationary: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            layers: 1,
            heads: 2,
            n: 256,
            d: 32,
            rho: 0.02,
            seed: 0,
            score_scale: 1.0,
            locality: 8.0,
            stationary: false,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.layers == 0 || self.heads == 0 || self.n == 0 || self.d == 0 {
            return Err(Error::param("trajectory counts must all be positive"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.score_scale.is_finite() && self.score_scale >= 0.0) {
            return Err(Error::param("score_scale must be finite and >= 0"));
        }
        if !(self.locality.is_finite() && self.locality >= 0.0) {
            return Err(Error::param("locality must be finite and >= 0"));
        }
        Ok(())
    }

    /// Interpolation angle of timestep `t`.
    pub fn angle(&self, t: usize) -> f64 {
        if self.steps < 2 {
            0.0
        } else {
            FRAC_PI_2 * t as f64 / (self.steps - 1) as f64
        }
    }
}

const ROLES: usize = 3;

struct Endpoints {
    a: Vec<f64>,
    b: Vec<f64>,
    /// Target Frobenius norm.
    norm: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Rows `sqrt(2/d) [cos(w_k p), sin(w_k p)]` with Gaussian frequencies, so that
/// row inner products approximate `exp(-(p - p')^2 / (2 l^2))`.
fn positional(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    let bandwidth = (n as f64 / 16.0).max(1.0);
    let pairs = d / 2;
    let freqs: Vec<f64> = (0..pairs)
        .map(|_| rng.sample::<f64, _>(StandardNormal) / bandwidth)
        .collect();
    let norm = if pairs > 0 { (1.0 / pairs as f64).sqrt() } else { 0.0 };
    let mut e = vec![0.0; n * d];
    for p in 0..n {
        for (k, w) in freqs.iter().enumerate() {
            e[p * d + 2 * k] = norm * (w * p as f64).cos();
            e[p * d + 2 * k + 1] = norm * (w * p as f64).sin();
        }
    }
    e
}

/// Deterministic trajectory for `config`.
pub fn generate_trajectory(config: &TrajectoryConfig) -> Result<Trajectory> {
    generate_trajectory_with(config, Execution::default())
}

pub fn generate_trajectory_with(config: &TrajectoryConfig, execution: Execution) -> Result<Trajectory> {
    config.validate()?;
    let (n, d) = (config.n, config.d);
    let len = n * d;
    let slices = config.layers * config.heads;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let pos = positional(&mut rng, n, d);
    let pos_gain = (config.locality * (d as f64).sqrt()).sqrt();
    let rms = [config.score_scale.sqrt(), config.score_scale.sqrt(), 1.0];
    let endpoints: Vec<Endpoints> = (0..slices * ROLES)
        .map(|idx| {
            let mut a = gaussian(&mut rng, len);
            normalize(&mut a);
            let b = if config.stationary {
                a.clone()
            } else {
                let mut b = gaussian(&mut rng, len);
                let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                b.iter_mut().zip(&a).for_each(|(y, x)| *y -= proj * x);
                normalize(&mut b);
                b
            };
            Endpoints {
                a,
                b,
                norm: rms[idx % ROLES] * (len as f64).sqrt(),
            }
        })
        .collect();

    let steps = execution.map_indices(config.steps, |t| {
        let theta = config.angle(t);
        let (c, s) = (theta.cos(), theta.sin());
        let mut jitter_rng = ChaCha8Rng::seed_from_u64(config.seed);
        jitter_rng.set_stream(t as u64 + 1);
        (0..slices)
            .map(|slice| {
                let mut mats = (0..ROLES).map(|role| {
                    let ep = &endpoints[slice * ROLES + role];
                    let mut x: Vec<f64> = ep.a.iter().zip(&ep.b).map(|(a, b)| c * a + s * b).collect();
                    normalize(&mut x);
                    let jitter_sd = config.rho * ep.norm / (len as f64).sqrt();
                    let data = x
                        .iter()
                        .enumerate()
                        .map(|(idx, &u)| {
                            let mut v = ep.norm * u;
                            if config.rho > 0.0 {
                                v += jitter_sd * jitter_rng.sample::<f64, _>(StandardNormal);
                            }
                            if role < 2 {
                                v += pos_gain * pos[idx];
                            }
                            v as f32
                        })
                        .collect();
                    Matrix::from_vec(n, d, data).expect("shape")
                });
                let (q, k, v) = (mats.next().unwrap(), mats.next().unwrap(), mats.next().unwrap());
                AttentionOperand::new(q, k, v)
            })
            .collect::<Result<Vec<_>>>()
    });
    let steps = steps.into_iter().collect::<Result<Vec<_>>>()?;
    Trajectory::new(config.layers, config.heads, steps)
}
