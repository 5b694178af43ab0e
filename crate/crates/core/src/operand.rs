use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One (Q, K, V) triple for a single head at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOperand {
    q: Matrix<f32>,
    k: Matrix<f32>,
    v: Matrix<f32>,
}

impl AttentionOperand {
    /// Validates that all three matrices are `n x d` with `n, d >= 1` and finite entries.
    pub fn new(q: Matrix<f32>, k: Matrix<f32>, v: Matrix<f32>) -> Result<Self> {
        let (n, d) = q.shape();
        if n == 0 || d == 0 {
            return Err(Error::shape(format!("operand must be non-empty, got {n}x{d}")));
        }
        for (name, m) in [("K", &k), ("V", &v)] {
            if m.shape() != (n, d) {
                return Err(Error::shape(format!(
                    "{name} is {}x{}, expected {n}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for (name, m) in [("Q", &q), ("K", &k), ("V", &v)] {
            if !m.is_finite() {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        Ok(Self { q, k, v })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn d(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &Matrix<f32> {
        &self.q
    }

    pub fn k(&self) -> &Matrix<f32> {
        &self.k
    }

    pub fn v(&self) -> &Matrix<f32> {
        &self.v
    }

    pub fn into_parts(self) -> (Matrix<f32>, Matrix<f32>, Matrix<f32>) {
        (self.q, self.k, self.v)
    }
}

/// Operands for every (timestep, layer, head), all sharing `n` and `d`.
///
/// `steps[t]` holds the `layers * heads` slices of timestep `t` in
/// layer-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    layers: usize,
    heads: usize,
    n: usize,
    d: usize,
    steps: Vec<Vec<AttentionOperand>>,
}

impl Trajectory {
    pub fn new(layers: usize, heads: usize, steps: Vec<Vec<AttentionOperand>>) -> Result<Self> {
        if layers == 0 || heads == 0 || steps.is_empty() {
            return Err(Error::param("trajectory needs at least one step, layer and head"));
        }
        let first = steps[0]
            .first()
            .ok_or_else(|| Error::shape("timestep 0 has no operands"))?;
        let (n, d) = (first.n(), first.d());
        for (t, step) in steps.iter().enumerate() {
            if step.len() != layers * heads {
                return Err(Error::shape(format!(
                    "timestep {t} has {} slices, expected {}",
                    step.len(),
                    layers * heads
                )));
            }
            if let Some(op) = step.iter().find(|op| op.n() != n || op.d() != d) {
                return Err(Error::shape(format!(
                    "timestep {t} has a {}x{} operand, expected {n}x{d}",
                    op.n(),
                    op.d()
                )));
            }
        }
        Ok(Self {
            layers,
            heads,
            n,
            d,
            steps,
        })
    }

    /// Single-head, single-layer trajectory.
    pub fn from_operands(ops: Vec<AttentionOperand>) -> Result<Self> {
        Self::new(1, 1, ops.into_iter().map(|op| vec![op]).collect())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn slices(&self) -> usize {
        self.layers * self.heads
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize) -> &[AttentionOperand] {
        &self.steps[t]
    }

    pub fn operand(&self, t: usize, layer: usize, head: usize) -> &AttentionOperand {
        &self.steps[t][layer * self.heads + head]
    }

    pub fn steps(&self) -> &[Vec<AttentionOperand>] {
        &self.steps
    }
}
