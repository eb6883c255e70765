//! Random linear bilevel instances.
//!
//! Stream order for a given seed (ChaCha8, `seed_from_u64`): the matrices
//! `A1, A2, B2` are filled row-major, each entry drawing first a keep test
//! `U < density` and then, if kept, its value `U ∈ [0, 1)`; the vectors
//! `b1, b2, c1, c2, d2` follow, one uniform draw per entry (vectors are
//! dense). Bounds are fixed at `l_b = −10`, `u_b = 10`.
//!
//! If the lower-level LP is infeasible at `x = 0` the seed is advanced by one
//! and the instance regenerated. With nonnegative data `y = l_b` is always
//! feasible there, so this is a guard rather than a common path.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LinearBilevelData, ModelError};
use crate::solve::{solve_lp, Status};

const MAX_RETRIES: u32 = 100;

/// A generated instance together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub data: LinearBilevelData,
    /// Seed that produced `data`.
    pub seed: u64,
    /// Number of rejected seeds before `seed`.
    pub retries: u32,
}

fn sample(seed: u64, dims: (usize, usize, usize, usize), density: f64) -> LinearBilevelData {
    let (n, p, m, q) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sparse = |rows: usize, cols: usize| {
        let mut mat = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if rng.gen::<f64>() < density {
                    mat[(i, j)] = rng.gen::<f64>();
                }
            }
        }
        mat
    };
    let a1 = sparse(p, n);
    let a2 = sparse(q, n);
    let b2_mat = sparse(q, m);
    let mut dense = |len: usize| (0..len).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>();
    let b1 = dense(p);
    let b2 = dense(q);
    let c1 = dense(n);
    let c2 = dense(m);
    let d2 = dense(m);
    LinearBilevelData {
        a1,
        b1,
        c1,
        c2,
        d2,
        a2,
        b2_mat,
        b2,
        l_b: vec![-10.0; m],
        u_b: vec![10.0; m],
    }
}

pub fn generate_instance_with_retries(
    seed: u64,
    dims: (usize, usize, usize, usize),
    density: f64,
) -> Result<Generated, ModelError> {
    let (n, p, m, q) = dims;
    if n == 0 || p == 0 || m == 0 || q == 0 {
        return Err(ModelError::InvalidData(format!(
            "dimensions must be positive, got {dims:?}"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(ModelError::InvalidData(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    let mut s = seed;
    for retries in 0..=MAX_RETRIES {
        let data = sample(s, dims, density);
        let feasible = solve_lp(&data.lower_level_lp(&vec![0.0; n]))
            .map(|r| r.status == Status::Optimal)
            .unwrap_or(false);
        if feasible {
            return Ok(Generated { data, seed: s, retries });
        }
        s = s.wrapping_add(1);
    }
    Err(ModelError::InvalidData(format!(
        "no feasible instance within {MAX_RETRIES} seeds of {seed}"
    )))
}

pub fn generate_instance(
    seed: u64,
    dims: (usize, usize, usize, usize),
    density: f64,
) -> Result<LinearBilevelData, ModelError> {
    generate_instance_with_retries(seed, dims, density).map(|g| g.data)
}
