//! Small dense helpers shared by the solvers and certifiers.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Incrementally built orthonormal basis, used to keep working sets and
/// gradient families linearly independent.
#[derive(Debug, Clone, Default)]
pub struct OrthoBasis {
    rows: Vec<Vec<f64>>,
}

impl OrthoBasis {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds `v` if its component orthogonal to the span exceeds
    /// `rel_tol · ‖v‖`; returns whether it was added.
    pub fn try_add(&mut self, v: &[f64], rel_tol: f64) -> bool {
        let norm = norm2(v);
        if norm == 0.0 {
            return false;
        }
        let mut r = v.to_vec();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &self.rows {
                let c = dot(q, &r);
                axpy(&mut r, -c, q);
            }
        }
        let rn = norm2(&r);
        if rn <= rel_tol * norm {
            return false;
        }
        r.iter_mut().for_each(|x| *x /= rn);
        self.rows.push(r);
        true
    }
}
