//! Cholesky factorization with diagonal jitter escalation.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// First jitter added to the diagonal before factorizing.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// A Cholesky factor together with the jitter that made it succeed.
#[derive(Clone, Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn solve(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Matrix {
        self.chol.inverse()
    }
}

/// Factorizes the symmetric part of `a`, escalating jitter by 10x from
/// [`JITTER_START`] up to [`JITTER_MAX`].
pub fn cholesky_jittered(a: &Matrix) -> Result<Factor> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            op: "cholesky",
            detail: format!("expected square matrix, got {}x{}", a.nrows(), a.ncols()),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cholesky input".into()));
    }
    let sym = symmetrize(a);
    let mut jitter = JITTER_START;
    loop {
        let mut m = sym.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(Factor { chol, jitter });
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::NotPositiveDefinite { jitter: jitter / 10.0 });
        }
    }
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}
