//! Dense solves for the small systems in parameter estimation.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

pub(crate) struct LstsqSolution {
    /// `cols x targets`, row-major by unknown.
    pub coef: DMatrix<f64>,
    pub rank: usize,
}

/// Least-squares solution of `design * X = rhs` via SVD, with numerical rank.
///
/// `design` is `n x m` and `rhs` is `n x k`, both row-major.
pub(crate) fn lstsq(design: &[Vec<f64>], rhs: &[Vec<f64>]) -> Result<LstsqSolution> {
    let n = design.len();
    if n == 0 || rhs.len() != n {
        return Err(Error::ShapeMismatch("design and right-hand side row counts differ"));
    }
    let m = design[0].len();
    let k = rhs[0].len();
    if design.iter().any(|r| r.len() != m) || rhs.iter().any(|r| r.len() != k) {
        return Err(Error::ShapeMismatch("ragged rows"));
    }
    let x = DMatrix::from_fn(n, m, |r, c| design[r][c]);
    let y = DMatrix::from_fn(n, k, |r, c| rhs[r][c]);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coef = svd
        .solve(&y, cutoff)
        .map_err(|_| Error::ShapeMismatch("SVD solve failed"))?;
    Ok(LstsqSolution { coef, rank })
}
