//! Sparse direct solves for the absorbing-chain systems used by the verifier.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Solves `A x = b` for a square sparse matrix given as `(row, col, value)` triplets.
/// Duplicate triplets are summed.
pub fn solve_sparse(n: usize, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let trips: Vec<Triplet<usize, usize, f64>> = triplets
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| Error::Singular(format!("{e:?}")))?;
    let lu = mat
        .as_ref()
        .sp_lu()
        .map_err(|e| Error::Singular(format!("{e:?}")))?;
    let b = Col::<f64>::from_fn(n, |i| rhs[i]);
    let x = lu.solve(&b);
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution has non-finite entries".into()));
    }
    Ok(out)
}
