//! Small shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `L x = rhs` for symmetric PSD `L` with null space span{1} by
/// projecting onto the range: x = Σ_{λ_k > tol} (q_kᵀ rhs / λ_k) q_k.
/// Errors if `rhs` has a component in the null space beyond `tol` (relative).
pub(crate) fn laplacian_pseudo_solve(l: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = l.nrows();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    let sym = (l + l.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cutoff = 1e-10 * max_ev.max(1.0);

    let rhs_scale = rhs.norm().max(1.0);
    let mut x = DVector::zeros(n);
    for k in 0..n {
        let lambda = eig.eigenvalues[k];
        let q = eig.eigenvectors.column(k);
        let coeff = q.dot(rhs);
        if lambda.abs() <= cutoff {
            if coeff.abs() > 1e-8 * rhs_scale {
                return Err(Error::Numerical(format!(
                    "right-hand side has null-space component {coeff:.3e}; system unsolvable"
                )));
            }
        } else {
            x += q * (coeff / lambda);
        }
    }
    Ok(x)
}

/// Extremal eigenvalues (min, max) of the symmetric part of `m`.
pub(crate) fn symmetric_extremal_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in ev.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}
