//! Dense linear-algebra kernels: matrix exponentials, eigendecompositions,
//! and the process-noise Gramian integrals of the exact discretization.
//!
//! Everything here is a pure function of its inputs (or an immutable
//! precomputed kernel) and safe to use from multiple threads.

mod eig;
mod expm;
mod gramian;

pub use eig::{Eigendecomposition, diagonalize};
pub use expm::matrix_exponential;
pub use gramian::{
    GramianMethod, GramianResult, TransitionKernel, backward_gramian, drift_integral,
    forward_gramian, gramian_vanloan,
};

pub(crate) use eig::{balance, matrix_is_hurwitz};
#[cfg(test)]
pub(crate) use expm::one_norm;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `(m + mᵀ)/2`. Bounds floating-point asymmetry drift in covariance updates.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Factor `L` with `L Lᵀ = m` for symmetric PSD `m`, via the symmetric
/// eigendecomposition with negative eigenvalues (roundoff) clamped to zero.
/// Unlike Cholesky this tolerates singular and slightly indefinite inputs.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut q = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        q.column_mut(j).scale_mut(s);
    }
    q
}

/// Rejects non-square or non-finite matrices up front so the kernels can
/// assume clean inputs.
pub(crate) fn ensure_square_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.nrows() != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "{what}: expected a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what}: non-finite entries")));
    }
    Ok(())
}
