//! Dense decompositions used by the embedding and alignment code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub(crate) struct SymmetricSpectrum {
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: DMatrix<f64>,
}

pub(crate) fn symmetric_eigen(matrix: &DMatrix<f64>) -> Result<SymmetricSpectrum> {
    let n = matrix.nrows();
    let mat = faer::Mat::<f64>::from_fn(n, n, |i, j| matrix[(i, j)]);
    let evd = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<f64> = (0..n).map(|k| s[k]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok(SymmetricSpectrum { values, vectors })
}

/// Orthogonal polar factor `U Vᵀ` of a small square matrix `M = U Σ Vᵀ`,
/// plus whether `M` was numerically rank deficient.
pub(crate) fn polar_factor(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let svd = m.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("singular value decomposition failed".into())),
    };
    let top = svd.singular_values.max();
    let min = svd.singular_values.min();
    let deficient = !(top > 0.0) || min <= 1e-12 * top;
    let w = u * v_t;
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite singular vectors".into()));
    }
    Ok((w, deficient))
}
