//! Adjacency spectral embedding and embedding-dimension selection.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::symmetric_eigen;

/// Clipping margin applied to estimated edge probabilities.
pub const P_HAT_EPS: f64 = 1e-4;

const SYMMETRY_TOL: f64 = 1e-10;

/// Relative gap under which two eigenvalue magnitudes count as tied.
const TIE_TOL: f64 = 1e-10;

/// Low-dimensional spectral representation of a symmetric matrix.
///
/// Column `k` of `x_hat` is `|λ_k|^{1/2} u_k`, with eigenvalues ordered by
/// decreasing magnitude. The indefinite form `X̂ diag(sign λ) X̂ᵀ`
/// approximates the embedded matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    x_hat: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    p: usize,
    q: usize,
}

impl Embedding {
    /// Assembles an embedding from its parts, checking the column norms
    /// against the eigenvalues.
    pub fn from_parts(x_hat: DMatrix<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        if x_hat.ncols() != eigenvalues.len() {
            return Err(Error::Dimension(format!(
                "{} columns but {} eigenvalues",
                x_hat.ncols(),
                eigenvalues.len()
            )));
        }
        for (k, &lambda) in eigenvalues.iter().enumerate() {
            let norm2 = x_hat.column(k).norm_squared();
            if (norm2 - lambda.abs()).abs() > 1e-8 * lambda.abs().max(1e-300) + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "column {k} has squared norm {norm2}, expected |λ| = {}",
                    lambda.abs()
                )));
            }
        }
        let p = eigenvalues.iter().filter(|&&l| l >= 0.0).count();
        let q = eigenvalues.len() - p;
        Ok(Embedding { x_hat, eigenvalues, p, q })
    }

    pub fn x_hat(&self) -> &DMatrix<f64> {
        &self.x_hat
    }

    pub fn into_x_hat(self) -> DMatrix<f64> {
        self.x_hat
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Counts of positive and negative retained eigenvalues.
    pub fn signature(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.x_hat.nrows()
    }

    /// `±1` per column, following the sign of its eigenvalue.
    pub fn column_signs(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| if l >= 0.0 { 1.0 } else { -1.0 })
            .collect()
    }

    /// `X̂ diag(sign λ) X̂ᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let signs = self.column_signs();
        let signed = DMatrix::from_fn(self.x_hat.nrows(), self.x_hat.ncols(), |i, k| {
            self.x_hat[(i, k)] * signs[k]
        });
        signed * self.x_hat.transpose()
    }
}

/// All eigenpairs of a symmetric matrix, ordered for embedding.
///
/// Order is by decreasing `|λ|`; magnitudes within a relative `1e-10` of each
/// other are tied and resolved by putting the positive eigenvalue first, then
/// the lower position in the solver's ascending output.
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of_matrix(matrix: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(matrix)?;
        let raw = symmetric_eigen(matrix)?;
        let n = raw.values.len();
        let top = raw.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tie = TIE_TOL * top.max(f64::MIN_POSITIVE);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| raw.values[b].abs().total_cmp(&raw.values[a].abs()));
        // Re-sort each run of near-equal magnitudes by the tie rule.
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n
                && (raw.values[order[start]].abs() - raw.values[order[end]].abs()).abs() <= tie
            {
                end += 1;
            }
            order[start..end].sort_by(|&a, &b| {
                let pa = raw.values[a] >= 0.0;
                let pb = raw.values[b] >= 0.0;
                pb.cmp(&pa).then(a.cmp(&b))
            });
            start = end;
        }

        let values = order.iter().map(|&k| raw.values[k]).collect();
        let vectors = DMatrix::from_fn(n, n, |i, c| raw.vectors[(i, order[c])]);
        Ok(Spectrum { values, vectors })
    }

    pub fn of_graph(graph: &Graph) -> Result<Self> {
        Spectrum::of_matrix(&graph.adjacency_matrix())
    }

    /// Eigenvalues in embedding order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Eigenvalue magnitudes in embedding order (non-increasing).
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.abs()).collect()
    }

    /// Embedding into the leading `d` eigen-directions.
    pub fn embed(&self, d: usize) -> Result<Embedding> {
        let n = self.values.len();
        if d == 0 || d > n {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension {d} outside 1..={n}"
            )));
        }
        let mut x_hat = DMatrix::zeros(n, d);
        for k in 0..d {
            let scale = self.values[k].abs().sqrt();
            let column = self.vectors.column(k);
            let sign = column_sign(column.as_slice());
            for i in 0..n {
                x_hat[(i, k)] = sign * scale * column[i];
            }
        }
        let eigenvalues = self.values[..d].to_vec();
        let p = eigenvalues.iter().filter(|&&l| l >= 0.0).count();
        Ok(Embedding { x_hat, q: d - p, p, eigenvalues })
    }
}

/// Sign making the largest-magnitude entry positive (first such entry on
/// near-ties).
fn column_sign(column: &[f64]) -> f64 {
    let max = column.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let pivot = column
        .iter()
        .find(|v| v.abs() >= max * (1.0 - 1e-12))
        .copied()
        .unwrap_or(0.0);
    if pivot < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn check_symmetric(matrix: &DMatrix<f64>) -> Result<()> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, matrix.ncols())));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Adjacency spectral embedding of a symmetric matrix into `d` dimensions.
pub fn ase(matrix: &DMatrix<f64>, d: usize) -> Result<Embedding> {
    if d > matrix.nrows() {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {d} exceeds matrix size {}",
            matrix.nrows()
        )));
    }
    Spectrum::of_matrix(matrix)?.embed(d)
}

/// Embedding of a graph's adjacency matrix.
pub fn ase_graph(graph: &Graph, d: usize) -> Result<Embedding> {
    ase(&graph.adjacency_matrix(), d)
}

/// Estimated edge probabilities `X̂ I_{p,q} X̂ᵀ`, clipped to
/// `[P_HAT_EPS, 1 - P_HAT_EPS]` so that log-likelihoods stay finite.
pub fn estimate_p_hat(embedding: &Embedding) -> DMatrix<f64> {
    embedding
        .reconstruct()
        .map(|v| v.clamp(P_HAT_EPS, 1.0 - P_HAT_EPS))
}

/// Elbow of a scree plot by two-segment profile likelihood.
///
/// The magnitudes are split after position `q` for every
/// `q in 1..min(max_d, len)`; each segment is modelled as Gaussian with its
/// own mean and a shared variance, and the `q` of highest profile likelihood
/// is returned (smallest on ties).
pub fn select_dimension(eigenvalues: &[f64], max_d: usize) -> Result<usize> {
    let values: Vec<f64> = eigenvalues.iter().map(|v| v.abs()).collect();
    let len = values.len();
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "dimension selection needs at least 2 eigenvalues, got {len}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite eigenvalue".into()));
    }
    let upper = max_d.min(len).max(2);
    let scale = values.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let floor = (scale * 1e-12).max(f64::MIN_POSITIVE);

    let mut best = (1, f64::NEG_INFINITY);
    for q in 1..upper {
        let ll = profile_log_likelihood(&values, q, floor);
        if ll.partial_cmp(&best.1) == Some(Ordering::Greater) {
            best = (q, ll);
        }
    }
    Ok(best.0)
}

fn profile_log_likelihood(values: &[f64], q: usize, floor: f64) -> f64 {
    let (head, tail) = values.split_at(q);
    let ss = |seg: &[f64]| {
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    };
    let n = values.len() as f64;
    let variance = ((ss(head) + ss(tail)) / n).max(floor);
    -0.5 * n * ((2.0 * std::f64::consts::PI * variance).ln() + 1.0)
}
