//! Orthogonal alignment of two embeddings.
//!
//! Spectral embeddings are only defined up to an orthogonal transformation.
//! With at least `d` seeds the transformation comes from an orthogonal
//! Procrustes problem on the seed rows; with fewer (including none) it is
//! estimated by a rigid coherent-point-drift EM restricted to rotations and
//! reflections, without scaling or translation.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::polar_factor;

/// How a rotation was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMethod {
    Procrustes,
    Registration,
}

impl AlignMethod {
    pub fn name(self) -> &'static str {
        match self {
            AlignMethod::Procrustes => "procrustes",
            AlignMethod::Registration => "registration",
        }
    }
}

impl std::str::FromStr for AlignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procrustes" => Ok(AlignMethod::Procrustes),
            "registration" | "cpd" => Ok(AlignMethod::Registration),
            other => Err(Error::Config(format!("unknown alignment method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignDiagnostics {
    /// Cross-product matrix was numerically rank deficient (Procrustes).
    pub rank_deficient: bool,
    /// Final EM variance (registration).
    pub sigma2: Option<f64>,
    /// EM iterations performed (registration).
    pub iterations: usize,
    /// Variance after initialization and after every EM iteration.
    pub sigma2_trace: Vec<f64>,
}

/// Orthogonal `W` such that `X₁ W` is aligned with `X₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    w: DMatrix<f64>,
    method: AlignMethod,
    diagnostics: AlignDiagnostics,
}

impl Rotation {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn method(&self) -> AlignMethod {
        self.method
    }

    pub fn diagnostics(&self) -> &AlignDiagnostics {
        &self.diagnostics
    }

    /// Rotation read back from a file; validates orthogonality.
    pub fn from_matrix(w: DMatrix<f64>, method: AlignMethod) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Dimension(format!("{}x{} rotation", w.nrows(), w.ncols())));
        }
        let defect = (w.transpose() * &w - DMatrix::identity(w.nrows(), w.ncols())).norm();
        if defect >= 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthogonal (‖WᵀW − I‖ = {defect:e})"
            )));
        }
        Ok(Rotation { w, method, diagnostics: AlignDiagnostics::default() })
    }

    /// `x · W`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.w.nrows() {
            return Err(Error::Dimension(format!(
                "{} columns against a {}x{} rotation",
                x.ncols(),
                self.w.nrows(),
                self.w.ncols()
            )));
        }
        Ok(x * &self.w)
    }
}

/// Orthogonal `W` minimizing `‖x1_seeds · W − x2_seeds‖_F`, with row `k` of
/// each input belonging to the same seed pair.
pub fn procrustes(x1_seeds: &DMatrix<f64>, x2_seeds: &DMatrix<f64>) -> Result<Rotation> {
    if x1_seeds.shape() != x2_seeds.shape() {
        return Err(Error::Dimension(format!(
            "seed blocks are {:?} and {:?}",
            x1_seeds.shape(),
            x2_seeds.shape()
        )));
    }
    if x1_seeds.nrows() == 0 || x1_seeds.ncols() == 0 {
        return Err(Error::InvalidArgument("Procrustes needs at least one seed row".into()));
    }
    // max tr(Wᵀ X₁ᵀX₂) over orthogonal W is attained at the polar factor of X₁ᵀX₂.
    let cross = x1_seeds.transpose() * x2_seeds;
    let (w, rank_deficient) = polar_factor(&cross)?;
    Ok(Rotation {
        w,
        method: AlignMethod::Procrustes,
        diagnostics: AlignDiagnostics { rank_deficient, ..Default::default() },
    })
}

/// Tuning of the rigid registration EM.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub max_iters: usize,
    /// Stop once the relative change of σ² falls below this.
    pub tol: f64,
    /// Weight `w` of the uniform outlier component.
    pub outlier_weight: f64,
    /// Largest dimension for which all `2^d` sign flips are tried.
    pub max_sign_sweep_dim: usize,
    /// Random orthogonal starts used above that dimension.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_iters: 50,
            tol: 1e-6,
            outlier_weight: 0.1,
            max_sign_sweep_dim: 10,
            random_starts: 200,
            seed: 0,
        }
    }
}

/// σ² below which the two clouds are considered perfectly aligned.
const SIGMA2_FLOOR: f64 = 1e-12;

/// Rigid coherent point drift with scale fixed to 1 and no translation.
///
/// Rows of `x1` act as Gaussian centroids (after transformation by `W`) for
/// the rows of `x2`. The M-step sets `W` to the polar factor of the weighted
/// cross moment, so reflections are allowed.
pub fn register(x1: &DMatrix<f64>, x2: &DMatrix<f64>, config: &RegistrationConfig) -> Result<Rotation> {
    let (n, d) = x1.shape();
    let m = x2.nrows();
    if x2.ncols() != d {
        return Err(Error::Dimension(format!("embeddings have {d} and {} columns", x2.ncols())));
    }
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::InvalidArgument("registration needs non-empty point sets".into()));
    }
    if !(0.0..1.0).contains(&config.outlier_weight) {
        return Err(Error::InvalidArgument(format!(
            "outlier weight {} outside [0, 1)",
            config.outlier_weight
        )));
    }

    let (mut w, mut sigma2) = initial_rotation(x1, x2, config);
    let mut trace = vec![sigma2];
    let mut iterations = 0;
    let d_f = d as f64;
    let outlier_ratio = config.outlier_weight / (1.0 - config.outlier_weight) * n as f64 / m as f64;

    let mut weights = DMatrix::<f64>::zeros(n, m);
    while iterations < config.max_iters && sigma2 >= SIGMA2_FLOOR {
        let moved = x1 * &w;

        // E-step.
        let c = (2.0 * std::f64::consts::PI * sigma2).powf(d_f / 2.0) * outlier_ratio;
        for j in 0..m {
            let mut top = f64::NEG_INFINITY;
            for i in 0..n {
                let e = -squared_distance(&moved, i, x2, j) / (2.0 * sigma2);
                weights[(i, j)] = e;
                top = top.max(e);
            }
            let mut denom = c * (-top).exp();
            for i in 0..n {
                let v = (weights[(i, j)] - top).exp();
                weights[(i, j)] = v;
                denom += v;
            }
            for i in 0..n {
                weights[(i, j)] = if denom.is_infinite() { 0.0 } else { weights[(i, j)] / denom };
            }
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite correspondence probabilities".into()));
        }
        let mass: f64 = weights.sum();
        if !(mass > 0.0) {
            return Err(Error::Numerical("all points assigned to the outlier component".into()));
        }

        // M-step: maximize tr(Wᵀ Σ P_ij x1_i x2_jᵀ) over orthogonal W.
        let cross = x1.transpose() * &weights * x2;
        let (next_w, _) = polar_factor(&cross)?;
        w = next_w;

        let moved = x1 * &w;
        let mut residual = 0.0;
        for j in 0..m {
            for i in 0..n {
                let p = weights[(i, j)];
                if p > 0.0 {
                    residual += p * squared_distance(&moved, i, x2, j);
                }
            }
        }
        let next = residual / (mass * d_f);
        if !next.is_finite() {
            return Err(Error::Numerical("non-finite variance".into()));
        }
        iterations += 1;
        trace.push(next);
        let change = (sigma2 - next).abs() / sigma2;
        sigma2 = next;
        if change < config.tol {
            break;
        }
    }

    Ok(Rotation {
        w,
        method: AlignMethod::Registration,
        diagnostics: AlignDiagnostics {
            rank_deficient: false,
            sigma2: Some(sigma2),
            iterations,
            sigma2_trace: trace,
        },
    })
}

#[inline]
fn squared_distance(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.ncols() {
        let diff = a[(i, k)] - b[(j, k)];
        acc += diff * diff;
    }
    acc
}

/// Initial EM variance `(1/(d n m)) Σ_i Σ_j ‖(x1 W)_i − (x2)_j‖²`.
pub fn initial_sigma2(x1: &DMatrix<f64>, x2: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let (n, d) = x1.shape();
    let m = x2.nrows();
    // Expanding the double sum: m Σ‖x1_i‖² + n Σ‖x2_j‖² − 2 (Σ x1_i)ᵀ W (Σ x2_j).
    let s1 = x1.row_sum();
    let s2 = x2.row_sum();
    let cross = (s1 * w).dot(&s2);
    let total = m as f64 * x1.norm_squared() + n as f64 * x2.norm_squared() - 2.0 * cross;
    (total / (d * n * m) as f64).max(0.0)
}

/// Starting rotation of smallest initial variance: all `2^d` sign-diagonal
/// matrices when `d` is small, random orthogonal matrices otherwise.
fn initial_rotation(x1: &DMatrix<f64>, x2: &DMatrix<f64>, config: &RegistrationConfig) -> (DMatrix<f64>, f64) {
    let d = x1.ncols();
    let mut best_w = DMatrix::identity(d, d);
    let mut best = initial_sigma2(x1, x2, &best_w);
    if d <= config.max_sign_sweep_dim {
        for mask in 1u32..(1u32 << d) {
            let w = DMatrix::from_fn(d, d, |i, j| {
                if i != j {
                    0.0
                } else if mask & (1 << i) != 0 {
                    -1.0
                } else {
                    1.0
                }
            });
            let s = initial_sigma2(x1, x2, &w);
            if s < best {
                best = s;
                best_w = w;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..config.random_starts {
            let w = random_orthogonal(d, &mut rng);
            let s = initial_sigma2(x1, x2, &w);
            if s < best {
                best = s;
                best_w = w;
            }
        }
    }
    (best_w, best)
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// diagonal of R made positive).
pub fn random_orthogonal<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
