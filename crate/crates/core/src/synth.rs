//! Random graph models: generalized random dot product graphs, stochastic
//! block models, and pairs of edge-correlated graphs sharing one
//! probability matrix.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Correspondence, Graph};
use crate::linalg::symmetric_eigen;

const PROBABILITY_SLACK: f64 = 1e-12;

/// Relative cut below which eigenvalues of a block matrix count as zero.
const RANK_CUT: f64 = 1e-10;

/// Seed of the random stream for replicate `index` of a campaign.
///
/// SplitMix64 finalizer over the pair, so neighbouring replicates get
/// unrelated streams.
pub fn stream_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random source for replicate `index` of a campaign seeded by `master_seed`.
pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, index))
}

/// Latent positions of a generalized random dot product graph.
///
/// Row `i` of `x` is the position of vertex `i`. Edge probabilities are
/// `gamma * x_iᵀ I_{p,q} x_j` where the first `p` coordinates carry a `+1`
/// and the last `q` a `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPositions {
    x: DMatrix<f64>,
    p: usize,
    q: usize,
    gamma: f64,
}

impl LatentPositions {
    /// Validates the signature, the sparsity factor and that every
    /// probability between distinct vertices lies in `[0, 1]`. The diagonal
    /// is never sampled and is not checked.
    pub fn new(x: DMatrix<f64>, p: usize, q: usize, gamma: f64) -> Result<Self> {
        if p + q != x.ncols() {
            return Err(Error::Model(format!(
                "signature ({p},{q}) does not match dimension {}",
                x.ncols()
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Model(format!("sparsity factor {gamma} outside (0, 1]")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite latent position".into()));
        }
        let lp = LatentPositions { x, p, q, gamma };
        let n = lp.x.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let value = lp.probability(i, j);
                if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&value) {
                    return Err(Error::Model(format!(
                        "probability {value} between vertices {i} and {j} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(lp)
    }

    /// Same positions with a different sparsity factor.
    pub fn with_gamma(self, gamma: f64) -> Result<Self> {
        LatentPositions::new(self.x, self.p, self.q, gamma)
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn signature(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn vertex_count(&self) -> usize {
        self.x.nrows()
    }

    fn probability(&self, i: usize, j: usize) -> f64 {
        let mut dot = 0.0;
        for k in 0..self.x.ncols() {
            let term = self.x[(i, k)] * self.x[(j, k)];
            if k < self.p {
                dot += term;
            } else {
                dot -= term;
            }
        }
        self.gamma * dot
    }
}

/// Edge-probability matrix `gamma · X I_{p,q} Xᵀ`.
///
/// Off-diagonal round-off excursions within `1e-12` of `[0, 1]` are
/// clamped. The diagonal is kept as computed; samplers never read it.
pub fn probability_matrix(lp: &LatentPositions) -> Result<DMatrix<f64>> {
    let scaled = DMatrix::from_fn(lp.x.nrows(), lp.x.ncols(), |i, k| {
        if k < lp.p {
            lp.x[(i, k)]
        } else {
            -lp.x[(i, k)]
        }
    });
    let mut p = (&scaled * lp.x.transpose()) * lp.gamma;
    let n = p.nrows();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let value = p[(i, j)];
            if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&value) {
                return Err(Error::Model(format!("probability {value} outside [0, 1]")));
            }
            p[(i, j)] = value.clamp(0.0, 1.0);
        }
    }
    Ok(p)
}

/// Block sizes and block-probability matrix of a stochastic block model.
/// Vertices are assigned to blocks contiguously, block 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    block_sizes: Vec<usize>,
    b: DMatrix<f64>,
}

impl SbmSpec {
    pub fn new(block_sizes: Vec<usize>, b: DMatrix<f64>) -> Result<Self> {
        let l = block_sizes.len();
        if l == 0 || block_sizes.contains(&0) {
            return Err(Error::Model("block sizes must be positive and non-empty".into()));
        }
        if b.nrows() != l || b.ncols() != l {
            return Err(Error::Model(format!(
                "{} blocks but a {}x{} probability matrix",
                l,
                b.nrows(),
                b.ncols()
            )));
        }
        for i in 0..l {
            for j in 0..l {
                let v = b[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Model(format!("block probability {v} outside [0, 1]")));
                }
                if v != b[(j, i)] {
                    return Err(Error::Model("block probability matrix is not symmetric".into()));
                }
            }
        }
        Ok(SbmSpec { block_sizes, b })
    }

    /// `blocks` equal blocks of `size` vertices.
    pub fn balanced(blocks: usize, size: usize, b: DMatrix<f64>) -> Result<Self> {
        SbmSpec::new(vec![size; blocks], b)
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn block_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn vertex_count(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    /// Block label of every vertex.
    pub fn membership(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &size)| std::iter::repeat(k).take(size))
            .collect()
    }
}

/// The three-block matrix of the reference simulation study.
pub fn reference_block_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.7, 0.3, 0.4, 0.3, 0.7, 0.2, 0.4, 0.2, 0.7])
}

/// Latent positions realizing an SBM as a GRDPG: each vertex sits at its
/// block's row of `V |Λ|^{1/2}` from the eigendecomposition of `B`.
///
/// Positive eigenvalues come first (largest first), then negative ones by
/// decreasing magnitude.
pub fn sbm_latents(spec: &SbmSpec) -> Result<LatentPositions> {
    let l = spec.b.nrows();
    let spectrum = symmetric_eigen(&spec.b)?;
    let top = spectrum.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut positive: Vec<usize> = Vec::new();
    let mut negative: Vec<usize> = Vec::new();
    for (k, &value) in spectrum.values.iter().enumerate() {
        if value.abs() > RANK_CUT * top {
            if value > 0.0 {
                positive.push(k);
            } else {
                negative.push(k);
            }
        }
    }
    positive.sort_by(|&a, &b| spectrum.values[b].total_cmp(&spectrum.values[a]));
    negative.sort_by(|&a, &b| spectrum.values[a].total_cmp(&spectrum.values[b]));
    let kept: Vec<usize> = positive.iter().chain(&negative).copied().collect();
    if kept.is_empty() {
        return Err(Error::Model("block probability matrix is zero".into()));
    }
    let block_rows = DMatrix::from_fn(l, kept.len(), |k, c| {
        let idx = kept[c];
        spectrum.vectors[(k, idx)] * spectrum.values[idx].abs().sqrt()
    });
    let membership = spec.membership();
    let x = DMatrix::from_fn(membership.len(), kept.len(), |i, c| block_rows[(membership[i], c)]);
    LatentPositions::new(x, positive.len(), negative.len(), 1.0)
}

/// `n` positions drawn uniformly from the unit sphere in ℝ³ restricted to
/// the nonnegative orthant, so every inner product lies in `[0, 1]`.
pub fn sphere_latents<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<LatentPositions> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one vertex".into()));
    }
    let mut x = DMatrix::zeros(n, 3);
    for i in 0..n {
        loop {
            let v: [f64; 3] = [
                rng.sample::<f64, _>(StandardNormal).abs(),
                rng.sample::<f64, _>(StandardNormal).abs(),
                rng.sample::<f64, _>(StandardNormal).abs(),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > 1e-300 {
                for k in 0..3 {
                    x[(i, k)] = v[k] / norm;
                }
                break;
            }
        }
    }
    LatentPositions::new(x, 3, 0, 1.0)
}

/// Two graphs with a common edge-probability matrix whose matched edge
/// indicators have correlation `rho`. Vertex `i` of one graph corresponds
/// to vertex `i` of the other.
#[derive(Debug, Clone)]
pub struct CorrelatedPair {
    pub g1: Graph,
    pub g2: Graph,
    pub truth: Correspondence,
    pub rho: f64,
    pub p: DMatrix<f64>,
}

/// Samples a `rho`-correlated pair from latent positions.
///
/// Each unordered pair `i < j` draws `A₁ ~ Bernoulli(P)`, then `A₂` from
/// `Bernoulli(P + ρ(1-P))` when `A₁ = 1` and `Bernoulli(P(1-ρ))` otherwise.
/// Both marginals are `Bernoulli(P)` and the correlation is exactly `ρ`.
pub fn sample_correlated_pair<R: Rng + ?Sized>(
    lp: &LatentPositions,
    rho: f64,
    rng: &mut R,
) -> Result<CorrelatedPair> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Unsupported(format!(
            "correlation {rho} outside [0, 1]; negative correlation is not supported"
        )));
    }
    let p = probability_matrix(lp)?;
    let n = p.nrows();
    let mut a1 = vec![0u8; n * n];
    let mut a2 = vec![0u8; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let pij = p[(i, j)];
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            let first = u1 < pij;
            let conditional = if first { pij + rho * (1.0 - pij) } else { pij * (1.0 - rho) };
            let second = u2 < conditional;
            a1[i * n + j] = first as u8;
            a1[j * n + i] = first as u8;
            a2[i * n + j] = second as u8;
            a2[j * n + i] = second as u8;
        }
    }
    Ok(CorrelatedPair {
        g1: Graph::from_raw(n, a1),
        g2: Graph::from_raw(n, a2),
        truth: Correspondence::identity(n),
        rho,
        p,
    })
}
