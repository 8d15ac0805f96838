//! Quadratically regularized assignment between two embedded point clouds.
//!
//! The plan `D` minimizes `⟨C, D⟩ + λ‖D‖²_F` over nonnegative `n × m`
//! matrices with every row summing to `m`, every column summing to `n`, and
//! each seed pair pinned at `min(n, m)`. Completing the square, this is the
//! Euclidean projection of `−C/(2λ)` onto the constraint set, computed here
//! with Dykstra's alternating projections.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Pairwise Euclidean distances between aligned embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(DMatrix<f64>);

impl CostMatrix {
    /// Wraps an existing matrix, checking entries are finite and nonnegative.
    pub fn new(costs: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = costs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid cost entry {bad}")));
        }
        Ok(CostMatrix(costs))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Same costs multiplied by `t > 0`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        CostMatrix::new(&self.0 * t)
    }
}

/// `C_ij = ‖(x1_aligned)_i − (x2)_j‖₂`.
pub fn cost_matrix(x1_aligned: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<CostMatrix> {
    if x1_aligned.ncols() != x2.ncols() {
        return Err(Error::Dimension(format!(
            "embeddings have {} and {} columns",
            x1_aligned.ncols(),
            x2.ncols()
        )));
    }
    let d = x2.ncols();
    let costs = DMatrix::from_fn(x1_aligned.nrows(), x2.nrows(), |i, j| {
        let mut acc = 0.0;
        for k in 0..d {
            let diff = x1_aligned[(i, k)] - x2[(j, k)];
            acc += diff * diff;
        }
        acc.sqrt()
    });
    CostMatrix::new(costs)
}

/// Small problems with a weak penalty converge linearly but slowly, so
/// the size-proportional default cap gets a floor.
const MIN_DEFAULT_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    /// Weight of the Frobenius penalty.
    pub lambda: f64,
    /// Target for both the relative marginal violation and the change
    /// between successive iterates.
    pub tol: f64,
    /// Dykstra cycles; `None` means `max(10 (n + m), 1000)`.
    pub max_iters: Option<usize>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { lambda: 1.0, tol: 1e-7, max_iters: None }
    }
}

impl PlanOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        PlanOptions { lambda, ..Default::default() }
    }
}

/// Solution of the regularized assignment problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    d: DMatrix<f64>,
    lambda: f64,
    pinned: Vec<(usize, usize)>,
    kkt_residual: f64,
    iterations: usize,
}

impl TransportPlan {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn pinned(&self) -> &[(usize, usize)] {
        &self.pinned
    }

    /// Largest of the final relative marginal violation and iterate change.
    pub fn kkt_residual(&self) -> f64 {
        self.kkt_residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn shape(&self) -> (usize, usize) {
        self.d.shape()
    }

    /// `⟨C, D⟩`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        self.d.component_mul(cost.matrix()).sum()
    }

    /// Rebuilds a plan from stored values (no optimality check).
    pub fn from_parts(d: DMatrix<f64>, lambda: f64, pinned: Vec<(usize, usize)>) -> Self {
        TransportPlan { d, lambda, pinned, kkt_residual: f64::NAN, iterations: 0 }
    }
}

/// Free-variable layout shared by the three projections.
struct Layout {
    n: usize,
    m: usize,
    /// Cells excluded from the iteration: seed pins plus every cell in a
    /// row or column whose remaining marginal is zero.
    pinned: Vec<bool>,
    fixed_value: Vec<f64>,
    row_free: Vec<usize>,
    col_free: Vec<usize>,
    row_target: Vec<f64>,
    col_target: Vec<f64>,
}

impl Layout {
    fn new(n: usize, m: usize, pins: &[(usize, usize)]) -> Result<Self> {
        let pin_value = n.min(m) as f64;
        let mut pinned = vec![false; n * m];
        let mut row_pins = vec![0usize; n];
        let mut col_pins = vec![0usize; m];
        for &(i, j) in pins {
            if i >= n || j >= m {
                return Err(Error::Infeasible(format!("pinned cell ({i},{j}) outside {n}x{m}")));
            }
            row_pins[i] += 1;
            col_pins[j] += 1;
            if row_pins[i] > 1 {
                return Err(Error::Infeasible(format!("row {i} pinned twice")));
            }
            if col_pins[j] > 1 {
                return Err(Error::Infeasible(format!("column {j} pinned twice")));
            }
            pinned[i * m + j] = true;
        }
        let row_target: Vec<f64> = row_pins.iter().map(|&k| m as f64 - k as f64 * pin_value).collect();
        let col_target: Vec<f64> = col_pins.iter().map(|&k| n as f64 - k as f64 * pin_value).collect();
        let mut fixed_value = vec![0.0; n * m];
        for &(i, j) in pins {
            fixed_value[i * m + j] = pin_value;
        }
        // A zero remaining marginal forces the rest of that line to zero.
        // Fixing those cells leaves a rectangular block of free cells, on
        // which the row and column projections commute.
        for i in 0..n {
            for j in 0..m {
                if row_target[i] == 0.0 || col_target[j] == 0.0 {
                    pinned[i * m + j] = true;
                }
            }
        }
        let mut row_free = vec![0usize; n];
        let mut col_free = vec![0usize; m];
        for i in 0..n {
            for j in 0..m {
                if !pinned[i * m + j] {
                    row_free[i] += 1;
                    col_free[j] += 1;
                }
            }
        }
        for i in 0..n {
            if row_free[i] == 0 && row_target[i] != 0.0 {
                return Err(Error::Infeasible(format!("row {i} cannot reach its marginal")));
            }
        }
        for j in 0..m {
            if col_free[j] == 0 && col_target[j] != 0.0 {
                return Err(Error::Infeasible(format!("column {j} cannot reach its marginal")));
            }
        }
        Ok(Layout { n, m, pinned, fixed_value, row_free, col_free, row_target, col_target })
    }

    fn project_rows(&self, x: &mut [f64]) {
        for i in 0..self.n {
            if self.row_free[i] == 0 {
                continue;
            }
            let row = &mut x[i * self.m..(i + 1) * self.m];
            let mask = &self.pinned[i * self.m..(i + 1) * self.m];
            let mut sum = 0.0;
            for (v, &p) in row.iter().zip(mask) {
                if !p {
                    sum += *v;
                }
            }
            let shift = (sum - self.row_target[i]) / self.row_free[i] as f64;
            for (v, &p) in row.iter_mut().zip(mask) {
                if !p {
                    *v -= shift;
                }
            }
        }
    }

    fn project_cols(&self, x: &mut [f64], scratch: &mut [f64]) {
        scratch.fill(0.0);
        for i in 0..self.n {
            let row = &x[i * self.m..(i + 1) * self.m];
            let mask = &self.pinned[i * self.m..(i + 1) * self.m];
            for j in 0..self.m {
                if !mask[j] {
                    scratch[j] += row[j];
                }
            }
        }
        for j in 0..self.m {
            scratch[j] = if self.col_free[j] == 0 {
                0.0
            } else {
                (scratch[j] - self.col_target[j]) / self.col_free[j] as f64
            };
        }
        for i in 0..self.n {
            let row = &mut x[i * self.m..(i + 1) * self.m];
            let mask = &self.pinned[i * self.m..(i + 1) * self.m];
            for j in 0..self.m {
                if !mask[j] {
                    row[j] -= scratch[j];
                }
            }
        }
    }

    /// Largest relative violation of the row and column marginals.
    fn marginal_violation(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let (n, m) = (self.n as f64, self.m as f64);
        scratch.fill(0.0);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let row = &x[i * self.m..(i + 1) * self.m];
            let mut sum = 0.0;
            for j in 0..self.m {
                sum += row[j];
                scratch[j] += row[j];
            }
            worst = worst.max((sum - m).abs() / m);
        }
        for &s in scratch.iter() {
            worst = worst.max((s - n).abs() / n);
        }
        worst
    }
}

/// Minimizes `⟨C, D⟩ + λ‖D‖²_F` subject to the marginal, nonnegativity and
/// seed-pinning constraints.
///
/// Dykstra's method cycles through three projections: onto the row-sum
/// hyperplanes, onto the column-sum hyperplanes (both restricted to the free
/// cells), and onto the nonnegative orthant with pinned cells fixed. Only the
/// last set needs a correction term; for affine sets the correction lies in
/// the normal space and never changes the projection.
pub fn solve_plan(cost: &CostMatrix, pinned: &[(usize, usize)], options: &PlanOptions) -> Result<TransportPlan> {
    let lambda = options.lambda;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty λ = {lambda} must be positive")));
    }
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    let layout = Layout::new(n, m, pinned)?;
    let max_iters = options.max_iters.unwrap_or((10 * (n + m)).max(MIN_DEFAULT_ITERS));

    let mut x = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            x[i * m + j] = if layout.pinned[i * m + j] {
                layout.fixed_value[i * m + j]
            } else {
                -cost.get(i, j) / (2.0 * lambda)
            };
        }
    }
    let mut correction = vec![0.0; n * m];
    let mut previous = vec![f64::INFINITY; n * m];
    let mut scratch = vec![0.0; m];
    let mut residual = f64::INFINITY;

    for iteration in 1..=max_iters {
        layout.project_rows(&mut x);
        layout.project_cols(&mut x, &mut scratch);

        let mut change = 0.0f64;
        let mut largest = 0.0f64;
        for k in 0..n * m {
            if layout.pinned[k] {
                continue;
            }
            let y = x[k] + correction[k];
            let clamped = y.max(0.0);
            correction[k] = y - clamped;
            x[k] = clamped;
            change = change.max((clamped - previous[k]).abs());
            largest = largest.max(clamped);
            previous[k] = clamped;
        }
        let violation = layout.marginal_violation(&x, &mut scratch);
        let relative_change = change / largest.max(1.0);
        residual = violation.max(relative_change);
        if violation <= options.tol && relative_change <= options.tol {
            return Ok(TransportPlan {
                d: DMatrix::from_row_slice(n, m, &x),
                lambda,
                pinned: pinned.to_vec(),
                kkt_residual: residual,
                iterations: iteration,
            });
        }
    }
    Err(Error::NotConverged { iterations: max_iters, residual })
}

/// Objective values along a decreasing sequence of penalties.
#[derive(Debug, Clone)]
pub struct LimitTrace {
    pub lambdas: Vec<f64>,
    /// `⟨C, D_λ⟩` per penalty.
    pub transport_costs: Vec<f64>,
    /// `‖D_λ‖_F` per penalty.
    pub frobenius_norms: Vec<f64>,
    pub plans: Vec<TransportPlan>,
}

/// Solves the unpinned plan at each `λ` (which must be positive and
/// strictly decreasing) and records how the transport cost and plan norm
/// evolve as the penalty vanishes.
pub fn plan_limit_check(cost: &CostMatrix, lambdas: &[f64], options: &PlanOptions) -> Result<LimitTrace> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("no penalties given".into()));
    }
    if lambdas.iter().any(|&l| !(l > 0.0)) || lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("penalties must be positive and decreasing".into()));
    }
    let mut trace = LimitTrace {
        lambdas: lambdas.to_vec(),
        transport_costs: Vec::with_capacity(lambdas.len()),
        frobenius_norms: Vec::with_capacity(lambdas.len()),
        plans: Vec::with_capacity(lambdas.len()),
    };
    for &lambda in lambdas {
        let plan = solve_plan(cost, &[], &PlanOptions { lambda, ..options.clone() })?;
        trace.transport_costs.push(plan.transport_cost(cost));
        trace.frobenius_norms.push(plan.matrix().norm());
        trace.plans.push(plan);
    }
    Ok(trace)
}

#[cfg(test)]
#[path = "../tests/common/qp_oracle.rs"]
mod qp_oracle;
