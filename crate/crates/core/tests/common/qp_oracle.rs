//! Independent reference solvers for the regularized transport problem.
//!
//! `exact_plan` runs block coordinate ascent on the dual of
//! `min ⟨C,D⟩ + λ‖D‖² s.t. marginals, D ≥ 0, pins`, where the primal is
//! recovered as `D = [(α_i + β_j − C_ij) / 2λ]_+`. Each block update is an
//! exact one-dimensional water-filling solve. The active set found that way
//! is then polished by solving the KKT equations on the support.
//!
//! `lp_optimum` enumerates permutations for small square problems; with
//! uniform marginals the linear program's optimum is a scaled permutation.

#![allow(dead_code)]

use nalgebra::DMatrix;

/// Solves `Σ_k [a − t_k]_+ = target` for `a` (target ≥ 0, `t` nonempty).
fn water_fill(t: &mut [f64], target: f64) -> f64 {
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if target <= 0.0 {
        return t[0];
    }
    let mut prefix = 0.0;
    for k in 1..=t.len() {
        prefix += t[k - 1];
        let a = (target + prefix) / k as f64;
        if k == t.len() || a <= t[k] {
            return a;
        }
    }
    unreachable!()
}

struct Setup {
    n: usize,
    m: usize,
    free: Vec<bool>,
    row_target: Vec<f64>,
    col_target: Vec<f64>,
    pin_value: f64,
}

fn setup(n: usize, m: usize, pins: &[(usize, usize)]) -> Setup {
    let pin_value = n.min(m) as f64;
    let mut free = vec![true; n * m];
    let mut row_target = vec![m as f64; n];
    let mut col_target = vec![n as f64; m];
    for &(i, j) in pins {
        free[i * m + j] = false;
        row_target[i] -= pin_value;
        col_target[j] -= pin_value;
    }
    Setup { n, m, free, row_target, col_target, pin_value }
}

fn primal(s: &Setup, c: &DMatrix<f64>, lambda: f64, alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(s.n, s.m, |i, j| {
        if s.free[i * s.m + j] {
            ((alpha[i] + beta[j] - c[(i, j)]) / (2.0 * lambda)).max(0.0)
        } else {
            s.pin_value
        }
    })
}

fn violation(s: &Setup, d: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..s.n {
        worst = worst.max((d.row(i).sum() - s.m as f64).abs());
    }
    for j in 0..s.m {
        worst = worst.max((d.column(j).sum() - s.n as f64).abs());
    }
    worst
}

/// Reference optimum of the pinned, quadratically regularized problem.
pub fn exact_plan(c: &DMatrix<f64>, lambda: f64, pins: &[(usize, usize)]) -> DMatrix<f64> {
    let (n, m) = c.shape();
    let s = setup(n, m, pins);
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; m];
    let mut buf = Vec::with_capacity(n.max(m));

    for _sweep in 0..200_000 {
        for i in 0..n {
            buf.clear();
            buf.extend((0..m).filter(|&j| s.free[i * m + j]).map(|j| c[(i, j)] - beta[j]));
            if !buf.is_empty() {
                alpha[i] = water_fill(&mut buf, 2.0 * lambda * s.row_target[i]);
            }
        }
        for j in 0..m {
            buf.clear();
            buf.extend((0..n).filter(|&i| s.free[i * m + j]).map(|i| c[(i, j)] - alpha[i]));
            if !buf.is_empty() {
                beta[j] = water_fill(&mut buf, 2.0 * lambda * s.col_target[j]);
            }
        }
        if violation(&s, &primal(&s, c, lambda, &alpha, &beta)) < 1e-13 {
            break;
        }
    }
    let ascent = primal(&s, c, lambda, &alpha, &beta);
    polish(&s, c, lambda, &alpha, &beta).unwrap_or(ascent)
}

/// Solves the KKT equalities on the support picked out by the dual iterate
/// and accepts the result only if every optimality condition holds.
fn polish(s: &Setup, c: &DMatrix<f64>, lambda: f64, alpha: &[f64], beta: &[f64]) -> Option<DMatrix<f64>> {
    let (n, m) = (s.n, s.m);
    let scale = c.amax().max(1.0);
    let support: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| s.free[i * m + j] && alpha[i] + beta[j] - c[(i, j)] > 1e-9 * scale)
        .collect();

    let mut a = DMatrix::zeros(n + m, n + m);
    let mut b = nalgebra::DVector::zeros(n + m);
    for i in 0..n {
        b[i] = 2.0 * lambda * s.row_target[i];
    }
    for j in 0..m {
        b[n + j] = 2.0 * lambda * s.col_target[j];
    }
    for &(i, j) in &support {
        a[(i, i)] += 1.0;
        a[(i, n + j)] += 1.0;
        b[i] += c[(i, j)];
        a[(n + j, n + j)] += 1.0;
        a[(n + j, i)] += 1.0;
        b[n + j] += c[(i, j)];
    }
    let svd = a.svd(true, true);
    let dual = svd.solve(&b, 1e-12).ok()?;
    let (pa, pb) = (&dual.as_slice()[..n], &dual.as_slice()[n..]);

    let mut d = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            if !s.free[i * m + j] {
                d[(i, j)] = s.pin_value;
                continue;
            }
            let slack = pa[i] + pb[j] - c[(i, j)];
            if support.contains(&(i, j)) {
                if slack < -1e-9 * scale {
                    return None;
                }
                d[(i, j)] = slack.max(0.0) / (2.0 * lambda);
            } else if slack > 1e-9 * scale {
                return None;
            }
        }
    }
    (violation(s, &d) < 1e-9 * (n + m) as f64).then_some(d)
}

/// Optimal value and plan of `min ⟨C,D⟩` over square plans with all
/// marginals equal to `n`, by exhaustive search over permutations.
pub fn lp_optimum(c: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = c.nrows();
    assert_eq!(n, c.ncols(), "lp_optimum handles square costs only");
    assert!(n <= 8, "exhaustive search limited to n ≤ 8");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, perm.clone());
    permute(&mut perm, 0, c, &mut best);
    let mut plan = DMatrix::zeros(n, n);
    for (i, &j) in best.1.iter().enumerate() {
        plan[(i, j)] = n as f64;
    }
    (best.0 * n as f64, plan)
}

fn permute(perm: &mut Vec<usize>, k: usize, c: &DMatrix<f64>, best: &mut (f64, Vec<usize>)) {
    if k == perm.len() {
        let value: f64 = perm.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
        if value < best.0 {
            *best = (value, perm.clone());
        }
        return;
    }
    for x in k..perm.len() {
        perm.swap(k, x);
        permute(perm, k + 1, c, best);
        perm.swap(k, x);
    }
}
