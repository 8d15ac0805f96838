//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with `cargo test --test acceptance`. Exits nonzero if any
//! criterion fails.

#[path = "common/qp_oracle.rs"]
mod qp_oracle;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vnom::align::{procrustes, random_orthogonal, register, RegistrationConfig};
use vnom::embed::Spectrum;
use vnom::experiment::{emit, run_simulation, ExperimentConfig, MetricSummary, Model};
use vnom::nominate::{aggregate, rr_nr, standard_error, NominationList};
use vnom::synth::{reference_block_matrix, sample_correlated_pair, sbm_latents, SbmSpec};
use vnom::transport::{cost_matrix, solve_plan, CostMatrix, PlanOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn qp_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for trial in 0..50 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=6);
        let lambda = [0.1, 1.0, 10.0][trial % 3];
        let pins = if trial % 2 == 0 { vec![] } else { vec![(rng.gen_range(0..n), rng.gen_range(0..m))] };
        let cost = CostMatrix::new(DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.0..2.0))).unwrap();
        match solve_plan(&cost, &pins, &PlanOptions::with_lambda(lambda)) {
            Ok(plan) => {
                let oracle = qp_oracle::exact_plan(cost.matrix(), lambda, &pins);
                worst = worst.max((plan.matrix() - oracle).amax());
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0 && worst < 1e-6,
        format!("50 instances, max |D - D_oracle| = {worst:.2e}, solver errors = {failures}"),
    )
}

fn summary(cfg: &ExperimentConfig) -> (MetricSummary, usize) {
    let record = run_simulation(cfg).expect("simulation runs");
    (record.summary.base.expect("some replicates succeed"), record.failures.len())
}

fn seed_sweep() -> Outcome {
    let base = ExperimentConfig { model: Model::RdpgSphere, rho: 0.5, replicates: 500, ..Default::default() };
    let (k3, f3) = summary(&ExperimentConfig { seeds: 3, ..base.clone() });
    let (k9, f9) = summary(&ExperimentConfig { seeds: 9, master_seed: 1, ..base });
    let pass = (k3.mrr - 0.28).abs() <= 0.05 && (k9.mrr - 0.37).abs() <= 0.05;
    outcome(
        pass,
        format!(
            "500 replicates: MRR(K=3) = {:.3} ± {:.3}, MRR(K=9) = {:.3} ± {:.3} (targets 0.28, 0.37 ± 0.05), failed = {}",
            k3.mrr,
            k3.mrr_se,
            k9.mrr,
            k9.mrr_se,
            f3 + f9
        ),
    )
}

fn monotone_in_rho() -> Outcome {
    let rhos = [0.0, 0.3, 0.5, 0.7, 1.0];
    let mut pass = true;
    let mut parts = Vec::new();
    for model in [Model::RdpgSphere, Model::Sbm] {
        let results: Vec<MetricSummary> = rhos
            .iter()
            .enumerate()
            .map(|(k, &rho)| summary(&ExperimentConfig { model, rho, master_seed: 10 + k as u64, ..Default::default() }).0)
            .collect();
        for w in results.windows(2) {
            let rr_slack = 2.0 * (w[0].mrr_se.powi(2) + w[1].mrr_se.powi(2)).sqrt();
            let nr_slack = 2.0 * (w[0].mnr_se.powi(2) + w[1].mnr_se.powi(2)).sqrt();
            pass &= w[1].mrr >= w[0].mrr - rr_slack;
            pass &= w[1].mnr <= w[0].mnr + nr_slack;
        }
        let last = results.last().unwrap();
        pass &= last.mnr < 0.01;
        let mrr: Vec<String> = results.iter().map(|s| format!("{:.3}", s.mrr)).collect();
        let mnr: Vec<String> = results.iter().map(|s| format!("{:.4}", s.mnr)).collect();
        parts.push(format!("{}: MRR [{}] MNR [{}]", model.name(), mrr.join(", "), mnr.join(", ")));
    }
    outcome(pass, format!("rho = 0, .3, .5, .7, 1; {}", parts.join("; ")))
}

fn random_baseline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let candidates: Vec<usize> = (0..300).collect();
    let nrs: Vec<f64> = (0..1000)
        .map(|_| {
            let truth = rng.gen_range(0..300);
            let list = NominationList::random(0, &candidates, &mut rng).unwrap();
            rr_nr(&list, truth).unwrap().1
        })
        .collect();
    let mnr = aggregate(&nrs).unwrap();
    outcome((mnr - 0.5).abs() <= 0.02, format!("1000 random lists of length 300: MNR = {mnr:.4}"))
}

fn rerank_gain() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for model in [Model::RdpgSphere, Model::Sbm] {
        let cfg = ExperimentConfig { model, rho: 0.7, seeds: 50, rerank: true, master_seed: 5, ..Default::default() };
        let record = run_simulation(&cfg).expect("simulation runs");
        let gains: Vec<f64> = record.rows.iter().map(|r| r.reranked.unwrap().rr - r.base.rr).collect();
        let gain = aggregate(&gains).unwrap();
        let se = standard_error(&gains).unwrap();
        pass &= gain > 2.0 * se;
        parts.push(format!(
            "{}: MRR {:.3} -> {:.3}, paired gain {gain:.3} (2 se = {:.3})",
            model.name(),
            record.summary.base.unwrap().mrr,
            record.summary.reranked.unwrap().mrr,
            2.0 * se
        ));
    }
    outcome(pass, parts.join("; "))
}

fn block_structure() -> Outcome {
    let b = DMatrix::from_row_slice(2, 2, &[0.8, 0.05, 0.05, 0.8]);
    let spec = SbmSpec::balanced(2, 100, b).unwrap();
    let lp = sbm_latents(&spec).unwrap();
    let block = spec.membership();
    let mut worst = 0.0f64;
    for rep in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + rep);
        let pair = sample_correlated_pair(&lp, 0.0, &mut rng).unwrap();
        let e1 = Spectrum::of_graph(&pair.g1).unwrap().embed(2).unwrap();
        let e2 = Spectrum::of_graph(&pair.g2).unwrap().embed(2).unwrap();
        let seeds = sample(&mut rng, 200, 6).into_vec();
        let pick = |x: &DMatrix<f64>| DMatrix::from_fn(6, 2, |i, k| x[(seeds[i], k)]);
        let w = procrustes(&pick(e1.x_hat()), &pick(e2.x_hat())).unwrap();
        let cost = cost_matrix(&w.apply(e1.x_hat()).unwrap(), e2.x_hat()).unwrap();
        let plan = solve_plan(&cost, &[], &PlanOptions::with_lambda(0.01)).unwrap();
        let d = plan.matrix();
        let mut cross = 0.0;
        for i in 0..200 {
            for j in 0..200 {
                if block[i] != block[j] {
                    cross += d[(i, j)];
                }
            }
        }
        worst = worst.max(cross / d.sum());
    }
    outcome(worst < 0.05, format!("5 replicates, largest cross-block share of plan mass = {worst:.2e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn two_to_infinity_trend() -> Outcome {
    let spec = SbmSpec::new(vec![167, 167, 166], reference_block_matrix()).unwrap();
    let lp = sbm_latents(&spec).unwrap();
    let mut medians = Vec::new();
    for (k, rho) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let errors: Vec<f64> = (0..50u64)
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(700 + 100 * k as u64 + rep);
                let pair = sample_correlated_pair(&lp, rho, &mut rng).unwrap();
                let x1 = Spectrum::of_graph(&pair.g1).unwrap().embed(3).unwrap().into_x_hat();
                let x2 = Spectrum::of_graph(&pair.g2).unwrap().embed(3).unwrap().into_x_hat();
                let w = procrustes(&x1, &x2).unwrap();
                let diff = w.apply(&x1).unwrap() - &x2;
                (0..diff.nrows()).map(|i| diff.row(i).norm()).fold(0.0, f64::max)
            })
            .collect();
        medians.push(median(errors));
    }
    outcome(
        medians[2] < medians[1] && medians[1] < medians[0],
        format!(
            "n = 500, 50 replicates: median 2->inf error {:.3e} at rho=0, {:.3e} at rho=0.5, {:.3e} at rho=1",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn alignment_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_procrustes = 0.0f64;
    for d in 1..=6 {
        for _ in 0..5 {
            let q = random_orthogonal(d, &mut rng);
            let x1 = DMatrix::from_fn(d + 2, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = procrustes(&x1, &(&x1 * &q)).unwrap();
            worst_procrustes = worst_procrustes.max((w.matrix() - &q).amax());
        }
    }

    let centers = [[4.0, 1.0, 0.5], [0.5, 4.0, 1.0], [1.0, 0.5, 4.0]];
    let x1 = DMatrix::from_fn(90, 3, |i, k| centers[i / 30][k] + 0.3 * rng.sample::<f64, _>(StandardNormal));
    let flip = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
    let moved = &x1 * &flip;
    let order = sample(&mut rng, 90, 90).into_vec();
    let x2 = DMatrix::from_fn(90, 3, |i, k| moved[(order[i], k)]);
    let rot = register(&x1, &x2, &RegistrationConfig::default()).unwrap();
    let residual = (rot.matrix() - &flip).norm();
    let iterations = rot.diagnostics().iterations;

    outcome(
        worst_procrustes < 1e-8 && residual < 1e-3 && iterations <= 50,
        format!(
            "procrustes max error {worst_procrustes:.2e} (K = d+2, d = 1..6); registration residual {residual:.2e} in {iterations} EM iterations"
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig { replicates: 20, rerank: true, master_seed: 99, ..Default::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<Vec<(String, Vec<u8>)>> = dirs
        .iter()
        .map(|dir| {
            let record = run_simulation(&cfg).unwrap();
            emit(&record, dir.path())
                .unwrap()
                .into_iter()
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
                .collect()
        })
        .collect();
    let identical = files[0] == files[1];
    outcome(identical, format!("two runs, {} files each, byte-identical = {identical}", files[0].len()))
}

fn main() {
    // libtest-style flags (e.g. --nocapture, filters) are accepted and ignored.
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("QP oracle equivalence", qp_oracle_equivalence),
        ("seed sweep MRR", seed_sweep),
        ("monotonicity in rho", monotone_in_rho),
        ("random baseline", random_baseline),
        ("reranking gain", rerank_gain),
        ("block structure of the plan", block_structure),
        ("2->inf error trend", two_to_infinity_trend),
        ("alignment recovery", alignment_recovery),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!("{verdict} criterion {} ({name}): {} [{:.1}s]", k + 1, result.detail, clock.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
