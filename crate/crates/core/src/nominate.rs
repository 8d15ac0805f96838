//! Nomination lists, correlation-likelihood reranking and rank metrics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{estimate_p_hat, Embedding, P_HAT_EPS};
use crate::error::{Error, Result};
use crate::graph::{Correspondence, Graph};
use crate::transport::{CostMatrix, TransportPlan};

/// What a nominee's score measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// Row entry of the transport plan.
    PlanMass,
    /// Absolute value of the estimated edge correlation.
    AbsRho,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::PlanMass => "plan_mass",
            ScoreKind::AbsRho => "abs_rho",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nominee {
    /// Vertex index in the second graph.
    pub candidate: usize,
    pub score: f64,
    pub kind: ScoreKind,
}

/// Ranked candidates in the second graph for one query vertex of the first.
#[derive(Debug, Clone, PartialEq)]
pub struct NominationList {
    query: usize,
    entries: Vec<Nominee>,
}

impl NominationList {
    /// Builds a list from already ranked entries, checking candidates are
    /// distinct.
    pub fn new(query: usize, entries: Vec<Nominee>) -> Result<Self> {
        let mut seen: Vec<usize> = entries.iter().map(|e| e.candidate).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("nomination list repeats a candidate".into()));
        }
        Ok(NominationList { query, entries })
    }

    /// Uniformly random ordering of `candidates` with zero scores; the
    /// baseline every method should beat.
    pub fn random<R: Rng + ?Sized>(query: usize, candidates: &[usize], rng: &mut R) -> Result<Self> {
        use rand::seq::SliceRandom;
        let mut order = candidates.to_vec();
        order.shuffle(rng);
        let entries = order
            .into_iter()
            .map(|candidate| Nominee { candidate, score: 0.0, kind: ScoreKind::PlanMass })
            .collect();
        NominationList::new(query, entries)
    }

    pub fn query(&self) -> usize {
        self.query
    }

    pub fn entries(&self) -> &[Nominee] {
        &self.entries
    }

    pub fn candidates(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.candidate).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based position of `candidate`, if listed.
    pub fn rank_of(&self, candidate: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.candidate == candidate).map(|p| p + 1)
    }
}

/// Orders the non-excluded columns of the query's plan row.
///
/// Larger plan mass ranks first; equal mass falls back to smaller cost and
/// then to a random key drawn from `tie_seed`, so ties are broken randomly
/// yet reproducibly.
pub fn rank_from_plan(
    plan: &TransportPlan,
    cost: &CostMatrix,
    query: usize,
    exclude: &[usize],
    tie_seed: u64,
) -> Result<NominationList> {
    let (n, m) = plan.shape();
    if cost.shape() != (n, m) {
        return Err(Error::Dimension(format!("plan is {n}x{m} but costs are {:?}", cost.shape())));
    }
    if query >= n {
        return Err(Error::IndexOutOfRange { index: query, len: n });
    }
    let mut excluded = vec![false; m];
    for &j in exclude {
        if j >= m {
            return Err(Error::IndexOutOfRange { index: j, len: m });
        }
        excluded[j] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tie_seed);
    let keys: Vec<u64> = (0..m).map(|_| rng.gen()).collect();
    let mut order: Vec<usize> = (0..m).filter(|&j| !excluded[j]).collect();
    if order.is_empty() {
        return Err(Error::InvalidArgument("every candidate is excluded".into()));
    }
    order.sort_by(|&a, &b| {
        plan.get(query, b)
            .total_cmp(&plan.get(query, a))
            .then_with(|| cost.get(query, a).total_cmp(&cost.get(query, b)))
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    let entries = order
        .into_iter()
        .map(|j| Nominee { candidate: j, score: plan.get(query, j), kind: ScoreKind::PlanMass })
        .collect();
    Ok(NominationList { query, entries })
}

/// Inputs for the correlation-likelihood rerank.
#[derive(Debug, Clone)]
pub struct RerankModel {
    p_hat_1: DMatrix<f64>,
    p_hat_2: DMatrix<f64>,
    /// Seed pairs sorted by index, so the likelihood sum has a canonical order.
    seeds: Vec<(usize, usize)>,
    top_l: Option<usize>,
    grid: usize,
}

pub const DEFAULT_TOP_L: usize = 50;
pub const DEFAULT_RHO_GRID: usize = 201;
const GOLDEN_TOL: f64 = 1e-4;

impl RerankModel {
    pub fn new(p_hat_1: DMatrix<f64>, p_hat_2: DMatrix<f64>, seeds: &Correspondence) -> Result<Self> {
        for (name, p) in [("first", &p_hat_1), ("second", &p_hat_2)] {
            if !p.is_square() {
                return Err(Error::Dimension(format!("{name} probability estimate is not square")));
            }
            if p.iter().any(|&v| !(P_HAT_EPS..=1.0 - P_HAT_EPS).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "{name} probability estimate has entries outside [{P_HAT_EPS}, {}]",
                    1.0 - P_HAT_EPS
                )));
            }
        }
        if seeds.is_empty() {
            return Err(Error::InvalidArgument("reranking needs at least one seed".into()));
        }
        let mut pairs = seeds.pairs().to_vec();
        for &(w, s) in &pairs {
            if w >= p_hat_1.nrows() || s >= p_hat_2.nrows() {
                return Err(Error::IndexOutOfRange { index: w.max(s), len: p_hat_1.nrows().min(p_hat_2.nrows()) });
            }
        }
        pairs.sort_unstable();
        Ok(RerankModel { p_hat_1, p_hat_2, seeds: pairs, top_l: None, grid: DEFAULT_RHO_GRID })
    }

    /// Uses the clipped plug-in estimates from both embeddings.
    pub fn from_embeddings(e1: &Embedding, e2: &Embedding, seeds: &Correspondence) -> Result<Self> {
        RerankModel::new(estimate_p_hat(e1), estimate_p_hat(e2), seeds)
    }

    pub fn with_top_l(mut self, top_l: usize) -> Result<Self> {
        if top_l == 0 {
            return Err(Error::InvalidArgument("top_L must be positive".into()));
        }
        self.top_l = Some(top_l);
        Ok(self)
    }

    pub fn with_grid(mut self, points: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::InvalidArgument("ρ grid needs at least 3 points".into()));
        }
        self.grid = points;
        Ok(self)
    }

    /// Head length used for a list of `len` entries.
    pub fn head_len(&self, len: usize) -> usize {
        self.top_l.unwrap_or(DEFAULT_TOP_L).min(len)
    }

    pub fn seeds(&self) -> &[(usize, usize)] {
        &self.seeds
    }
}

/// `P₁(x,w)P₂(v,σ(w)) + ρP₁(x,w)(1 − P₁(x,w))`, clamped into `[ε, 1−ε]`.
pub fn edge_probability(p1: f64, p2: f64, rho: f64) -> f64 {
    (p1 * p2 + rho * p1 * (1.0 - p1)).clamp(P_HAT_EPS, 1.0 - P_HAT_EPS)
}

/// Per-seed terms `(c_vw, P₁(x,w), P₂(v,σ(w)))` of the likelihood.
fn seed_terms(x: usize, v: usize, model: &RerankModel, g1: &Graph, g2: &Graph) -> Result<Vec<(f64, f64, f64)>> {
    if model.seeds.is_empty() {
        return Err(Error::InvalidArgument("reranking needs at least one seed".into()));
    }
    let (n1, n2) = (model.p_hat_1.nrows(), model.p_hat_2.nrows());
    if g1.vertex_count() != n1 || g2.vertex_count() != n2 {
        return Err(Error::Dimension("graphs do not match the probability estimates".into()));
    }
    if x >= n1 {
        return Err(Error::IndexOutOfRange { index: x, len: n1 });
    }
    if v >= n2 {
        return Err(Error::IndexOutOfRange { index: v, len: n2 });
    }
    if model.seeds.iter().any(|&(w, _)| w == x) {
        return Err(Error::InvalidArgument(format!("query {x} is a seed")));
    }
    Ok(model
        .seeds
        .iter()
        .map(|&(w, s)| (g1.entry(x, w) * g2.entry(v, s), model.p_hat_1[(x, w)], model.p_hat_2[(v, s)]))
        .collect())
}

fn log_likelihood_terms(terms: &[(f64, f64, f64)], rho: f64) -> f64 {
    terms
        .iter()
        .map(|&(c, p1, p2)| {
            let p = edge_probability(p1, p2, rho);
            c * p.ln() + (1.0 - c) * (1.0 - p).ln()
        })
        .sum()
}

/// Log-likelihood of `ρ` given the co-occurrence of edges from `x` and `v`
/// to the seeds.
pub fn seed_log_likelihood(x: usize, v: usize, rho: f64, model: &RerankModel, g1: &Graph, g2: &Graph) -> Result<f64> {
    Ok(log_likelihood_terms(&seed_terms(x, v, model, g1, g2)?, rho))
}

/// Range of `ρ` in `[−1, 1]` keeping every unclamped `p_vw(ρ)` inside
/// `(0, 1)`.
fn feasible_interval(terms: &[(f64, f64, f64)]) -> (f64, f64) {
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for &(_, p1, p2) in terms {
        let a = p1 * p2;
        let b = p1 * (1.0 - p1);
        lo = lo.max(-a / b);
        hi = hi.min((1.0 - a) / b);
    }
    (lo, hi)
}

/// Maximum-likelihood estimate of the edge correlation between query `x`
/// and candidate `v`, from their edges to the seeds.
///
/// A uniform grid over the feasible interval locates the best bracket,
/// which golden-section search then narrows to `1e-4`.
pub fn likelihood_rho(x: usize, v: usize, model: &RerankModel, g1: &Graph, g2: &Graph) -> Result<f64> {
    let terms = seed_terms(x, v, model, g1, g2)?;
    let (lo, hi) = feasible_interval(&terms);
    let f = |rho: f64| log_likelihood_terms(&terms, rho);

    let steps = model.grid - 1;
    let at = |k: usize| lo + (hi - lo) * k as f64 / steps as f64;
    let mut best_k = 0;
    let mut best = f(lo);
    for k in 1..=steps {
        let value = f(at(k));
        if value > best {
            best = value;
            best_k = k;
        }
    }
    let mut a = at(best_k.saturating_sub(1));
    let mut b = at((best_k + 1).min(steps));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let refined = 0.5 * (a + b);
    Ok(if f(refined) >= best { refined } else { at(best_k) })
}

/// Reorders the first `rhos.len()` entries by decreasing `|ρ̂|`, keeping
/// the original order among ties and leaving the tail alone.
pub(crate) fn reorder_head(list: &NominationList, rhos: &[f64]) -> NominationList {
    let head = rhos.len();
    let mut order: Vec<usize> = (0..head).collect();
    order.sort_by(|&a, &b| rhos[b].abs().total_cmp(&rhos[a].abs()));
    let mut entries: Vec<Nominee> = order
        .into_iter()
        .map(|k| Nominee { candidate: list.entries[k].candidate, score: rhos[k].abs(), kind: ScoreKind::AbsRho })
        .collect();
    entries.extend_from_slice(&list.entries[head..]);
    NominationList { query: list.query, entries }
}

/// Reranks the head of `list` by estimated edge correlation with the query.
pub fn rerank(list: &NominationList, model: &RerankModel, g1: &Graph, g2: &Graph) -> Result<NominationList> {
    if list.is_empty() {
        return Err(Error::InvalidArgument("cannot rerank an empty list".into()));
    }
    let head = model.head_len(list.len());
    let rhos = list.entries[..head]
        .iter()
        .map(|e| likelihood_rho(list.query, e.candidate, model, g1, g2))
        .collect::<Result<Vec<_>>>()?;
    Ok(reorder_head(list, &rhos))
}

/// Reciprocal rank and normalized rank of `truth` in `list`.
pub fn rr_nr(list: &NominationList, truth: usize) -> Result<(f64, f64)> {
    let rank = list
        .rank_of(truth)
        .ok_or_else(|| Error::InvalidArgument(format!("true match {truth} is not among the candidates")))?;
    let rr = 1.0 / rank as f64;
    let nr = if list.len() == 1 { 0.0 } else { (rank - 1) as f64 / (list.len() - 1) as f64 };
    Ok((rr, nr))
}

/// Arithmetic mean.
pub fn aggregate(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot average an empty list".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Standard error of the mean (sample standard deviation over `√len`);
/// zero for a single value.
pub fn standard_error(values: &[f64]) -> Result<f64> {
    let mean = aggregate(values)?;
    let k = values.len();
    if k == 1 {
        return Ok(0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    Ok((var / k as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::ase_graph;
    use crate::synth::{sample_correlated_pair, sphere_latents};
    use proptest::prelude::*;
    use rand::Rng;

    fn plan_row(values: &[f64], costs: &[f64]) -> (TransportPlan, CostMatrix) {
        let m = values.len();
        let plan = TransportPlan::from_parts(DMatrix::from_row_slice(1, m, values), 1.0, vec![]);
        let cost = CostMatrix::new(DMatrix::from_row_slice(1, m, costs)).unwrap();
        (plan, cost)
    }

    #[test]
    fn ranks_by_plan_mass() {
        let (plan, cost) = plan_row(&[0.0, 3.0, 1.0], &[0.0, 0.0, 0.0]);
        let list = rank_from_plan(&plan, &cost, 0, &[], 9).unwrap();
        assert_eq!(list.candidates(), vec![1, 2, 0]);
        assert!(list.entries().iter().all(|e| e.kind == ScoreKind::PlanMass));
    }

    #[test]
    fn cost_breaks_mass_ties() {
        let (plan, cost) = plan_row(&[1.0, 1.0, 1.0], &[0.2, 0.1, 0.3]);
        assert_eq!(rank_from_plan(&plan, &cost, 0, &[], 0).unwrap().candidates(), vec![1, 0, 2]);
    }

    #[test]
    fn excluded_columns_are_dropped() {
        let (plan, cost) = plan_row(&[5.0, 1.0, 2.0], &[0.0, 0.1, 0.2]);
        let list = rank_from_plan(&plan, &cost, 0, &[0], 0).unwrap();
        assert_eq!(list.candidates(), vec![2, 1]);
        assert!(rank_from_plan(&plan, &cost, 0, &[0, 1, 2], 0).is_err());
        assert!(rank_from_plan(&plan, &cost, 1, &[], 0).is_err());
        assert!(rank_from_plan(&plan, &cost, 0, &[7], 0).is_err());
    }

    #[test]
    fn full_ties_follow_the_seed() {
        let (plan, cost) = plan_row(&[1.0; 8], &[0.5; 8]);
        let a = rank_from_plan(&plan, &cost, 0, &[], 11).unwrap();
        let b = rank_from_plan(&plan, &cost, 0, &[], 11).unwrap();
        assert_eq!(a, b);
        let distinct = (0..20u64)
            .map(|s| rank_from_plan(&plan, &cost, 0, &[], s).unwrap().candidates())
            .collect::<std::collections::BTreeSet<_>>();
        assert!(distinct.len() > 10);
    }

    proptest! {
        #[test]
        fn ranking_is_a_permutation(
            values in proptest::collection::vec(0u8..4, 1..12),
            seed in any::<u64>(),
            drop in proptest::collection::vec(any::<prop::sample::Index>(), 0..3),
        ) {
            let m = values.len();
            let mass: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let costs: Vec<f64> = values.iter().map(|&v| (3 - v) as f64 * 0.5).collect();
            let (plan, cost) = plan_row(&mass, &costs);
            let exclude: Vec<usize> = drop.iter().map(|i| i.index(m)).collect();
            match rank_from_plan(&plan, &cost, 0, &exclude, seed) {
                Ok(list) => {
                    let mut got = list.candidates();
                    got.sort_unstable();
                    let expected: Vec<usize> = (0..m).filter(|j| !exclude.contains(j)).collect();
                    prop_assert_eq!(got, expected);
                    prop_assert!(list.entries().windows(2).all(|w| w[0].score >= w[1].score));
                }
                Err(_) => prop_assert!((0..m).all(|j| exclude.contains(&j))),
            }
        }

        #[test]
        fn rerank_permutes_only_the_head(
            len in 1usize..15,
            head in 0usize..15,
            rhos in proptest::collection::vec(-1.0f64..1.0, 15),
        ) {
            let head = head.min(len);
            let entries = (0..len).map(|j| Nominee { candidate: 100 + j, score: (len - j) as f64, kind: ScoreKind::PlanMass }).collect();
            let list = NominationList::new(3, entries).unwrap();
            let out = reorder_head(&list, &rhos[..head]);
            prop_assert_eq!(&out.entries()[head..], &list.entries()[head..]);
            let mut a = out.candidates();
            let mut b = list.candidates();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
            prop_assert!(out.entries()[..head].windows(2).all(|w| w[0].score >= w[1].score));
        }
    }

    #[test]
    fn head_reordered_by_absolute_rho() {
        let entries = (0..4).map(|j| Nominee { candidate: j, score: 4.0 - j as f64, kind: ScoreKind::PlanMass }).collect();
        let list = NominationList::new(0, entries).unwrap();
        let out = reorder_head(&list, &[0.1, -0.9, 0.5]);
        assert_eq!(out.candidates(), vec![1, 2, 0, 3]);
        assert_eq!(out.entries()[0].kind, ScoreKind::AbsRho);
        assert_eq!(out.entries()[3].kind, ScoreKind::PlanMass);

        let single = reorder_head(&list, &[0.3]);
        assert_eq!(single.candidates(), list.candidates());
        assert_eq!(single.entries()[0].score, 0.3);
    }

    #[test]
    fn ties_keep_original_order() {
        let entries = (0..3).map(|j| Nominee { candidate: j, score: 1.0, kind: ScoreKind::PlanMass }).collect();
        let list = NominationList::new(0, entries).unwrap();
        assert_eq!(reorder_head(&list, &[0.2, -0.2, 0.2]).candidates(), vec![0, 1, 2]);
    }

    #[test]
    fn plug_in_probability() {
        assert!((edge_probability(0.5, 0.5, 0.4) - 0.35).abs() < 1e-15);
        assert_eq!(edge_probability(1.0, 1.0, 0.0), 1.0 - P_HAT_EPS);
        assert_eq!(edge_probability(0.1, 0.01, -1.0), P_HAT_EPS);
    }

    #[test]
    fn rank_metrics() {
        let entries = (0..5).map(|j| Nominee { candidate: j, score: 0.0, kind: ScoreKind::PlanMass }).collect();
        let list = NominationList::new(0, entries).unwrap();
        assert_eq!(rr_nr(&list, 0).unwrap(), (1.0, 0.0));
        let (rr, nr) = rr_nr(&list, 2).unwrap();
        assert!((rr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(nr, 0.5);
        assert!(rr_nr(&list, 9).is_err());

        let single = NominationList::new(0, vec![Nominee { candidate: 4, score: 1.0, kind: ScoreKind::PlanMass }]).unwrap();
        assert_eq!(rr_nr(&single, 4).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn random_lists_have_half_normalized_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let candidates: Vec<usize> = (0..50).collect();
        let nrs: Vec<f64> = (0..4000)
            .map(|_| rr_nr(&NominationList::random(0, &candidates, &mut rng).unwrap(), 7).unwrap().1)
            .collect();
        // NR is uniform on {0, 1/49, …, 1}: standard deviation ≈ 0.29.
        assert!((aggregate(&nrs).unwrap() - 0.5).abs() < 4.0 * 0.29 / (4000f64).sqrt());
    }

    #[test]
    fn averaging() {
        assert_eq!(aggregate(&[1.0]).unwrap(), 1.0);
        assert_eq!(aggregate(&[1.0, 0.5, 0.25, 0.25]).unwrap(), 0.5);
        assert!(aggregate(&[]).is_err());
        assert_eq!(standard_error(&[2.0]).unwrap(), 0.0);
        // Sample variance of (1, 3) is 2; stderr = sqrt(2/2) = 1.
        assert!((standard_error(&[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_candidates_rejected() {
        let e = Nominee { candidate: 1, score: 0.0, kind: ScoreKind::PlanMass };
        assert!(NominationList::new(0, vec![e, e]).is_err());
    }

    struct Fixture {
        g1: Graph,
        g2: Graph,
        model: RerankModel,
        seeds: Vec<(usize, usize)>,
    }

    fn fixture(n: usize, k: usize, rho: f64, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp = sphere_latents(n, &mut rng).unwrap();
        let pair = sample_correlated_pair(&lp, rho, &mut rng).unwrap();
        let e1 = ase_graph(&pair.g1, 3).unwrap();
        let e2 = ase_graph(&pair.g2, 3).unwrap();
        let seeds: Vec<(usize, usize)> = (0..k).map(|i| (i, i)).collect();
        let corr = Correspondence::new(seeds.clone(), n, n).unwrap();
        let model = RerankModel::from_embeddings(&e1, &e2, &corr).unwrap();
        Fixture { g1: pair.g1, g2: pair.g2, model, seeds }
    }

    /// Direct evaluation of the likelihood on a fine grid, independent of
    /// the library's search.
    fn dense_grid_argmax(f: &Fixture, x: usize, v: usize) -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=20_000 {
            let rho = -1.0 + k as f64 / 10_000.0;
            let mut ll = 0.0;
            let mut feasible = true;
            for &(w, s) in &f.seeds {
                let p1 = f.model.p_hat_1[(x, w)];
                let p2 = f.model.p_hat_2[(v, s)];
                let raw = p1 * p2 + rho * p1 * (1.0 - p1);
                if raw <= 0.0 || raw >= 1.0 {
                    feasible = false;
                    break;
                }
                let p = raw.clamp(1e-4, 1.0 - 1e-4);
                let c = if f.g1.has_edge(x, w) && f.g2.has_edge(v, s) { 1.0 } else { 0.0 };
                ll += c * p.ln() + (1.0 - c) * (1.0 - p).ln();
            }
            if feasible && ll > best.0 {
                best = (ll, rho);
            }
        }
        best.1
    }

    #[test]
    fn perfectly_correlated_match_stands_out() {
        let f = fixture(120, 30, 1.0, 21);
        let mut wins = 0;
        let mut total = 0;
        for x in 30..40 {
            let own = likelihood_rho(x, x, &f.model, &f.g1, &f.g2).unwrap();
            assert!((own - dense_grid_argmax(&f, x, x)).abs() < 0.1, "query {x}");
            let others: Vec<f64> = (30..120)
                .filter(|&v| v != x)
                .map(|v| likelihood_rho(x, v, &f.model, &f.g1, &f.g2).unwrap())
                .collect();
            wins += others.iter().filter(|&&r| own > r).count();
            total += others.len();
        }
        assert!(wins as f64 > 0.9 * total as f64, "{wins}/{total}");
    }

    #[test]
    fn grid_search_agrees_with_dense_oracle() {
        let f = fixture(80, 20, 0.5, 3);
        for (x, v) in [(25, 25), (30, 41), (50, 60), (79, 20)] {
            let fast = likelihood_rho(x, v, &f.model, &f.g1, &f.g2).unwrap();
            let slow = dense_grid_argmax(&f, x, v);
            let lf = seed_log_likelihood(x, v, fast, &f.model, &f.g1, &f.g2).unwrap();
            let ls = seed_log_likelihood(x, v, slow, &f.model, &f.g1, &f.g2).unwrap();
            assert!(lf >= ls - 1e-6, "({x},{v}): {fast} vs {slow}");
        }
    }

    #[test]
    fn independent_graphs_give_small_rho() {
        let mut values = Vec::new();
        for rep in 0..100u64 {
            let f = fixture(200, 100, 0.0, 1000 + rep);
            let mut rng = ChaCha8Rng::seed_from_u64(rep);
            let x = rng.gen_range(100..200);
            let v = rng.gen_range(0..200);
            values.push(likelihood_rho(x, v, &f.model, &f.g1, &f.g2).unwrap().abs());
        }
        values.sort_by(f64::total_cmp);
        assert!(values[50] < 0.2, "median |ρ̂| = {}", values[50]);
    }

    #[test]
    fn seed_order_does_not_matter() {
        let f = fixture(60, 15, 0.6, 8);
        let mut reversed: Vec<(usize, usize)> = f.seeds.clone();
        reversed.reverse();
        let other = RerankModel::new(
            f.model.p_hat_1.clone(),
            f.model.p_hat_2.clone(),
            &Correspondence::new(reversed, 60, 60).unwrap(),
        )
        .unwrap();
        for v in [15, 20, 33] {
            assert_eq!(
                likelihood_rho(20, v, &f.model, &f.g1, &f.g2).unwrap(),
                likelihood_rho(20, v, &other, &f.g1, &f.g2).unwrap()
            );
        }
    }

    #[test]
    fn rerank_input_checks() {
        let f = fixture(40, 5, 0.5, 2);
        assert!(likelihood_rho(2, 10, &f.model, &f.g1, &f.g2).is_err());
        assert!(RerankModel::new(f.model.p_hat_1.clone(), f.model.p_hat_2.clone(), &Correspondence::empty()).is_err());
        assert!(RerankModel::new(DMatrix::from_element(40, 40, 0.0), f.model.p_hat_2.clone(), &Correspondence::identity(3)).is_err());
        let empty = NominationList::new(10, vec![]).unwrap();
        assert!(rerank(&empty, &f.model, &f.g1, &f.g2).is_err());
        assert_eq!(f.model.head_len(10), 10);
        assert_eq!(f.model.clone().with_top_l(3).unwrap().head_len(10), 3);
    }
}
