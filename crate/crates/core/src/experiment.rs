//! End-to-end nomination runs: configuration, Monte Carlo campaigns on
//! synthetic correlated graphs, the files-mode protocol, and emitting
//! results as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::align::{procrustes, register, AlignMethod, RegistrationConfig, Rotation};
use crate::embed::{select_dimension, Embedding, Spectrum};
use crate::error::{Error, Result};
use crate::graph::{load_correspondence, load_edge_list, Correspondence, Directedness, Graph};
use crate::nominate::{aggregate, rank_from_plan, rerank, rr_nr, standard_error, NominationList, RerankModel};
use crate::synth::{
    reference_block_matrix, replicate_rng, sample_correlated_pair, sbm_latents, sphere_latents, LatentPositions,
    SbmSpec,
};
use crate::transport::{cost_matrix, solve_plan, CostMatrix, PlanOptions};

/// Where the graph pair comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// Latent positions drawn uniformly from the nonnegative orthant of the
    /// unit sphere in three dimensions, fresh for every replicate.
    RdpgSphere,
    /// Stochastic block model with fixed block matrix.
    Sbm,
    /// Edge lists and a shared-vertex correspondence read from disk.
    Files,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::RdpgSphere => "rdpg_sphere",
            Model::Sbm => "sbm",
            Model::Files => "files",
        }
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rdpg_sphere" | "sphere" | "rdpg" => Ok(Model::RdpgSphere),
            "sbm" => Ok(Model::Sbm),
            "files" => Ok(Model::Files),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Embedding dimension: fixed, or picked per graph pair from the scree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Fixed(usize),
    Auto,
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Dimension::Auto);
        }
        match s.parse::<usize>() {
            Ok(d) if d > 0 => Ok(Dimension::Fixed(d)),
            _ => Err(Error::Config(format!("dimension must be a positive integer or `auto`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dimension::Fixed(d) => write!(f, "{d}"),
            Dimension::Auto => f.write_str("auto"),
        }
    }
}

/// Every knob of a run. Serialized as flat `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Model,
    pub n: usize,
    pub rho: f64,
    pub gamma: f64,
    pub d: Dimension,
    /// Upper bound for automatic dimension selection.
    pub max_d: usize,
    /// Number of seeds `K`.
    pub seeds: usize,
    pub lambda: f64,
    pub align_method: AlignMethod,
    /// Pin seed pairs in the plan; otherwise seed rows and columns are
    /// removed before solving.
    pub use_seeds_in_qp: bool,
    pub rerank: bool,
    pub top_l: usize,
    pub replicates: usize,
    pub master_seed: u64,
    pub block_matrix: Option<DMatrix<f64>>,
    pub block_sizes: Option<Vec<usize>>,
    pub g1: Option<PathBuf>,
    pub g2: Option<PathBuf>,
    pub correspondence: Option<PathBuf>,
    pub directed: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: Model::RdpgSphere,
            n: 300,
            rho: 0.5,
            gamma: 1.0,
            d: Dimension::Fixed(3),
            max_d: 10,
            seeds: 6,
            lambda: 1.0,
            align_method: AlignMethod::Procrustes,
            use_seeds_in_qp: true,
            rerank: false,
            top_l: 50,
            replicates: 100,
            master_seed: 0,
            block_matrix: None,
            block_sizes: None,
            g1: None,
            g2: None,
            correspondence: None,
            directed: false,
        }
    }
}

/// Recognized configuration keys, in echo order.
pub const CONFIG_KEYS: [&str; 20] = [
    "model",
    "n",
    "rho",
    "gamma",
    "d",
    "max_d",
    "seeds",
    "lambda",
    "align_method",
    "use_seeds_in_qp",
    "rerank",
    "top_l",
    "replicates",
    "master_seed",
    "block_matrix",
    "block_sizes",
    "g1",
    "g2",
    "correspondence",
    "directed",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

/// Rows separated by `;`, entries by `,`.
fn parse_block_matrix(value: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = value
        .split(';')
        .map(|row| row.split(',').map(|v| parse_value::<f64>("block_matrix", v)).collect())
        .collect::<Result<_>>()?;
    let k = rows.len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::Config("block_matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

fn format_block_matrix(b: &DMatrix<f64>) -> String {
    (0..b.nrows())
        .map(|i| b.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

impl ExperimentConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are ignored
    /// and unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", k + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", k + 1, strip_config_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ExperimentConfig::parse(&fs::read_to_string(path)?)
    }

    /// Assigns one key. Keys are case-insensitive; `k` and `master_seed`'s
    /// short form `seed` are accepted as aliases.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key.as_str() {
            "model" => self.model = value.parse()?,
            "n" => self.n = parse_value(&key, value)?,
            "rho" => self.rho = parse_value(&key, value)?,
            "gamma" => self.gamma = parse_value(&key, value)?,
            "d" => self.d = value.parse()?,
            "max_d" => self.max_d = parse_value(&key, value)?,
            "seeds" | "k" => self.seeds = parse_value(&key, value)?,
            "lambda" => self.lambda = parse_value(&key, value)?,
            "align_method" | "align" => {
                self.align_method = value.parse().map_err(|_| Error::Config(format!("unknown align method `{value}`")))?
            }
            "use_seeds_in_qp" => self.use_seeds_in_qp = parse_bool(&key, value)?,
            "rerank" => self.rerank = parse_bool(&key, value)?,
            "top_l" => self.top_l = parse_value(&key, value)?,
            "replicates" => self.replicates = parse_value(&key, value)?,
            "master_seed" | "seed" => self.master_seed = parse_value(&key, value)?,
            "block_matrix" | "b" => {
                self.block_matrix = if value.is_empty() { None } else { Some(parse_block_matrix(value)?) }
            }
            "block_sizes" => {
                self.block_sizes = if value.is_empty() {
                    None
                } else {
                    Some(value.split(',').map(|v| parse_value("block_sizes", v)).collect::<Result<_>>()?)
                }
            }
            "g1" => self.g1 = path(value),
            "g2" => self.g2 = path(value),
            "correspondence" => self.correspondence = path(value),
            "directed" => self.directed = parse_bool(&key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical echo: every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("model", self.model.name().into());
        line("n", self.n.to_string());
        line("rho", self.rho.to_string());
        line("gamma", self.gamma.to_string());
        line("d", self.d.to_string());
        line("max_d", self.max_d.to_string());
        line("seeds", self.seeds.to_string());
        line("lambda", self.lambda.to_string());
        line("align_method", self.align_method.name().into());
        line("use_seeds_in_qp", self.use_seeds_in_qp.to_string());
        line("rerank", self.rerank.to_string());
        line("top_l", self.top_l.to_string());
        line("replicates", self.replicates.to_string());
        line("master_seed", self.master_seed.to_string());
        line("block_matrix", self.block_matrix.as_ref().map(format_block_matrix).unwrap_or_default());
        line(
            "block_sizes",
            self.block_sizes
                .as_ref()
                .map(|s| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
                .unwrap_or_default(),
        );
        line("g1", path(&self.g1));
        line("g2", path(&self.g2));
        line("correspondence", path(&self.correspondence));
        line("directed", self.directed.to_string());
        out
    }

    /// Checks the cross-field constraints a run relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.top_l == 0 {
            return bad("top_l must be positive".into());
        }
        if self.max_d == 0 {
            return bad("max_d must be positive".into());
        }
        if self.align_method == AlignMethod::Procrustes {
            if self.seeds == 0 {
                return bad("procrustes alignment needs at least one seed".into());
            }
            if let Dimension::Fixed(d) = self.d {
                if self.seeds < d {
                    return bad(format!("procrustes needs K >= d, got K={} d={d}", self.seeds));
                }
            }
        }
        if self.rerank && self.seeds == 0 {
            return bad("reranking needs at least one seed".into());
        }
        match self.model {
            Model::Files => {
                if self.g1.is_none() || self.g2.is_none() || self.correspondence.is_none() {
                    return bad("files mode needs g1, g2 and correspondence".into());
                }
            }
            Model::RdpgSphere | Model::Sbm => {
                if !(0.0..=1.0).contains(&self.rho) {
                    return bad(format!("rho must lie in [0, 1], got {}", self.rho));
                }
                if !(self.gamma > 0.0 && self.gamma <= 1.0) {
                    return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
                }
                if self.n < self.seeds + 2 {
                    return bad(format!("n = {} leaves no room for a query besides {} seeds", self.n, self.seeds));
                }
                if let Dimension::Fixed(d) = self.d {
                    if d > self.n {
                        return bad(format!("d = {d} exceeds n = {}", self.n));
                    }
                }
                if self.model == Model::Sbm {
                    self.sbm_spec()?;
                }
            }
        }
        Ok(())
    }

    /// Block model implied by the configuration; block sizes default to an
    /// even split of `n` (earlier blocks take the remainder).
    pub fn sbm_spec(&self) -> Result<SbmSpec> {
        let b = self.block_matrix.clone().unwrap_or_else(reference_block_matrix);
        let sizes = match &self.block_sizes {
            Some(sizes) => {
                if sizes.iter().sum::<usize>() != self.n {
                    return Err(Error::Config(format!("block sizes sum to {}, not n = {}", sizes.iter().sum::<usize>(), self.n)));
                }
                sizes.clone()
            }
            None => {
                let k = b.nrows();
                (0..k).map(|i| self.n / k + usize::from(i < self.n % k)).collect()
            }
        };
        SbmSpec::new(sizes, b).map_err(|e| Error::Config(e.to_string()))
    }

    /// Stem shared by all emitted files.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_rho{}_K{}_lambda{}_{}",
            self.model.name(),
            self.rho,
            self.seeds,
            self.lambda,
            self.align_method.name()
        )
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions::with_lambda(self.lambda)
    }
}

fn strip_config_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// Rank of the true match in one list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankScore {
    pub rank: usize,
    pub list_len: usize,
    pub rr: f64,
    pub nr: f64,
}

impl RankScore {
    fn of(list: &NominationList, truth: usize) -> Result<Self> {
        let (rr, nr) = rr_nr(list, truth)?;
        Ok(RankScore { rank: list.rank_of(truth).unwrap_or(0), list_len: list.len(), rr, nr })
    }
}

/// Outcome of one query in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub query: String,
    pub truth: String,
    pub base: RankScore,
    pub reranked: Option<RankScore>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mrr: f64,
    pub mnr: f64,
    pub mrr_se: f64,
    pub mnr_se: f64,
}

impl MetricSummary {
    pub fn of(scores: &[RankScore]) -> Result<Self> {
        let rr: Vec<f64> = scores.iter().map(|s| s.rr).collect();
        let nr: Vec<f64> = scores.iter().map(|s| s.nr).collect();
        Ok(MetricSummary {
            mrr: aggregate(&rr)?,
            mnr: aggregate(&nr)?,
            mrr_se: standard_error(&rr)?,
            mnr_se: standard_error(&nr)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub completed: usize,
    pub failed: usize,
    /// `None` when every replicate failed.
    pub base: Option<MetricSummary>,
    pub reranked: Option<MetricSummary>,
}

impl Summary {
    pub fn of(rows: &[ReplicateRow], failed: usize) -> Result<Self> {
        let base: Vec<RankScore> = rows.iter().map(|r| r.base).collect();
        let reranked: Vec<RankScore> = rows.iter().filter_map(|r| r.reranked).collect();
        Ok(Summary {
            completed: rows.len(),
            failed,
            base: if base.is_empty() { None } else { Some(MetricSummary::of(&base)?) },
            reranked: if reranked.is_empty() { None } else { Some(MetricSummary::of(&reranked)?) },
        })
    }
}

/// Counts of normalized rank per query in the buckets `{0}`, `(0, 0.2]`,
/// `(0.2, 0.5]` and `(0.5, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub query: String,
    pub counts: [usize; 4],
}

pub const NR_BUCKETS: [&str; 4] = ["0", "(0,0.2]", "(0.2,0.5]", "(0.5,1]"];

pub fn nr_bucket(nr: f64) -> usize {
    if nr <= 0.0 {
        0
    } else if nr <= 0.2 {
        1
    } else if nr <= 0.5 {
        2
    } else {
        3
    }
}

/// Wall-clock time per pipeline stage, summed over replicates. Kept out of
/// emitted files so that repeated runs produce identical output.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub sample: Duration,
    pub embed: Duration,
    pub align: Duration,
    pub plan: Duration,
    pub rank: Duration,
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.sample += o.sample;
        self.embed += o.embed;
        self.align += o.align;
        self.plan += o.plan;
        self.rank += o.rank;
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub rows: Vec<ReplicateRow>,
    /// `(replicate, message)` for replicates that errored.
    pub failures: Vec<(usize, String)>,
    pub summary: Summary,
    pub histogram: Option<Vec<HistogramRow>>,
    pub timings: StageTimings,
}

/// Embeds both graphs at a common dimension. With [`Dimension::Auto`] each
/// scree picks its own elbow (capped at `max_d`) and the larger is used.
pub fn embed_pair(g1: &Graph, g2: &Graph, d: Dimension, max_d: usize) -> Result<(Embedding, Embedding)> {
    let s1 = Spectrum::of_graph(g1)?;
    let s2 = Spectrum::of_graph(g2)?;
    let d = match d {
        Dimension::Fixed(d) => d,
        Dimension::Auto => select_dimension(s1.values(), max_d)?.max(select_dimension(s2.values(), max_d)?),
    };
    Ok((s1.embed(d)?, s2.embed(d)?))
}

/// Settings for nominating from a fixed pair of embeddings.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub align_method: AlignMethod,
    pub plan: PlanOptions,
    pub use_seeds_in_qp: bool,
    pub rerank: bool,
    pub top_l: usize,
    pub registration_seed: u64,
}

impl PipelineOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        PipelineOptions {
            align_method: cfg.align_method,
            plan: cfg.plan_options(),
            use_seeds_in_qp: cfg.use_seeds_in_qp,
            rerank: cfg.rerank,
            top_l: cfg.top_l,
            registration_seed: cfg.master_seed,
        }
    }
}

/// Lists produced for one query.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub base: NominationList,
    pub reranked: Option<NominationList>,
}

fn rows_of(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, k| x[(rows[i], k)])
}

/// Aligns the first embedding onto the second.
pub fn align_embeddings(
    e1: &Embedding,
    e2: &Embedding,
    seeds: &Correspondence,
    method: AlignMethod,
    registration_seed: u64,
) -> Result<Rotation> {
    match method {
        AlignMethod::Procrustes => {
            if seeds.is_empty() {
                return Err(Error::InvalidArgument("procrustes alignment needs seeds".into()));
            }
            let left: Vec<usize> = seeds.left().collect();
            let right: Vec<usize> = seeds.right().collect();
            procrustes(&rows_of(e1.x_hat(), &left), &rows_of(e2.x_hat(), &right))
        }
        AlignMethod::Registration => {
            let cfg = RegistrationConfig { seed: registration_seed, ..Default::default() };
            register(e1.x_hat(), e2.x_hat(), &cfg)
        }
    }
}

/// Runs alignment, transport and ranking for the given queries, reusing
/// one plan for all of them.
#[allow(clippy::too_many_arguments)]
pub fn nominate_queries(
    g1: &Graph,
    g2: &Graph,
    e1: &Embedding,
    e2: &Embedding,
    seeds: &Correspondence,
    queries: &[usize],
    options: &PipelineOptions,
    tie_seed: u64,
    timings: &mut StageTimings,
) -> Result<Vec<QueryOutcome>> {
    let (n, m) = (e1.vertex_count(), e2.vertex_count());
    let seed_left: Vec<usize> = seeds.left().collect();
    let seed_right: Vec<usize> = seeds.right().collect();
    for &q in queries {
        if seed_left.contains(&q) {
            return Err(Error::InvalidArgument(format!("query {q} is a seed")));
        }
    }

    let clock = Instant::now();
    let rotation = align_embeddings(e1, e2, seeds, options.align_method, options.registration_seed)?;
    let aligned = rotation.apply(e1.x_hat())?;
    timings.align += clock.elapsed();

    let clock = Instant::now();
    let full_cost = cost_matrix(&aligned, e2.x_hat())?;
    // Either pin the seeds, or leave them out of the transport problem.
    let (rows, cols, cost, pins) = if options.use_seeds_in_qp {
        ((0..n).collect::<Vec<_>>(), (0..m).collect::<Vec<_>>(), full_cost, seeds.pairs().to_vec())
    } else {
        let rows: Vec<usize> = (0..n).filter(|i| !seed_left.contains(i)).collect();
        let cols: Vec<usize> = (0..m).filter(|j| !seed_right.contains(j)).collect();
        let sub = DMatrix::from_fn(rows.len(), cols.len(), |a, b| full_cost.get(rows[a], cols[b]));
        (rows, cols, CostMatrix::new(sub)?, Vec::new())
    };
    let plan = solve_plan(&cost, &pins, &options.plan)?;
    timings.plan += clock.elapsed();

    let clock = Instant::now();
    let model = if options.rerank {
        Some(RerankModel::from_embeddings(e1, e2, seeds)?.with_top_l(options.top_l)?)
    } else {
        None
    };
    let excluded: Vec<usize> = if options.use_seeds_in_qp { seed_right.clone() } else { Vec::new() };
    let mut outcomes = Vec::with_capacity(queries.len());
    for &q in queries {
        let local_q = rows.iter().position(|&r| r == q).expect("non-seed query has a plan row");
        let local = rank_from_plan(&plan, &cost, local_q, &excluded, tie_seed)?;
        let entries = local
            .entries()
            .iter()
            .map(|e| crate::nominate::Nominee { candidate: cols[e.candidate], ..*e })
            .collect();
        let base = NominationList::new(q, entries)?;
        let reranked = match &model {
            Some(model) => Some(rerank(&base, model, g1, g2)?),
            None => None,
        };
        outcomes.push(QueryOutcome { base, reranked });
    }
    timings.rank += clock.elapsed();
    Ok(outcomes)
}

fn latent_source(cfg: &ExperimentConfig) -> Result<Option<LatentPositions>> {
    match cfg.model {
        Model::Sbm => Ok(Some(sbm_latents(&cfg.sbm_spec()?)?.with_gamma(cfg.gamma)?)),
        _ => Ok(None),
    }
}

type ReplicateResult = (usize, Result<ReplicateRow>, StageTimings);

/// One synthetic replicate: sample a pair, draw seeds and a query, nominate
/// and score against the identity correspondence.
pub fn run_replicate(cfg: &ExperimentConfig, fixed_latents: Option<&LatentPositions>, index: usize) -> (Result<ReplicateRow>, StageTimings) {
    let mut timings = StageTimings::default();
    let result = (|| {
        let mut rng = replicate_rng(cfg.master_seed, index as u64);
        let clock = Instant::now();
        let latents = match fixed_latents {
            Some(lp) => lp.clone(),
            None => sphere_latents(cfg.n, &mut rng)?.with_gamma(cfg.gamma)?,
        };
        let pair = sample_correlated_pair(&latents, cfg.rho, &mut rng)?;
        let n = latents.vertex_count();
        let mut seed_vertices = sample(&mut rng, n, cfg.seeds).into_vec();
        seed_vertices.sort_unstable();
        let candidates: Vec<usize> = (0..n).filter(|v| seed_vertices.binary_search(v).is_err()).collect();
        let query = *candidates.choose(&mut rng).expect("validated n > K");
        let tie_seed: u64 = rng.gen();
        let registration_seed: u64 = rng.gen();
        timings.sample += clock.elapsed();

        let clock = Instant::now();
        let max_d = if cfg.align_method == AlignMethod::Procrustes { cfg.max_d.min(cfg.seeds) } else { cfg.max_d };
        let (e1, e2) = embed_pair(&pair.g1, &pair.g2, cfg.d, max_d)?;
        timings.embed += clock.elapsed();

        let seeds = Correspondence::new(seed_vertices.iter().map(|&s| (s, s)).collect(), n, n)?;
        let options = PipelineOptions { registration_seed, ..PipelineOptions::from_config(cfg) };
        let outcome = nominate_queries(&pair.g1, &pair.g2, &e1, &e2, &seeds, &[query], &options, tie_seed, &mut timings)?
            .pop()
            .expect("one query");
        Ok(ReplicateRow {
            replicate: index,
            query: query.to_string(),
            truth: query.to_string(),
            base: RankScore::of(&outcome.base, query)?,
            reranked: outcome.reranked.as_ref().map(|l| RankScore::of(l, query)).transpose()?,
        })
    })();
    (result, timings)
}

fn collect(cfg: &ExperimentConfig, mut results: Vec<ReplicateResult>, histogram: Option<Vec<HistogramRow>>) -> Result<RunRecord> {
    results.sort_by_key(|r| r.0);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut timings = StageTimings::default();
    for (index, result, t) in results {
        timings += t;
        match result {
            Ok(row) => rows.push(row),
            Err(e) if matches!(e, Error::Config(_)) => return Err(e),
            Err(e) => failures.push((index, e.to_string())),
        }
    }
    let summary = Summary::of(&rows, failures.len())?;
    Ok(RunRecord { config: cfg.clone(), rows, failures, summary, histogram, timings })
}

/// Monte Carlo campaign on synthetic correlated pairs.
///
/// Replicates run in parallel, each from its own seed stream, and are
/// collected in index order, so the record does not depend on scheduling.
/// Replicates whose pipeline fails are counted and left out of the
/// aggregates.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<RunRecord> {
    if cfg.model == Model::Files {
        return Err(Error::Config("run_simulation needs a synthetic model".into()));
    }
    cfg.validate()?;
    let latents = latent_source(cfg)?;
    let results: Vec<ReplicateResult> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let (res, t) = run_replicate(cfg, latents.as_ref(), r);
            (r, res, t)
        })
        .collect();
    collect(cfg, results, None)
}

/// Files-mode protocol: every shared vertex serves as the query in turn,
/// with `replicates` random seed sets of size `K` drawn from the other
/// shared vertices.
pub fn run_files(cfg: &ExperimentConfig) -> Result<RunRecord> {
    if cfg.model != Model::Files {
        return Err(Error::Config("run_files needs model=files".into()));
    }
    cfg.validate()?;
    let dir = if cfg.directed { Directedness::Directed } else { Directedness::Undirected };
    let g1 = load_edge_list(cfg.g1.as_ref().unwrap(), dir)?;
    let g2 = load_edge_list(cfg.g2.as_ref().unwrap(), dir)?;
    let shared = load_correspondence(cfg.correspondence.as_ref().unwrap(), &g1, &g2)?;
    run_files_with(cfg, &g1, &g2, &shared)
}

/// [`run_files`] on graphs already in memory.
pub fn run_files_with(cfg: &ExperimentConfig, g1: &Graph, g2: &Graph, shared: &Correspondence) -> Result<RunRecord> {
    if cfg.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    if shared.len() < cfg.seeds + 1 {
        return Err(Error::Config(format!(
            "{} shared vertices cannot supply {} seeds plus a query",
            shared.len(),
            cfg.seeds
        )));
    }
    let mut embed_time = StageTimings::default();
    let clock = Instant::now();
    let max_d = if cfg.align_method == AlignMethod::Procrustes { cfg.max_d.min(cfg.seeds.max(1)) } else { cfg.max_d };
    let (e1, e2) = embed_pair(g1, g2, cfg.d, max_d)?;
    if cfg.align_method == AlignMethod::Procrustes && cfg.seeds < e1.dimension() {
        return Err(Error::Config(format!("procrustes needs K >= d, got K={} d={}", cfg.seeds, e1.dimension())));
    }
    embed_time.embed += clock.elapsed();

    let pairs = shared.pairs().to_vec();
    let tasks: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|q| (0..cfg.replicates).map(move |r| (q, r))).collect();
    let results: Vec<ReplicateResult> = tasks
        .par_iter()
        .map(|&(q, r)| {
            let index = q * cfg.replicates + r;
            let mut timings = StageTimings::default();
            let result = (|| {
                let mut rng = replicate_rng(cfg.master_seed, index as u64);
                let (x, truth) = pairs[q];
                let others: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(a, _)| a != x).collect();
                let picked = sample(&mut rng, others.len(), cfg.seeds).into_vec();
                let seeds = Correspondence::new(
                    picked.iter().map(|&k| others[k]).collect(),
                    g1.vertex_count(),
                    g2.vertex_count(),
                )?;
                let tie_seed: u64 = rng.gen();
                let options = PipelineOptions::from_config(cfg);
                let outcome = nominate_queries(g1, g2, &e1, &e2, &seeds, &[x], &options, tie_seed, &mut timings)?
                    .pop()
                    .expect("one query");
                Ok(ReplicateRow {
                    replicate: r,
                    query: g1.label(x),
                    truth: g2.label(truth),
                    base: RankScore::of(&outcome.base, truth)?,
                    reranked: outcome.reranked.as_ref().map(|l| RankScore::of(l, truth)).transpose()?,
                })
            })();
            (index, result, timings)
        })
        .collect();

    let mut histogram: Vec<HistogramRow> =
        pairs.iter().map(|&(x, _)| HistogramRow { query: g1.label(x), counts: [0; 4] }).collect();
    for (index, result, _) in &results {
        if let Ok(row) = result {
            histogram[index / cfg.replicates].counts[nr_bucket(row.base.nr)] += 1;
        }
    }
    let mut record = collect(cfg, results, Some(histogram))?;
    record.timings += embed_time;
    Ok(record)
}

/// Runs whichever campaign the configured model calls for.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    match cfg.model {
        Model::Files => run_files(cfg),
        _ => run_simulation(cfg),
    }
}

pub const REPLICATE_HEADER: [&str; 11] =
    ["replicate", "query", "truth", "rank", "list_len", "rr", "nr", "rerank_rank", "rerank_rr", "rerank_nr", "rerank_list_len"];

fn replicates_csv(rows: &[ReplicateRow]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
    out.write_record(REPLICATE_HEADER).map_err(io)?;
    for row in rows {
        let re = |f: fn(&RankScore) -> String| row.reranked.as_ref().map(f).unwrap_or_default();
        out.write_record([
            row.replicate.to_string(),
            row.query.clone(),
            row.truth.clone(),
            row.base.rank.to_string(),
            row.base.list_len.to_string(),
            row.base.rr.to_string(),
            row.base.nr.to_string(),
            re(|s| s.rank.to_string()),
            re(|s| s.rr.to_string()),
            re(|s| s.nr.to_string()),
            re(|s| s.list_len.to_string()),
        ])
        .map_err(io)?;
    }
    out.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parses a replicate CSV written by [`emit`].
pub fn read_replicates(text: &str) -> Result<Vec<ReplicateRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::parse(1, format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = REPLICATE_HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::parse(line, e.to_string()))?;
        let get = |c: usize| &record[idx[c]];
        let num = |c: usize| -> Result<f64> { get(c).parse().map_err(|_| Error::parse(line, format!("bad number `{}`", get(c)))) };
        let int = |c: usize| -> Result<usize> { get(c).parse().map_err(|_| Error::parse(line, format!("bad integer `{}`", get(c)))) };
        let reranked = if get(7).is_empty() {
            None
        } else {
            Some(RankScore { rank: int(7)?, rr: num(8)?, nr: num(9)?, list_len: int(10)? })
        };
        rows.push(ReplicateRow {
            replicate: int(0)?,
            query: get(1).to_string(),
            truth: get(2).to_string(),
            base: RankScore { rank: int(3)?, list_len: int(4)?, rr: num(5)?, nr: num(6)? },
            reranked,
        });
    }
    Ok(rows)
}

pub const SUMMARY_HEADER: [&str; 7] = ["variant", "completed", "failed", "mrr", "mnr", "mrr_se", "mnr_se"];

fn summary_csv(summary: &Summary) -> String {
    let mut out = SUMMARY_HEADER.join(",");
    out.push('\n');
    let mut line = |variant: &str, m: &Option<MetricSummary>| {
        let (mrr, mnr, mrr_se, mnr_se) = match m {
            Some(m) => (m.mrr.to_string(), m.mnr.to_string(), m.mrr_se.to_string(), m.mnr_se.to_string()),
            None => Default::default(),
        };
        let _ = writeln!(out, "{variant},{},{},{mrr},{mnr},{mrr_se},{mnr_se}", summary.completed, summary.failed);
    };
    line("base", &summary.base);
    if summary.reranked.is_some() {
        line("rerank", &summary.reranked);
    }
    out
}

fn histogram_csv(rows: &[HistogramRow]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
    out.write_record(["query", "nr_0", "nr_0_0.2", "nr_0.2_0.5", "nr_0.5_1"]).map_err(io)?;
    for row in rows {
        out.write_record(std::iter::once(row.query.clone()).chain(row.counts.iter().map(|c| c.to_string())))
            .map_err(io)?;
    }
    out.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn check_close(a: &Option<MetricSummary>, b: &Option<MetricSummary>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => [
            (a.mrr, b.mrr),
            (a.mnr, b.mnr),
            (a.mrr_se, b.mrr_se),
            (a.mnr_se, b.mnr_se),
        ]
        .iter()
        .all(|(x, y)| (x - y).abs() <= 1e-12),
        _ => false,
    }
}

/// Writes `<stem>_replicates.csv`, `<stem>_summary.csv`,
/// `<stem>_config.txt`, `<stem>_failures.csv` and, in files mode,
/// `<stem>_histogram.csv` into `dir`. Returns the paths written.
///
/// Before writing, the aggregates are recomputed from the serialized
/// replicate rows and compared with the record's summary.
pub fn emit(record: &RunRecord, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let stem = record.config.file_stem();

    let replicates = replicates_csv(&record.rows)?;
    let reread = read_replicates(std::str::from_utf8(&replicates).expect("utf-8 csv"))?;
    let recomputed = Summary::of(&reread, record.failures.len())?;
    if recomputed.completed != record.summary.completed
        || !check_close(&recomputed.base, &record.summary.base)
        || !check_close(&recomputed.reranked, &record.summary.reranked)
    {
        return Err(Error::Numerical("summary does not match the replicate rows".into()));
    }

    let mut failures = String::from("replicate,message\n");
    for (index, message) in &record.failures {
        let _ = writeln!(failures, "{index},\"{}\"", message.replace('"', "'"));
    }

    let mut written = Vec::new();
    let mut put = |suffix: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(format!("{stem}_{suffix}"));
        fs::write(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put("replicates.csv", &replicates)?;
    put("summary.csv", summary_csv(&record.summary).as_bytes())?;
    put("config.txt", record.config.to_text().as_bytes())?;
    put("failures.csv", failures.as_bytes())?;
    if let Some(hist) = &record.histogram {
        put("histogram.csv", &histogram_csv(hist)?)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(model: Model, rho: f64) -> ExperimentConfig {
        ExperimentConfig { model, n: 60, rho, replicates: 6, seeds: 4, ..Default::default() }
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.model = Model::Sbm;
        cfg.block_matrix = Some(DMatrix::from_row_slice(2, 2, &[0.8, 0.05, 0.05, 0.8]));
        cfg.block_sizes = Some(vec![100, 100]);
        cfg.n = 200;
        cfg.d = Dimension::Auto;
        cfg.align_method = AlignMethod::Registration;
        let text = cfg.to_text();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
        for key in CONFIG_KEYS {
            assert!(text.contains(&format!("\n{key}=")) || text.starts_with(&format!("{key}=")), "{key}");
        }
    }

    #[test]
    fn config_parsing_rules() {
        let cfg = ExperimentConfig::parse("# comment\n\nK = 9\nseed=4\nrho=0.3\n").unwrap();
        assert_eq!(cfg.seeds, 9);
        assert_eq!(cfg.master_seed, 4);
        assert_eq!(cfg.rho, 0.3);
        assert!(matches!(ExperimentConfig::parse("colour=red"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("n"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("n=-3"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("d=0"), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse("block_matrix=0.5,0.1;0.1").is_err());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { seeds: 2, ..Default::default() },
            ExperimentConfig { replicates: 0, ..Default::default() },
            ExperimentConfig { rho: -0.2, ..Default::default() },
            ExperimentConfig { lambda: 0.0, ..Default::default() },
            ExperimentConfig { model: Model::Files, ..Default::default() },
            ExperimentConfig { model: Model::Sbm, block_sizes: Some(vec![10, 10, 10]), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        let cpd = ExperimentConfig { seeds: 0, align_method: AlignMethod::Registration, ..Default::default() };
        assert!(cpd.validate().is_ok());
    }

    #[test]
    fn balanced_blocks() {
        let cfg = ExperimentConfig { model: Model::Sbm, n: 301, ..Default::default() };
        assert_eq!(cfg.sbm_spec().unwrap().block_sizes(), &[101, 100, 100]);
    }

    #[test]
    fn buckets() {
        assert_eq!(nr_bucket(0.0), 0);
        assert_eq!(nr_bucket(0.2), 1);
        assert_eq!(nr_bucket(0.2000001), 2);
        assert_eq!(nr_bucket(0.5), 2);
        assert_eq!(nr_bucket(1.0), 3);
    }

    #[test]
    fn simulation_is_reproducible() {
        let cfg = small(Model::RdpgSphere, 0.5);
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.rows.len() + a.failures.len(), 6);
        let other = run_simulation(&ExperimentConfig { master_seed: 1, ..cfg }).unwrap();
        assert_ne!(a.rows, other.rows);
    }

    #[test]
    fn identical_graphs_nominate_the_truth() {
        let cfg = ExperimentConfig { rho: 1.0, lambda: 0.1, ..small(Model::Sbm, 1.0) };
        let record = run_simulation(&cfg).unwrap();
        assert!(record.failures.is_empty(), "{:?}", record.failures);
        assert!(record.summary.base.unwrap().mnr < 0.05);
    }

    #[test]
    fn rerank_and_unpinned_variants_run() {
        let cfg = ExperimentConfig { rerank: true, use_seeds_in_qp: false, top_l: 5, ..small(Model::RdpgSphere, 0.8) };
        let record = run_simulation(&cfg).unwrap();
        assert!(record.failures.is_empty());
        for row in &record.rows {
            let re = row.reranked.unwrap();
            assert_eq!(re.list_len, row.base.list_len);
            assert_eq!(row.base.list_len, 60 - 4);
            // Only the head moves.
            if row.base.rank > 5 {
                assert_eq!(re.rank, row.base.rank);
            }
        }
        assert!(record.summary.reranked.is_some());
    }

    #[test]
    fn registration_variant_runs() {
        let cfg = ExperimentConfig { align_method: AlignMethod::Registration, seeds: 0, ..small(Model::Sbm, 0.9) };
        let record = run_simulation(&cfg).unwrap();
        assert_eq!(record.rows.len(), 6);
        assert!(record.rows.iter().all(|r| r.base.list_len == 60));
    }

    #[test]
    fn emit_is_idempotent_and_consistent() {
        let cfg = ExperimentConfig { rerank: true, ..small(Model::RdpgSphere, 0.7) };
        let record = run_simulation(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = emit(&record, dir.path()).unwrap();
        let bytes: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
        let second = emit(&record, dir.path()).unwrap();
        assert_eq!(first, second);
        for (p, b) in second.iter().zip(&bytes) {
            assert_eq!(&fs::read(p).unwrap(), b);
        }
        let name = first[0].file_name().unwrap().to_str().unwrap().to_string();
        assert_eq!(name, "rdpg_sphere_rho0.7_K4_lambda1_procrustes_replicates.csv");

        let rows = read_replicates(&fs::read_to_string(&first[0]).unwrap()).unwrap();
        assert_eq!(rows, record.rows);
        let summary = fs::read_to_string(&first[1]).unwrap();
        assert!(summary.starts_with("variant,completed,failed,mrr,mnr,mrr_se,mnr_se\nbase,"));
        assert!(summary.contains("\nrerank,"));
        assert_eq!(ExperimentConfig::parse(&fs::read_to_string(&first[2]).unwrap()).unwrap(), cfg);

        let mut tampered = record.clone();
        tampered.summary.base.as_mut().unwrap().mrr += 1e-6;
        assert!(emit(&tampered, dir.path()).is_err());
    }

    #[test]
    fn files_mode_self_nomination() {
        let mut rng = replicate_rng(3, 0);
        let lp = sphere_latents(40, &mut rng).unwrap();
        let pair = sample_correlated_pair(&lp, 1.0, &mut rng).unwrap();
        let cfg = ExperimentConfig { model: Model::Files, seeds: 3, replicates: 2, lambda: 0.1, ..Default::default() };
        let record = run_files_with(&cfg, &pair.g1, &pair.g2, &Correspondence::identity(40)).unwrap();
        assert_eq!(record.rows.len() + record.failures.len(), 80);
        let hist = record.histogram.as_ref().unwrap();
        assert_eq!(hist.len(), 40);
        let zero: usize = hist.iter().map(|h| h.counts[0]).sum();
        assert!(zero as f64 >= 0.9 * record.rows.len() as f64, "{zero}");
    }
}
