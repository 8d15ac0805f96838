//! `vnom`: command-line driver for cross-graph vertex nomination.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use vnom::align::{procrustes, register, AlignMethod, RegistrationConfig, Rotation};
use vnom::embed::Spectrum;
use vnom::experiment::{
    embed_pair, emit, nominate_queries, read_replicates, run, Dimension, ExperimentConfig, PipelineOptions,
    RunRecord, StageTimings, Summary,
};
use vnom::graph::{load_correspondence, load_edge_list, Directedness};
use vnom::nominate::{aggregate, standard_error};
use vnom::table::{
    ranks_from_rows, read_embedding, read_matrix, read_nominations, write_embedding, write_matrix,
    write_nominations, write_plan,
};
use vnom::transport::{cost_matrix, solve_plan, PlanOptions};
use vnom::Error;

#[derive(Parser)]
#[command(name = "vnom", version, about = "Cross-graph vertex nomination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign (or the files-mode protocol) and write
    /// per-replicate rows, a summary and the echoed configuration.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for the output files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Nominate candidates in G2 for query vertices of G1 in one shot.
    Nominate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Seed correspondence: one `label1 label2` pair per line.
        #[arg(long = "seed-pairs")]
        seed_pairs: PathBuf,
        /// Query labels, one per line; defaults to every non-seed vertex of G1.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Long-format CSV of the lists; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjacency spectral embedding of one edge list.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        /// Dimension, or `auto` for the scree elbow.
        #[arg(long, default_value = "3")]
        d: String,
        #[arg(long, default_value_t = 10)]
        max_d: usize,
        #[arg(long)]
        directed: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align one embedding onto another.
    Align {
        #[arg(long)]
        x1: PathBuf,
        #[arg(long)]
        x2: PathBuf,
        /// Seed rows: one `row1 row2` index pair per line (procrustes).
        #[arg(long = "seed-rows")]
        seed_rows: Option<PathBuf>,
        #[arg(long, default_value = "procrustes")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rotation matrix as CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the regularized transport plan between two embeddings.
    Plan {
        #[arg(long)]
        x1: PathBuf,
        #[arg(long)]
        x2: PathBuf,
        /// Rotation applied to the first embedding beforehand.
        #[arg(long)]
        rotation: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Pinned cells: one `row col` index pair per line.
        #[arg(long)]
        pins: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        /// Iteration cap; defaults to the solver's size-based cap.
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from emitted CSV files.
    Eval {
        /// Replicate CSV written by `simulate`.
        #[arg(long, conflicts_with_all = ["nominations", "truth"])]
        replicates: Option<PathBuf>,
        /// Long-format nomination CSV written by `nominate`.
        #[arg(long, requires = "truth")]
        nominations: Option<PathBuf>,
        /// True matches: one `query_label match_label` pair per line.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

/// Overrides for every configuration key; flags win over the file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    max_d: Option<String>,
    /// Number of seeds K.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    align_method: Option<String>,
    #[arg(long)]
    use_seeds_in_qp: Option<String>,
    #[arg(long)]
    rerank: Option<String>,
    #[arg(long)]
    top_l: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    /// Master seed for every random stream of the run.
    #[arg(long = "seed")]
    master_seed: Option<String>,
    #[arg(long)]
    block_matrix: Option<String>,
    #[arg(long)]
    block_sizes: Option<String>,
    #[arg(long)]
    g1: Option<String>,
    #[arg(long)]
    g2: Option<String>,
    #[arg(long)]
    correspondence: Option<String>,
    #[arg(long)]
    directed: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> vnom::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let overrides = [
            ("model", &self.model),
            ("n", &self.n),
            ("rho", &self.rho),
            ("gamma", &self.gamma),
            ("d", &self.d),
            ("max_d", &self.max_d),
            ("seeds", &self.seeds),
            ("lambda", &self.lambda),
            ("align_method", &self.align_method),
            ("use_seeds_in_qp", &self.use_seeds_in_qp),
            ("rerank", &self.rerank),
            ("top_l", &self.top_l),
            ("replicates", &self.replicates),
            ("master_seed", &self.master_seed),
            ("block_matrix", &self.block_matrix),
            ("block_sizes", &self.block_sizes),
            ("g1", &self.g1),
            ("g2", &self.g2),
            ("correspondence", &self.correspondence),
            ("directed", &self.directed),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                cfg.set(key, value)?;
            }
        }
        Ok(cfg)
    }
}

fn output(path: &Option<PathBuf>) -> vnom::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open(path: &Path) -> vnom::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Whitespace-separated `a b` index pairs, `#` comments allowed.
fn read_index_pairs(path: &Path) -> vnom::Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| Error::Parse { line: k + 1, message: format!("`{t}` is not an index") })
        };
        if tokens.len() != 2 {
            return Err(Error::Parse { line: k + 1, message: "expected two indices".into() });
        }
        pairs.push((parse(tokens[0])?, parse(tokens[1])?));
    }
    Ok(pairs)
}

fn read_label_pairs(path: &Path) -> vnom::Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [first, ..] if first.starts_with('#') => continue,
            [a, b] => pairs.push((a.to_string(), b.to_string())),
            _ => return Err(Error::Parse { line: k + 1, message: "expected two labels".into() }),
        }
    }
    Ok(pairs)
}

fn print_summary(summary: &Summary) {
    println!("completed={} failed={}", summary.completed, summary.failed);
    for (name, m) in [("base", &summary.base), ("rerank", &summary.reranked)] {
        if let Some(m) = m {
            println!("{name}: MRR={:.4} (se {:.4})  MNR={:.4} (se {:.4})", m.mrr, m.mrr_se, m.mnr, m.mnr_se);
        }
    }
}

fn simulate(config: &ConfigArgs, out: &Path) -> vnom::Result<()> {
    let cfg = config.resolve()?;
    let record: RunRecord = run(&cfg)?;
    let files = emit(&record, out)?;
    print_summary(&record.summary);
    for f in files {
        println!("wrote {}", f.display());
    }
    let t = record.timings;
    eprintln!(
        "stage time (s): sample {:.2} embed {:.2} align {:.2} plan {:.2} rank {:.2}",
        t.sample.as_secs_f64(),
        t.embed.as_secs_f64(),
        t.align.as_secs_f64(),
        t.plan.as_secs_f64(),
        t.rank.as_secs_f64()
    );
    Ok(())
}

fn nominate(config: &ConfigArgs, seed_pairs: &Path, queries: &Option<PathBuf>, out: &Option<PathBuf>) -> vnom::Result<()> {
    let cfg = config.resolve()?;
    let (Some(p1), Some(p2)) = (&cfg.g1, &cfg.g2) else {
        return Err(Error::Config("nominate needs --g1 and --g2".into()));
    };
    let dir = if cfg.directed { Directedness::Directed } else { Directedness::Undirected };
    let g1 = load_edge_list(p1, dir)?;
    let g2 = load_edge_list(p2, dir)?;
    let seeds = load_correspondence(seed_pairs, &g1, &g2)?;
    if cfg.align_method == AlignMethod::Procrustes && seeds.is_empty() {
        return Err(Error::Config("procrustes alignment needs seed pairs".into()));
    }
    let seed_left: Vec<usize> = seeds.left().collect();
    let query_ids: Vec<usize> = match queries {
        Some(path) => {
            let mut ids = Vec::new();
            for line in open(path)?.lines() {
                let line = line?;
                let label = line.trim();
                if label.is_empty() || label.starts_with('#') {
                    continue;
                }
                ids.push(g1.index_of(label).ok_or_else(|| Error::UnknownLabel {
                    side: vnom::error::Side::Left,
                    label: label.to_string(),
                })?);
            }
            ids
        }
        None => (0..g1.vertex_count()).filter(|v| !seed_left.contains(v)).collect(),
    };
    let max_d = if cfg.align_method == AlignMethod::Procrustes { cfg.max_d.min(seeds.len()) } else { cfg.max_d };
    let (e1, e2) = embed_pair(&g1, &g2, cfg.d, max_d)?;
    if cfg.align_method == AlignMethod::Procrustes && seeds.len() < e1.dimension() {
        return Err(Error::Config(format!("procrustes needs K >= d, got K={} d={}", seeds.len(), e1.dimension())));
    }
    let options = PipelineOptions::from_config(&cfg);
    let mut timings = StageTimings::default();
    let outcomes = nominate_queries(&g1, &g2, &e1, &e2, &seeds, &query_ids, &options, cfg.master_seed, &mut timings)?;
    let lists: Vec<_> = outcomes.into_iter().map(|o| o.reranked.unwrap_or(o.base)).collect();
    let mut w = output(out)?;
    write_nominations(&lists, &g1, &g2, &mut w)?;
    w.flush()?;
    Ok(())
}

fn embed(graph: &Path, d: &str, max_d: usize, directed: bool, out: &Option<PathBuf>) -> vnom::Result<()> {
    let dir = if directed { Directedness::Directed } else { Directedness::Undirected };
    let g = load_edge_list(graph, dir)?;
    let spectrum = Spectrum::of_graph(&g)?;
    let d = match d.parse::<Dimension>()? {
        Dimension::Fixed(d) => d,
        Dimension::Auto => vnom::embed::select_dimension(spectrum.values(), max_d)?,
    };
    let mut w = output(out)?;
    write_embedding(&spectrum.embed(d)?, &mut w)?;
    w.flush()?;
    Ok(())
}

fn rows_of(x: &DMatrix<f64>, rows: &[usize]) -> vnom::Result<DMatrix<f64>> {
    if let Some(&bad) = rows.iter().find(|&&r| r >= x.nrows()) {
        return Err(Error::IndexOutOfRange { index: bad, len: x.nrows() });
    }
    Ok(DMatrix::from_fn(rows.len(), x.ncols(), |i, k| x[(rows[i], k)]))
}

fn align(x1: &Path, x2: &Path, seed_rows: &Option<PathBuf>, method: &str, seed: u64, out: &Option<PathBuf>) -> vnom::Result<()> {
    let e1 = read_embedding(open(x1)?)?;
    let e2 = read_embedding(open(x2)?)?;
    let method: AlignMethod = method.parse().map_err(|_| Error::Config(format!("unknown method `{method}`")))?;
    let rotation = match method {
        AlignMethod::Procrustes => {
            let path = seed_rows.as_ref().ok_or_else(|| Error::Config("procrustes needs --seed-rows".into()))?;
            let pairs = read_index_pairs(path)?;
            let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            procrustes(&rows_of(e1.x_hat(), &left)?, &rows_of(e2.x_hat(), &right)?)?
        }
        AlignMethod::Registration => {
            register(e1.x_hat(), e2.x_hat(), &RegistrationConfig { seed, ..Default::default() })?
        }
    };
    let mut w = output(out)?;
    write_matrix(rotation.matrix(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn plan(x1: &Path, x2: &Path, rotation: &Option<PathBuf>, options: PlanOptions, pins: &Option<PathBuf>, out: &Option<PathBuf>) -> vnom::Result<()> {
    let e1 = read_embedding(open(x1)?)?;
    let e2 = read_embedding(open(x2)?)?;
    let aligned = match rotation {
        Some(path) => Rotation::from_matrix(read_matrix(open(path)?)?, AlignMethod::Procrustes)?.apply(e1.x_hat())?,
        None => e1.x_hat().clone(),
    };
    let cost = cost_matrix(&aligned, e2.x_hat())?;
    let pins = match pins {
        Some(path) => read_index_pairs(path)?,
        None => Vec::new(),
    };
    let plan = solve_plan(&cost, &pins, &options)?;
    let mut w = output(out)?;
    write_plan(&plan, &mut w)?;
    w.flush()?;
    Ok(())
}

fn eval(replicates: &Option<PathBuf>, nominations: &Option<PathBuf>, truth: &Option<PathBuf>) -> vnom::Result<()> {
    if let Some(path) = replicates {
        let rows = read_replicates(&std::fs::read_to_string(path)?)?;
        print_summary(&Summary::of(&rows, 0)?);
        return Ok(());
    }
    let (Some(nominations), Some(truth)) = (nominations, truth) else {
        return Err(Error::Config("eval needs --replicates, or --nominations with --truth".into()));
    };
    let rows = read_nominations(open(nominations)?)?;
    let truth = read_label_pairs(truth)?;
    let ranks = ranks_from_rows(&rows, &truth)?;
    if ranks.is_empty() {
        return Err(Error::Config("no query in the nominations has a listed true match".into()));
    }
    println!("query,rank,rr,nr");
    let mut rr = Vec::new();
    let mut nr = Vec::new();
    for (query, rank, len) in &ranks {
        let r = 1.0 / *rank as f64;
        let n = if *len == 1 { 0.0 } else { (rank - 1) as f64 / (len - 1) as f64 };
        println!("{query},{rank},{r},{n}");
        rr.push(r);
        nr.push(n);
    }
    println!(
        "MRR={:.4} (se {:.4})  MNR={:.4} (se {:.4})",
        aggregate(&rr)?,
        standard_error(&rr)?,
        aggregate(&nr)?,
        standard_error(&nr)?
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out } => simulate(config, out),
        Command::Nominate { config, seed_pairs, queries, out } => nominate(config, seed_pairs, queries, out),
        Command::Embed { graph, d, max_d, directed, out } => embed(graph, d, *max_d, *directed, out),
        Command::Align { x1, x2, seed_rows, method, seed, out } => align(x1, x2, seed_rows, method, *seed, out),
        Command::Plan { x1, x2, rotation, lambda, pins, tol, max_iters, out } => {
            let options = PlanOptions { lambda: *lambda, tol: *tol, max_iters: *max_iters };
            plan(x1, x2, rotation, options, pins, out)
        }
        Command::Eval { replicates, nominations, truth } => eval(replicates, nominations, truth),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
