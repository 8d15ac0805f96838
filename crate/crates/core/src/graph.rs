//! Graphs, vertex correspondences and their text formats.
//!
//! Graphs are undirected and simple. At the IO boundary vertices are
//! identified by string labels; everything downstream works with indices.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result, Side};

/// Undirected simple graph stored as a dense symmetric 0/1 adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adjacency: Vec<u8>,
    labels: Option<Vec<String>>,
}

impl Graph {
    /// Graph on `n` vertices with the given undirected edges.
    ///
    /// Self-loops and repeated edges are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![0u8; n * n];
        for &(u, v) in edges {
            check_index(u, n)?;
            check_index(v, n)?;
            if u != v {
                adjacency[u * n + v] = 1;
                adjacency[v * n + u] = 1;
            }
        }
        Ok(Graph { n, adjacency, labels: None })
    }

    /// Builds a graph from a dense matrix, validating symmetry, a zero
    /// diagonal and 0/1 entries.
    pub fn from_adjacency(matrix: &DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::InvalidGraph(format!(
                "adjacency is {}x{}, not square",
                n,
                matrix.ncols()
            )));
        }
        let mut adjacency = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                let a = matrix[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(Error::InvalidGraph(format!("entry ({i},{j}) = {a} is not 0/1")));
                }
                if a != matrix[(j, i)] {
                    return Err(Error::InvalidGraph(format!("entry ({i},{j}) breaks symmetry")));
                }
                if i == j && a != 0.0 {
                    return Err(Error::InvalidGraph(format!("self-loop at vertex {i}")));
                }
                adjacency[i * n + j] = a as u8;
            }
        }
        Ok(Graph { n, adjacency, labels: None })
    }

    pub(crate) fn from_raw(n: usize, adjacency: Vec<u8>) -> Self {
        debug_assert_eq!(adjacency.len(), n * n);
        Graph { n, adjacency, labels: None }
    }

    /// Attaches external vertex labels. Labels must be unique.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {} vertices",
                labels.len(),
                self.n
            )));
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate vertex label `{label}`")));
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// External name of vertex `i`: its label, or the index itself when the
    /// graph is unlabeled.
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(labels) => labels[i].clone(),
            None => i.to_string(),
        }
    }

    /// Index of the vertex carrying `label`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        match &self.labels {
            Some(labels) => labels.iter().position(|l| l == label),
            None => label.parse::<usize>().ok().filter(|&i| i < self.n),
        }
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j] != 0
    }

    /// Adjacency entry as 0.0 / 1.0.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        f64::from(self.adjacency[i * self.n + j])
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|&a| a as usize).sum::<usize>() / 2
    }

    /// Edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.has_edge(i, j) {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i * self.n..(i + 1) * self.n]
            .iter()
            .map(|&a| a as usize)
            .sum()
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j))
    }

    /// Subgraph induced by `keep`, in the order given. Labels are carried
    /// over.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Graph> {
        let mut seen = HashSet::with_capacity(keep.len());
        for &k in keep {
            check_index(k, self.n)?;
            if !seen.insert(k) {
                return Err(Error::InvalidArgument(format!("vertex {k} listed twice")));
            }
        }
        let k = keep.len();
        let mut adjacency = vec![0u8; k * k];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                adjacency[a * k + b] = self.adjacency[i * self.n + j];
            }
        }
        let labels = self
            .labels
            .as_ref()
            .map(|labels| keep.iter().map(|&i| labels[i].clone()).collect());
        Ok(Graph { n: k, adjacency, labels })
    }
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index, len })
    }
}

/// How the edges of an edge-list file are to be read.
///
/// Directed input is symmetrized by union: `u v` or `v u` gives the
/// undirected edge `{u, v}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Directedness {
    #[default]
    Undirected,
    Directed,
}

/// Meaningful lines of a text file: trimmed, non-empty, not `#` comments.
fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(line) => {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, trimmed.to_owned())))
            }
        }
    })
}

/// Reads a whitespace-separated edge list (`u v` or `u v weight`).
///
/// Labels are indexed in order of first appearance. Repeated edges collapse,
/// self-loops are dropped and weights are binarized (nonzero means present).
pub fn read_edge_list<R: BufRead>(reader: R, directedness: Directedness) -> Result<Graph> {
    // Both readings produce the same undirected graph.
    let _ = directedness;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut intern = |token: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&i) = index.get(token) {
            return i;
        }
        let i = labels.len();
        index.insert(token.to_owned(), i);
        labels.push(token.to_owned());
        i
    };
    for item in content_lines(reader) {
        let (line_no, line) = item?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&tokens.len()) {
            return Err(Error::parse(
                line_no,
                format!("expected 2 or 3 tokens, found {}", tokens.len()),
            ));
        }
        let present = match tokens.get(2) {
            None => true,
            Some(w) => {
                let weight: f64 = w
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("invalid weight `{w}`")))?;
                if !weight.is_finite() {
                    return Err(Error::parse(line_no, format!("invalid weight `{w}`")));
                }
                weight != 0.0
            }
        };
        let u = intern(tokens[0], &mut labels);
        let v = intern(tokens[1], &mut labels);
        if present {
            edges.push((u, v));
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    Graph::from_edges(labels.len(), &edges)?.with_labels(labels)
}

pub fn load_edge_list(path: impl AsRef<Path>, directedness: Directedness) -> Result<Graph> {
    let file = File::open(path)?;
    read_edge_list(BufReader::new(file), directedness)
}

/// Writes one `u v` line per undirected edge using vertex labels.
///
/// Isolated vertices do not appear in an edge list and are lost on reload.
pub fn write_edge_list<W: Write>(graph: &Graph, mut writer: W) -> Result<()> {
    for (i, j) in graph.edges() {
        writeln!(writer, "{} {}", graph.label(i), graph.label(j))?;
    }
    Ok(())
}

/// Injective pairing between vertices of two graphs.
///
/// Used both for the full latent correspondence (ground truth) and for the
/// seed pairs known in advance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Correspondence {
    pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    /// Validates ranges and injectivity on both sides.
    pub fn new(pairs: Vec<(usize, usize)>, n1: usize, n2: usize) -> Result<Self> {
        let mut left = HashSet::with_capacity(pairs.len());
        let mut right = HashSet::with_capacity(pairs.len());
        for &(a, b) in &pairs {
            check_index(a, n1)?;
            check_index(b, n2)?;
            if !left.insert(a) {
                return Err(Error::Duplicate { side: Side::Left, label: a.to_string() });
            }
            if !right.insert(b) {
                return Err(Error::Duplicate { side: Side::Right, label: b.to_string() });
            }
        }
        Ok(Correspondence { pairs })
    }

    /// `(i, i)` for every `i < n`.
    pub fn identity(n: usize) -> Self {
        Correspondence { pairs: (0..n).map(|i| (i, i)).collect() }
    }

    pub fn empty() -> Self {
        Correspondence::default()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn left(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn right(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.1)
    }

    /// Partner of left vertex `i`, if paired.
    pub fn forward(&self, i: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == i).map(|p| p.1)
    }

    pub fn contains(&self, pair: (usize, usize)) -> bool {
        self.pairs.contains(&pair)
    }

    /// Whether every pair of `self` also appears in `other`.
    pub fn is_subset_of(&self, other: &Correspondence) -> bool {
        let other: HashSet<_> = other.pairs.iter().copied().collect();
        self.pairs.iter().all(|p| other.contains(p))
    }
}

/// Reads `left right` label pairs and resolves them against two graphs.
pub fn read_correspondence<R: BufRead>(reader: R, g1: &Graph, g2: &Graph) -> Result<Correspondence> {
    let mut pairs = Vec::new();
    let mut left_seen = HashSet::new();
    let mut right_seen = HashSet::new();
    for item in content_lines(reader) {
        let (line_no, line) = item?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::parse(line_no, format!("expected 2 tokens, found {}", tokens.len())));
        }
        let a = g1.index_of(tokens[0]).ok_or_else(|| Error::UnknownLabel {
            side: Side::Left,
            label: tokens[0].to_owned(),
        })?;
        let b = g2.index_of(tokens[1]).ok_or_else(|| Error::UnknownLabel {
            side: Side::Right,
            label: tokens[1].to_owned(),
        })?;
        if !left_seen.insert(a) {
            return Err(Error::Duplicate { side: Side::Left, label: tokens[0].to_owned() });
        }
        if !right_seen.insert(b) {
            return Err(Error::Duplicate { side: Side::Right, label: tokens[1].to_owned() });
        }
        pairs.push((a, b));
    }
    Ok(Correspondence { pairs })
}

pub fn load_correspondence(path: impl AsRef<Path>, g1: &Graph, g2: &Graph) -> Result<Correspondence> {
    let file = File::open(path)?;
    read_correspondence(BufReader::new(file), g1, g2)
}

/// A complete nomination task: two graphs, the known seeds, optionally the
/// full truth for scoring, and the query vertices of the first graph.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub g1: Graph,
    pub g2: Graph,
    pub seeds: Correspondence,
    pub truth: Option<Correspondence>,
    pub queries: Vec<usize>,
}

impl ProblemInstance {
    pub fn new(
        g1: Graph,
        g2: Graph,
        seeds: Correspondence,
        truth: Option<Correspondence>,
        queries: Vec<usize>,
    ) -> Result<Self> {
        let (n1, n2) = (g1.vertex_count(), g2.vertex_count());
        // Re-validate: the correspondences may have been built for other graphs.
        Correspondence::new(seeds.pairs.clone(), n1, n2)?;
        if let Some(truth) = &truth {
            Correspondence::new(truth.pairs.clone(), n1, n2)?;
            if !seeds.is_subset_of(truth) {
                return Err(Error::InvalidArgument("seed pairs must be part of the truth".into()));
            }
        }
        let seed_left: HashSet<usize> = seeds.left().collect();
        for &q in &queries {
            check_index(q, n1)?;
            if seed_left.contains(&q) {
                return Err(Error::InvalidArgument(format!("query {q} is a seed vertex")));
            }
        }
        Ok(ProblemInstance { g1, g2, seeds, truth, queries })
    }
}
