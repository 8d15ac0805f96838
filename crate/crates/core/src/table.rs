//! CSV forms of the pipeline's intermediate products.
//!
//! Each stage can be written out and read back, so a run can be stopped
//! and inspected between stages. Numbers use Rust's shortest round-trip
//! formatting; reading a file back yields the same bits.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::embed::Embedding;
use crate::error::{Error, Result, Side};
use crate::graph::Graph;
use crate::nominate::NominationList;
use crate::transport::TransportPlan;

fn csv_error(err: csv::Error, line_offset: usize) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0) + line_offset;
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::parse(line, err.to_string())
    }
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    let value: f64 = token
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("`{}` is not a number", token.trim())))?;
    if !value.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{}`", token.trim())));
    }
    Ok(value)
}

/// Splits `key=value` tokens separated by whitespace.
fn parse_fields(text: &str, line: usize) -> Result<Vec<(String, String)>> {
    text.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::parse(line, format!("expected key=value, found `{tok}`")))
        })
        .collect()
}

fn field<'a>(fields: &'a [(String, String)], key: &str, line: usize) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::parse(line, format!("missing `{key}`")))
}

fn parse_usize(token: &str, line: usize) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::parse(line, format!("`{token}` is not a nonnegative integer")))
}

/// Writes a matrix as bare CSV rows.
pub fn write_matrix<W: Write>(matrix: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for i in 0..matrix.nrows() {
        out.write_record(matrix.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(e, 0))?;
    }
    out.flush()?;
    Ok(())
}

/// Parses numeric CSV rows, skipping `#` comments; `first_line` is the
/// file line the text starts on, for error messages.
fn parse_rows(text: &str, first_line: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, first_line - 1))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0) + first_line - 1;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::parse(line, format!("expected {c} fields, found {}", record.len())))
            }
            _ => {}
        }
        for token in record.iter() {
            data.push(parse_f64(token, line)?);
        }
        rows += 1;
    }
    let cols = cols.ok_or(Error::Empty)?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Reads bare CSV rows into a matrix.
pub fn read_matrix<R: BufRead>(mut reader: R) -> Result<DMatrix<f64>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_rows(&text, 1)
}

fn split_header(text: &str) -> Result<(&str, &str)> {
    let header_end = text.find('\n').unwrap_or(text.len());
    let header = text[..header_end].trim_end_matches('\r');
    if header.trim().is_empty() {
        return Err(Error::Empty);
    }
    Ok((header, &text[(header_end + 1).min(text.len())..]))
}

/// Embedding file: a `p=<p> q=<q>` header, a `# eigenvalues=` comment
/// listing the eigenvalues behind the columns, then one row per vertex.
pub fn write_embedding<W: Write>(embedding: &Embedding, mut writer: W) -> Result<()> {
    let (p, q) = embedding.signature();
    writeln!(writer, "p={p} q={q}")?;
    let eigs: Vec<String> = embedding.eigenvalues().iter().map(|v| v.to_string()).collect();
    writeln!(writer, "# eigenvalues={}", eigs.join(","))?;
    write_matrix(embedding.x_hat(), writer)
}

pub fn read_embedding<R: BufRead>(mut reader: R) -> Result<Embedding> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let (header, body) = split_header(&text)?;
    let fields = parse_fields(header, 1)?;
    let p = parse_usize(field(&fields, "p", 1)?, 1)?;
    let q = parse_usize(field(&fields, "q", 1)?, 1)?;

    let eig_line = body
        .lines()
        .position(|l| l.trim_start().starts_with("# eigenvalues="))
        .ok_or_else(|| Error::parse(2, "missing `# eigenvalues=` line"))?;
    let listed = body.lines().nth(eig_line).unwrap().trim_start().trim_start_matches("# eigenvalues=");
    let eigenvalues = listed
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_f64(t, eig_line + 2))
        .collect::<Result<Vec<_>>>()?;

    let x_hat = parse_rows(body, 2)?;
    let embedding = Embedding::from_parts(x_hat, eigenvalues)?;
    if embedding.signature() != (p, q) {
        return Err(Error::parse(1, format!("header says p={p} q={q} but eigenvalues give {:?}", embedding.signature())));
    }
    Ok(embedding)
}

/// Plan file: a `lambda=<λ> n=<n> m=<m>` header, an optional `# pinned=`
/// comment with `row:col` pairs, then the `n` rows of the plan.
pub fn write_plan<W: Write>(plan: &TransportPlan, mut writer: W) -> Result<()> {
    let (n, m) = plan.shape();
    writeln!(writer, "lambda={} n={n} m={m}", plan.lambda())?;
    if !plan.pinned().is_empty() {
        let pins: Vec<String> = plan.pinned().iter().map(|(i, j)| format!("{i}:{j}")).collect();
        writeln!(writer, "# pinned={}", pins.join(" "))?;
    }
    write_matrix(plan.matrix(), writer)
}

pub fn read_plan<R: BufRead>(mut reader: R) -> Result<TransportPlan> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let (header, body) = split_header(&text)?;
    let fields = parse_fields(header, 1)?;
    let lambda = parse_f64(field(&fields, "lambda", 1)?, 1)?;
    let n = parse_usize(field(&fields, "n", 1)?, 1)?;
    let m = parse_usize(field(&fields, "m", 1)?, 1)?;

    let mut pinned = Vec::new();
    for (k, line) in body.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix("# pinned=") {
            for tok in rest.split_whitespace() {
                let (i, j) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::parse(k + 2, format!("bad pinned cell `{tok}`")))?;
                pinned.push((parse_usize(i, k + 2)?, parse_usize(j, k + 2)?));
            }
        }
    }
    let d = parse_rows(body, 2)?;
    if d.shape() != (n, m) {
        return Err(Error::parse(1, format!("header says {n}x{m} but found {}x{}", d.nrows(), d.ncols())));
    }
    Ok(TransportPlan::from_parts(d, lambda, pinned))
}

/// One row of a long-format nomination file.
#[derive(Debug, Clone, PartialEq)]
pub struct NominationRow {
    pub query: String,
    pub rank: usize,
    pub candidate: String,
    pub score: f64,
    pub score_kind: String,
}

pub const NOMINATION_HEADER: [&str; 5] = ["query", "rank", "candidate_label", "score", "score_kind"];

/// Writes lists in long format, one row per (query, candidate), using the
/// graphs' labels.
pub fn write_nominations<W: Write>(lists: &[NominationList], g1: &Graph, g2: &Graph, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(NOMINATION_HEADER).map_err(|e| csv_error(e, 0))?;
    for list in lists {
        let query = g1.label(list.query());
        for (k, entry) in list.entries().iter().enumerate() {
            out.write_record([
                query.clone(),
                (k + 1).to_string(),
                g2.label(entry.candidate),
                entry.score.to_string(),
                entry.kind.name().to_string(),
            ])
            .map_err(|e| csv_error(e, 0))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_nominations<R: BufRead>(reader: R) -> Result<Vec<NominationRow>> {
    let mut csv_reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv_reader.headers().map_err(|e| csv_error(e, 0))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(1, format!("missing column `{name}`")))
    };
    let (qc, rc, cc, sc) = (column("query")?, column("rank")?, column("candidate_label")?, column("score")?);
    let kc = headers.iter().position(|h| h == "score_kind");
    let mut rows = Vec::new();
    for record in csv_reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push(NominationRow {
            query: record[qc].to_string(),
            rank: parse_usize(&record[rc], line)?,
            candidate: record[cc].to_string(),
            score: parse_f64(&record[sc], line)?,
            score_kind: kc.map(|k| record[k].to_string()).unwrap_or_default(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    Ok(rows)
}

/// Per-query rank of the true match, recovered from long-format rows.
///
/// Returns `(query, rank, list length)` in order of first appearance;
/// queries missing from `truth` are skipped.
pub fn ranks_from_rows(rows: &[NominationRow], truth: &[(String, String)]) -> Result<Vec<(String, usize, usize)>> {
    let mut queries: Vec<&str> = Vec::new();
    for row in rows {
        if !queries.contains(&row.query.as_str()) {
            queries.push(&row.query);
        }
    }
    let mut out = Vec::new();
    for query in queries {
        let Some((_, target)) = truth.iter().find(|(q, _)| q == query) else {
            continue;
        };
        let mut list: Vec<&NominationRow> = rows.iter().filter(|r| r.query == query).collect();
        list.sort_by_key(|r| r.rank);
        let rank = list
            .iter()
            .position(|r| &r.candidate == target)
            .ok_or_else(|| Error::UnknownLabel { side: Side::Right, label: target.clone() })?
            + 1;
        out.push((query.to_string(), rank, list.len()));
    }
    Ok(out)
}
