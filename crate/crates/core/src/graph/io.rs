use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("not a number: {s:?}")))
}

/// Dataset name from a path like `dir/cora.nodes.tsv` -> `cora`.
fn stem_name(path: &Path) -> String {
    path.file_name()
        .and_then(|s| s.to_str())
        .and_then(|s| s.split('.').next())
        .unwrap_or("graph")
        .to_string()
}

/// Maps raw label strings to class ids. Integer labels are used as-is;
/// anything else is numbered in order of first appearance.
fn encode_labels(raw: &[Option<String>]) -> Vec<Option<usize>> {
    let numeric: Option<Vec<Option<usize>>> = raw
        .iter()
        .map(|l| match l {
            None => Some(None),
            Some(s) => s.parse::<usize>().ok().map(Some),
        })
        .collect();
    if let Some(ids) = numeric {
        return ids;
    }
    let mut map: HashMap<&str, usize> = HashMap::new();
    raw.iter()
        .map(|l| {
            l.as_deref().map(|s| {
                let next = map.len();
                *map.entry(s).or_insert(next)
            })
        })
        .collect()
}

fn is_directed(edges: &[(usize, usize)]) -> bool {
    let set: std::collections::HashSet<(usize, usize)> = edges.iter().copied().collect();
    edges.iter().any(|&(u, v)| u != v && !set.contains(&(v, u)))
}

/// Reads the canonical node table and edge list.
///
/// Nodes: header `id<TAB>f0..f{d-1}<TAB>label`, label `-` when unknown.
/// Edges: `src<TAB>dst` per line, `#` starts a comment line.
pub fn load_node_table(
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<Graph> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();
    let reader = BufReader::new(open(nodes_path)?);
    let mut lines = reader.lines().enumerate();

    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(nodes_path, e))?;
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                break (i + 1, line);
            }
            None => return Err(parse_err(nodes_path, 0, "missing header")),
        }
    };
    let cols: Vec<&str> = header.1.split('\t').collect();
    if cols.len() < 2 || cols[0] != "id" || cols[cols.len() - 1] != "label" {
        return Err(parse_err(
            nodes_path,
            header.0,
            "header must be id<TAB>f0..<TAB>label",
        ));
    }
    let d = cols.len() - 2;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(nodes_path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != d + 2 {
            return Err(parse_err(
                nodes_path,
                lineno,
                format!("expected {} columns, found {}", d + 2, fields.len()),
            ));
        }
        let id = fields[0].to_string();
        if ids.contains_key(&id) {
            return Err(parse_err(
                nodes_path,
                lineno,
                format!("duplicate node id {id:?}"),
            ));
        }
        ids.insert(id, ids.len());
        for f in &fields[1..=d] {
            data.push(parse_f64(nodes_path, lineno, f)?);
        }
        let label = fields[d + 1].trim();
        raw_labels.push(if label == "-" {
            None
        } else {
            Some(label.to_string())
        });
    }
    let n = ids.len();

    let mut edges = Vec::new();
    let reader = BufReader::new(open(edges_path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(edges_path, e))?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t == "src\tdst" {
            continue;
        }
        let mut it = t.split('\t');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(edges_path, lineno, "expected src<TAB>dst"));
        };
        let lookup = |s: &str| {
            ids.get(s)
                .copied()
                .ok_or_else(|| parse_err(edges_path, lineno, format!("dangling endpoint {s:?}")))
        };
        edges.push((lookup(a)?, lookup(b)?));
    }

    let directed = is_directed(&edges);
    let features = Tensor::from_vec(n, d, data)?;
    let labels = encode_labels(&raw_labels);
    Ok(
        Graph::new(stem_name(nodes_path), n, edges, features, Some(labels))?
            .with_directed_source(directed),
    )
}

/// Writes `g` in the canonical node-table format.
pub fn write_node_table(
    g: &Graph,
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<()> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();
    let f = File::create(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(nodes_path, e);
    write!(w, "id").map_err(io)?;
    for j in 0..g.feature_dim() {
        write!(w, "\tf{j}").map_err(io)?;
    }
    writeln!(w, "\tlabel").map_err(io)?;
    for i in 0..g.n() {
        write!(w, "{i}").map_err(io)?;
        for &x in g.features().row(i) {
            write!(w, "\t{x}").map_err(io)?;
        }
        match g.labels()[i] {
            Some(c) => writeln!(w, "\t{c}").map_err(io)?,
            None => writeln!(w, "\t-").map_err(io)?,
        }
    }
    w.flush().map_err(io)?;

    let f = File::create(edges_path).map_err(|e| Error::io(edges_path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(edges_path, e);
    for &(u, v) in g.edges() {
        writeln!(w, "{u}\t{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads the LINQS citation layout (`<name>.content`, `<name>.cites`).
///
/// Content rows are `paper_id f0 .. f{d-1} label` (whitespace separated);
/// cites rows are `cited citing`. Citations naming papers absent from the
/// content file are skipped; their count is returned alongside the graph.
pub fn load_linqs(
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
) -> Result<(Graph, usize)> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    let mut d = None;
    for (i, line) in BufReader::new(open(content_path)?).lines().enumerate() {
        let line = line.map_err(|e| Error::io(content_path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 2 {
            return Err(parse_err(content_path, i + 1, "row too short"));
        }
        let width = fields.len() - 2;
        if *d.get_or_insert(width) != width {
            return Err(parse_err(content_path, i + 1, "ragged feature row"));
        }
        ids.insert(fields[0].to_string(), ids.len());
        for f in &fields[1..=width] {
            data.push(parse_f64(content_path, i + 1, f)?);
        }
        raw_labels.push(Some(fields[width + 1].to_string()));
    }
    let mut edges = Vec::new();
    let mut skipped = 0;
    for line in BufReader::new(open(cites_path)?).lines() {
        let line = line.map_err(|e| Error::io(cites_path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            continue;
        }
        match (ids.get(fields[0]), ids.get(fields[1])) {
            (Some(&a), Some(&b)) => edges.push((b, a)),
            _ => skipped += 1,
        }
    }
    let n = ids.len();
    let features = Tensor::from_vec(n, d.unwrap_or(0), data)?;
    let g = Graph::new(
        stem_name(content_path),
        n,
        edges,
        features,
        Some(encode_labels(&raw_labels)),
    )?;
    Ok((g.with_directed_source(true), skipped))
}

/// Reads the Elliptic three-CSV layout. Class `1` (illicit) maps to 1,
/// class `2` (licit) to 0, and `unknown` to an absent label.
pub fn load_elliptic_csv(
    features_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
    classes_path: impl AsRef<Path>,
) -> Result<Graph> {
    let features_path = features_path.as_ref();
    let edges_path = edges_path.as_ref();
    let classes_path = classes_path.as_ref();

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut d = None;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(open(features_path)?);
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let width = rec.len().saturating_sub(1);
        if *d.get_or_insert(width) != width {
            return Err(parse_err(features_path, line, "ragged feature row"));
        }
        ids.insert(rec[0].trim().to_string(), ids.len());
        for f in rec.iter().skip(1) {
            data.push(parse_f64(features_path, line, f)?);
        }
    }
    let n = ids.len();

    let mut labels = vec![None; n];
    let mut rdr = csv::Reader::from_reader(open(classes_path)?);
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let Some(&i) = ids.get(rec[0].trim()) else {
            return Err(parse_err(
                classes_path,
                line,
                format!("unknown txId {:?}", &rec[0]),
            ));
        };
        labels[i] = match rec[1].trim() {
            "1" => Some(1),
            "2" => Some(0),
            "unknown" => None,
            other => {
                return Err(parse_err(
                    classes_path,
                    line,
                    format!("unknown class {other:?}"),
                ))
            }
        };
    }

    let mut edges = Vec::new();
    let mut rdr = csv::Reader::from_reader(open(edges_path)?);
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let lookup = |s: &str| {
            ids.get(s.trim())
                .copied()
                .ok_or_else(|| parse_err(edges_path, line, format!("txId {s:?} not in features")))
        };
        edges.push((lookup(&rec[0])?, lookup(&rec[1])?));
    }
    let features = Tensor::from_vec(n, d.unwrap_or(0), data)?;
    let g = Graph::new("elliptic", n, edges, features, Some(labels))?;
    Ok(g.with_directed_source(true))
}
