//! On-disk dataset directories.
//!
//! ```text
//! <dir>/header.txt     "nodes N", "features d", "classes C" (one key per line, '#' comments)
//! <dir>/features.bin   N·d little-endian f64, row-major          } exactly one of
//! <dir>/features.csv   N lines of d comma-separated reals        } these two
//! <dir>/edges.txt      one "i j" pair per line (whitespace separated)
//! <dir>/labels.txt     N lines, one class id in [0, C) each
//! <dir>/train.txt      optional split files: node ids separated by
//! <dir>/val.txt        whitespace or newlines
//! <dir>/test.txt
//! ```
//!
//! Edges are symmetrized and deduplicated on load; self-loops are dropped with
//! a warning. The full byte layout lives in `docs/dataset-format.md`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{DatasetError, Result};
use crate::graph::{Csr, GraphStore, NodeId, SplitMasks};
use crate::matrix::DenseMatrix;

pub const HEADER_FILE: &str = "header.txt";
pub const FEATURES_BIN: &str = "features.bin";
pub const FEATURES_CSV: &str = "features.csv";
pub const EDGES_FILE: &str = "edges.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const SPLIT_FILES: [&str; 3] = ["train.txt", "val.txt", "test.txt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub nodes: usize,
    pub features: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureEncoding {
    Binary,
    Csv,
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Lines with comments and surrounding whitespace stripped, keeping 1-based
/// line numbers. Blank lines are skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

pub fn read_header(dir: &Path) -> Result<Header, DatasetError> {
    let path = dir.join(HEADER_FILE);
    let text = read_text(&path)?;
    let malformed = |reason: String| DatasetError::MalformedHeader { path: path.clone(), reason };
    let (mut nodes, mut features, mut classes) = (None, None, None);
    for (line, content) in content_lines(&text) {
        let mut parts = content.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let value = parts.next().ok_or_else(|| malformed(format!("line {line}: key '{key}' has no value")))?;
        if parts.next().is_some() {
            return Err(malformed(format!("line {line}: trailing tokens")));
        }
        let slot = match key {
            "nodes" => &mut nodes,
            "features" => &mut features,
            "classes" => &mut classes,
            "name" => continue,
            other => return Err(malformed(format!("line {line}: unknown key '{other}'"))),
        };
        let parsed: usize = value.parse().map_err(|_| malformed(format!("line {line}: '{value}' is not a count")))?;
        if slot.replace(parsed).is_some() {
            return Err(malformed(format!("line {line}: duplicate key '{key}'")));
        }
    }
    let need = |v: Option<usize>, k: &str| v.ok_or_else(|| malformed(format!("missing '{k}'")));
    let header = Header {
        nodes: need(nodes, "nodes")?,
        features: need(features, "features")?,
        classes: need(classes, "classes")?,
    };
    if header.features == 0 || header.classes == 0 {
        return Err(malformed("feature and class counts must be positive".into()));
    }
    Ok(header)
}

fn read_features(dir: &Path, header: &Header) -> Result<DenseMatrix, DatasetError> {
    let bin = dir.join(FEATURES_BIN);
    let csv = dir.join(FEATURES_CSV);
    if bin.exists() {
        let bytes = fs::read(&bin).map_err(|source| DatasetError::Io { path: bin.clone(), source })?;
        let row_bytes = header.features * 8;
        if bytes.len() % row_bytes != 0 {
            return Err(DatasetError::Parse {
                path: bin,
                line: 0,
                reason: format!("{} bytes is not a whole number of {}-byte rows", bytes.len(), row_bytes),
            });
        }
        let rows = bytes.len() / row_bytes;
        if rows != header.nodes {
            return Err(DatasetError::FeatureRowMismatch { expected: header.nodes, found: rows });
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Ok(DenseMatrix::from_vec(rows, header.features, data).expect("sized above"))
    } else if csv.exists() {
        let text = read_text(&csv)?;
        let mut data = Vec::with_capacity(header.nodes * header.features);
        let mut rows = 0;
        for (line, content) in content_lines(&text) {
            let before = data.len();
            for tok in content.split(',') {
                let tok = tok.trim();
                let v: f64 = tok.parse().map_err(|_| DatasetError::Parse {
                    path: csv.clone(),
                    line,
                    reason: format!("'{tok}' is not a number"),
                })?;
                data.push(v);
            }
            if data.len() - before != header.features {
                return Err(DatasetError::FeatureWidthMismatch {
                    row: rows,
                    expected: header.features,
                    found: data.len() - before,
                });
            }
            rows += 1;
        }
        if rows != header.nodes {
            return Err(DatasetError::FeatureRowMismatch { expected: header.nodes, found: rows });
        }
        Ok(DenseMatrix::from_vec(rows, header.features, data).expect("sized above"))
    } else {
        Err(DatasetError::MissingFeatures(dir.to_path_buf()))
    }
}

fn parse_id(path: &Path, line: usize, tok: &str) -> Result<usize, DatasetError> {
    tok.parse().map_err(|_| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("'{tok}' is not a node id"),
    })
}

fn read_edges(dir: &Path, nodes: usize) -> Result<Vec<(NodeId, NodeId)>, DatasetError> {
    let path = dir.join(EDGES_FILE);
    let text = read_text(&path)?;
    let mut edges = Vec::new();
    for (line, content) in content_lines(&text) {
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(DatasetError::Parse {
                path,
                line,
                reason: format!("expected 2 node ids, found {}", toks.len()),
            });
        }
        let a = parse_id(&path, line, toks[0])?;
        let b = parse_id(&path, line, toks[1])?;
        for v in [a, b] {
            if v >= nodes {
                return Err(DatasetError::DanglingEdge { line, node: v, nodes });
            }
        }
        edges.push((a, b));
    }
    Ok(edges)
}

fn read_labels(dir: &Path, header: &Header) -> Result<Vec<usize>, DatasetError> {
    let path = dir.join(LABELS_FILE);
    let text = read_text(&path)?;
    let mut labels = Vec::with_capacity(header.nodes);
    for (line, content) in content_lines(&text) {
        let label: i64 = content.parse().map_err(|_| DatasetError::Parse {
            path: path.clone(),
            line,
            reason: format!("'{content}' is not a class id"),
        })?;
        if label < 0 || label as usize >= header.classes {
            return Err(DatasetError::LabelOutOfRange { node: labels.len(), label, classes: header.classes });
        }
        labels.push(label as usize);
    }
    if labels.len() != header.nodes {
        return Err(DatasetError::LabelCountMismatch { expected: header.nodes, found: labels.len() });
    }
    Ok(labels)
}

fn read_split(dir: &Path, nodes: usize) -> Result<SplitMasks, DatasetError> {
    let mut masks = SplitMasks::empty(nodes);
    for (name, mask) in SPLIT_FILES.iter().zip([&mut masks.train, &mut masks.val, &mut masks.test]) {
        let path: PathBuf = dir.join(name);
        if !path.exists() {
            continue;
        }
        let text = read_text(&path)?;
        for (line, content) in content_lines(&text) {
            for tok in content.split_whitespace() {
                let v = parse_id(&path, line, tok)?;
                if v >= nodes {
                    return Err(DatasetError::DanglingSplitNode { path, node: v, nodes });
                }
                mask[v] = true;
            }
        }
    }
    if let Some(v) = masks.first_overlap() {
        return Err(DatasetError::OverlappingSplits(v));
    }
    Ok(masks)
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GraphStore> {
    let dir = dir.as_ref();
    let header = read_header(dir)?;
    let features = read_features(dir, &header)?;
    let edges = read_edges(dir, header.nodes)?;
    let labels = read_labels(dir, &header)?;
    let masks = read_split(dir, header.nodes)?;
    let (csr, self_loops) = Csr::from_undirected(header.nodes, &edges)?;
    if self_loops > 0 {
        log::warn!("{}: dropped {self_loops} self-loop(s)", dir.display());
    }
    GraphStore::new(features, csr, labels, header.classes, masks)
}

/// Writes `g` as a dataset directory (creating it if needed). Each undirected
/// edge is written once as `i j` with `i < j`.
pub fn save_dataset(dir: impl AsRef<Path>, g: &GraphStore, encoding: FeatureEncoding) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(HEADER_FILE),
        format!("nodes {}\nfeatures {}\nclasses {}\n", g.n_nodes(), g.n_features(), g.n_classes()),
    )?;
    match encoding {
        FeatureEncoding::Binary => {
            let mut w = BufWriter::new(fs::File::create(dir.join(FEATURES_BIN))?);
            for x in g.features().data() {
                w.write_all(&x.to_le_bytes())?;
            }
            w.flush()?;
        }
        FeatureEncoding::Csv => {
            let mut w = BufWriter::new(fs::File::create(dir.join(FEATURES_CSV))?);
            for i in 0..g.n_nodes() {
                let row: Vec<String> = g.features().row(i).iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{}", row.join(","))?;
            }
            w.flush()?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(dir.join(EDGES_FILE))?);
    for (i, j) in g.adjacency().undirected_edges() {
        writeln!(w, "{i} {j}")?;
    }
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(dir.join(LABELS_FILE))?);
    for y in g.labels() {
        writeln!(w, "{y}")?;
    }
    w.flush()?;
    let masks = g.masks();
    for (name, mask) in SPLIT_FILES.iter().zip([&masks.train, &masks.val, &masks.test]) {
        let ids = SplitMasks::ids(mask);
        if ids.is_empty() {
            continue;
        }
        let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
        for v in ids {
            writeln!(w, "{v}")?;
        }
        w.flush()?;
    }
    Ok(())
}
