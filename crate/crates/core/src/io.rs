//! On-disk graph directory.
//!
//! ```text
//! meta.json       {"format": 1, "feature_dim": D, "num_nodes": N}
//! types.tsv       id  name
//! relations.tsv   id  name
//! nodes.tsv       id  type  features (space separated)
//! edges.tsv       src relation dst
//! labels.tsv      node label (1 or 0), optional
//! ```
//!
//! Files are tab separated with a header row and LF line endings. Floats are
//! written in shortest round-trip form, so a write/read cycle is lossless.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::Labels;
use crate::graph::{GraphBuilder, HeteroGraph, NodeId, TypeId};

#[derive(Serialize, Deserialize)]
struct Meta {
    format: u32,
    feature_dim: usize,
    num_nodes: usize,
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn tsv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn format_features(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_graph(dir: &Path, g: &HeteroGraph, labels: Option<&Labels>) -> Result<()> {
    ensure_dir(dir)?;
    let meta = Meta {
        format: 1,
        feature_dim: g.feature_dim(),
        num_nodes: g.num_nodes(),
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("plain struct") + "\n";
    write_text(&dir.join("meta.json"), &meta_json)?;
    write_text(
        &dir.join("types.tsv"),
        &tsv("id\tname", g.type_names().iter().enumerate().map(|(i, n)| format!("{i}\t{n}"))),
    )?;
    write_text(
        &dir.join("relations.tsv"),
        &tsv(
            "id\tname",
            g.relation_names().iter().enumerate().map(|(i, n)| format!("{i}\t{n}")),
        ),
    )?;
    write_text(
        &dir.join("nodes.tsv"),
        &tsv(
            "id\ttype\tfeatures",
            g.nodes().map(|v| {
                format!("{}\t{}\t{}", v.0, g.type_name(g.node_type(v)), format_features(g.features(v)))
            }),
        ),
    )?;
    write_text(
        &dir.join("edges.tsv"),
        &tsv(
            "src\trelation\tdst",
            g.edges().map(|e| format!("{}\t{}\t{}", e.src.0, g.relation_name(e.rel), e.dst.0)),
        ),
    )?;
    if let Some(labels) = labels {
        write_labels(&dir.join("labels.tsv"), labels)?;
    }
    Ok(())
}

pub fn write_labels(path: &Path, labels: &Labels) -> Result<()> {
    write_text(
        path,
        &tsv(
            "node\tlabel",
            labels.iter().map(|(v, l)| format!("{}\t{}", v.0, *l as u8)),
        ),
    )
}

/// Parses a label token: 1/0, true/false, +/-, yes/no, pos/neg.
pub fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "+" | "yes" | "pos" | "positive" => Some(true),
        "0" | "false" | "-" | "no" | "neg" | "negative" => Some(false),
        _ => None,
    }
}

struct Rows {
    path: PathBuf,
    lines: Vec<(usize, Vec<String>)>,
}

fn read_tsv(path: &Path, header: &[&str]) -> Result<Rows> {
    let text = read_text(path)?;
    let mut it = text.lines().enumerate();
    let head = it
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty file", path.display())))?
        .1;
    let cols: Vec<&str> = head.split('\t').collect();
    if cols != header {
        return Err(Error::data(format!(
            "{}: expected header `{}`, found `{head}`",
            path.display(),
            header.join("\\t")
        )));
    }
    let mut lines = Vec::new();
    for (i, line) in it {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if fields.len() != header.len() {
            return Err(Error::data(format!(
                "{}:{}: expected {} fields, found {}",
                path.display(),
                i + 1,
                header.len(),
                fields.len()
            )));
        }
        lines.push((i + 1, fields));
    }
    Ok(Rows {
        path: path.to_owned(),
        lines,
    })
}

impl Rows {
    fn err(&self, line: usize, msg: impl std::fmt::Display) -> Error {
        Error::data(format!("{}:{line}: {msg}", self.path.display()))
    }

    fn names(&self) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(self.lines.len());
        for (i, (line, f)) in self.lines.iter().enumerate() {
            if f[0].parse::<usize>().ok() != Some(i) {
                return Err(self.err(*line, "ids must be 0, 1, 2, ... in order"));
            }
            out.push(f[1].clone());
        }
        Ok(out)
    }
}

pub fn read_labels(path: &Path, num_nodes: usize) -> Result<Labels> {
    let rows = read_tsv(path, &["node", "label"])?;
    let mut labels = Labels::new();
    for (line, f) in &rows.lines {
        let v: u32 = f[0].parse().map_err(|_| rows.err(*line, "bad node id"))?;
        if v as usize >= num_nodes {
            return Err(rows.err(*line, format!("node {v} out of range")));
        }
        let l = parse_label(&f[1]).ok_or_else(|| rows.err(*line, format!("non-binary label `{}`", f[1])))?;
        if labels.insert(NodeId(v), l).is_some() {
            return Err(rows.err(*line, format!("duplicate label for node {v}")));
        }
    }
    Ok(labels)
}

/// Reads a graph directory; labels are `None` when `labels.tsv` is absent.
pub fn read_graph(dir: &Path) -> Result<(HeteroGraph, Option<Labels>)> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| Error::data(format!("{}: {e}", meta_path.display())))?;
    if meta.format != 1 {
        return Err(Error::data(format!("unsupported graph format {}", meta.format)));
    }
    let types = read_tsv(&dir.join("types.tsv"), &["id", "name"])?.names()?;
    let relations = read_tsv(&dir.join("relations.tsv"), &["id", "name"])?.names()?;
    let mut b = GraphBuilder::new(types, relations, meta.feature_dim)
        .map_err(|e| Error::data(format!("{}: {e}", dir.display())))?;
    let nodes = read_tsv(&dir.join("nodes.tsv"), &["id", "type", "features"])?;
    for (i, (line, f)) in nodes.lines.iter().enumerate() {
        if f[0].parse::<usize>().ok() != Some(i) {
            return Err(nodes.err(*line, "node ids must be 0, 1, 2, ... in order"));
        }
        let ty: TypeId = b
            .type_id(&f[1])
            .ok_or_else(|| nodes.err(*line, format!("unknown type `{}`", f[1])))?;
        let x: Vec<f64> = f[2]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| nodes.err(*line, "unparseable feature value"))?;
        b.add_node(ty, &x).map_err(|e| nodes.err(*line, e))?;
    }
    if b.num_nodes() != meta.num_nodes {
        return Err(Error::data(format!(
            "{}: meta.json declares {} nodes, nodes.tsv has {}",
            dir.display(),
            meta.num_nodes,
            b.num_nodes()
        )));
    }
    let edges = read_tsv(&dir.join("edges.tsv"), &["src", "relation", "dst"])?;
    for (line, f) in &edges.lines {
        let src: u32 = f[0].parse().map_err(|_| edges.err(*line, "bad source id"))?;
        let dst: u32 = f[2].parse().map_err(|_| edges.err(*line, "bad destination id"))?;
        let r = b
            .relation_id(&f[1])
            .ok_or_else(|| edges.err(*line, format!("unknown relation `{}`", f[1])))?;
        b.add_edge(NodeId(src), r, NodeId(dst)).map_err(|e| edges.err(*line, e))?;
    }
    let g = b.build();
    let labels_path = dir.join("labels.tsv");
    let labels = if labels_path.exists() {
        Some(read_labels(&labels_path, g.num_nodes())?)
    } else {
        None
    };
    Ok((g, labels))
}
