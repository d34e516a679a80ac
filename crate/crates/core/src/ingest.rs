//! Relational database (CSV tables + TOML schema manifest) to heterogeneous
//! graph.
//!
//! Every row becomes a node typed by its table. Every foreign key column
//! `fk` of table `t` yields relation `t.fk` (row to referenced row) and its
//! inverse `t.fk_inv`. Features are laid out as the type one-hot followed by
//! one contiguous block per table, in manifest order.
//!
//! ```toml
//! [[tables]]
//! name = "prescription"
//! primary_key = "prid"
//! foreign_keys = [{ column = "pid", references = "patient" }]
//! attributes = [{ column = "exempt", kind = "categorical" }]
//!
//! [target]
//! table = "patient"
//! label_column = "label"
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::Labels;
use crate::graph::{GraphBuilder, HeteroGraph, NodeId, TypeId};
use crate::io::{parse_label, read_text};

/// Category used for empty cells in a categorical column.
pub const MISSING: &str = "⟂";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    Numerical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub column: String,
    pub kind: AttributeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub references: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    /// CSV file relative to the data directory; defaults to `<name>.csv`.
    #[serde(default)]
    pub file: Option<String>,
    pub primary_key: String,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
}

impl TableSpec {
    pub fn file_name(&self) -> String {
        self.file.clone().unwrap_or_else(|| format!("{}.csv", self.name))
    }
}

/// Labels come either from a column of the target table or from a separate
/// CSV file with two columns (primary key, label).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub table: String,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub label_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifest {
    pub tables: Vec<TableSpec>,
    pub target: TargetSpec,
}

impl SchemaManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: SchemaManifest =
            toml::from_str(text).map_err(|e| Error::usage(format!("schema manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::usage(format!("table `{}` declared twice", t.name)));
            }
        }
        for t in &self.tables {
            let mut cols = BTreeSet::from([t.primary_key.as_str()]);
            for fk in &t.foreign_keys {
                if self.table(&fk.references).is_none() {
                    return Err(Error::usage(format!(
                        "{}.{} references unknown table `{}`",
                        t.name, fk.column, fk.references
                    )));
                }
                if !cols.insert(&fk.column) {
                    return Err(Error::usage(format!("{}.{} used twice", t.name, fk.column)));
                }
            }
            for a in &t.attributes {
                if !cols.insert(&a.column) {
                    return Err(Error::usage(format!("{}.{} used twice", t.name, a.column)));
                }
            }
        }
        let target = self.table(&self.target.table).ok_or_else(|| {
            Error::usage(format!("target table `{}` is not declared", self.target.table))
        })?;
        match (&self.target.label_column, &self.target.label_file) {
            (Some(c), None) => {
                if *c == target.primary_key
                    || target.attributes.iter().any(|a| a.column == *c)
                    || target.foreign_keys.iter().any(|f| f.column == *c)
                {
                    return Err(Error::usage(format!(
                        "label column `{c}` must not double as a key or attribute"
                    )));
                }
            }
            (None, Some(_)) => {}
            _ => {
                return Err(Error::usage(
                    "target needs exactly one of label_column or label_file",
                ))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeEncoding {
    pub table: String,
    pub column: String,
    pub kind: AttributeKind,
    /// First feature index of this attribute.
    pub offset: usize,
    pub width: usize,
    /// Sorted category vocabulary (categorical only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    /// `(min, max)` used for min-max scaling (numerical only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeSlice {
    pub table: String,
    pub offset: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingReport {
    pub feature_dim: usize,
    pub slices: Vec<TypeSlice>,
    pub attributes: Vec<AttributeEncoding>,
}

impl EncodingReport {
    pub fn attribute(&self, table: &str, column: &str) -> Option<&AttributeEncoding> {
        self.attributes
            .iter()
            .find(|a| a.table == table && a.column == column)
    }
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    file: String,
}

impl Table {
    fn read(dir: &Path, file: &str) -> Result<Table> {
        let path = dir.join(file);
        let text = read_text(&path)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::data(format!("{file}: {e}")))?
            .iter()
            .map(|h| h.trim().to_owned())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::data(format!("{file}: {e}")))?;
            rows.push(rec.iter().map(|s| s.trim().to_owned()).collect());
        }
        Ok(Table {
            headers,
            rows,
            file: file.to_owned(),
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("{}: no column `{name}`", self.file)))
    }

    /// 1-based line in the CSV file for data row `i` (header is line 1).
    fn line(i: usize) -> usize {
        i + 2
    }
}

fn encode_column(
    t: &TableSpec,
    a: &AttributeSpec,
    values: &[&str],
    offset: usize,
) -> Result<(AttributeEncoding, Vec<Vec<f64>>)> {
    let mut enc = AttributeEncoding {
        table: t.name.clone(),
        column: a.column.clone(),
        kind: a.kind,
        offset,
        width: 0,
        vocabulary: None,
        range: None,
    };
    let cells = match a.kind {
        AttributeKind::Categorical => {
            let vocab: BTreeSet<&str> = values
                .iter()
                .map(|v| if v.is_empty() { MISSING } else { v })
                .collect();
            let vocab: Vec<String> = vocab.into_iter().map(str::to_owned).collect();
            let index: HashMap<&str, usize> =
                vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
            enc.width = vocab.len();
            let cells = values
                .iter()
                .map(|v| {
                    let mut x = vec![0.0; vocab.len()];
                    x[index[if v.is_empty() { MISSING } else { v }]] = 1.0;
                    x
                })
                .collect();
            enc.vocabulary = Some(vocab);
            cells
        }
        AttributeKind::Numerical => {
            let mut parsed = Vec::with_capacity(values.len());
            for (i, v) in values.iter().enumerate() {
                if v.is_empty() {
                    parsed.push(None);
                    continue;
                }
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => parsed.push(Some(x)),
                    _ => {
                        return Err(Error::data(format!(
                            "{}:{}: column `{}`: cannot parse `{v}` as a number",
                            t.file_name(),
                            Table::line(i),
                            a.column
                        )))
                    }
                }
            }
            let present: Vec<f64> = parsed.iter().flatten().copied().collect();
            let (lo, hi, mean) = if present.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi, present.iter().sum::<f64>() / present.len() as f64)
            };
            enc.width = 1;
            enc.range = Some((lo, hi));
            parsed
                .iter()
                .map(|p| {
                    let x = p.unwrap_or(mean);
                    vec![if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 }]
                })
                .collect()
        }
    };
    Ok((enc, cells))
}

/// Loads the tables listed in `manifest` from `data_dir`.
pub fn load_database(
    manifest: &SchemaManifest,
    data_dir: &Path,
) -> Result<(HeteroGraph, Labels, EncodingReport)> {
    manifest.validate()?;
    let tables: Vec<Table> = manifest
        .tables
        .iter()
        .map(|t| Table::read(data_dir, &t.file_name()))
        .collect::<Result<_>>()?;

    let nt = manifest.tables.len();
    let mut offset = nt;
    let mut slices = Vec::new();
    let mut attributes = Vec::new();
    // Per table: per row, the encoded block.
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    for (spec, table) in manifest.tables.iter().zip(&tables) {
        let start = offset;
        let mut rows = vec![Vec::new(); table.rows.len()];
        for a in &spec.attributes {
            let c = table.column(&a.column)?;
            let values: Vec<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
            let (enc, cells) = encode_column(spec, a, &values, offset)?;
            offset += enc.width;
            for (row, cell) in rows.iter_mut().zip(cells) {
                row.extend(cell);
            }
            attributes.push(enc);
        }
        slices.push(TypeSlice {
            table: spec.name.clone(),
            offset: start,
            width: offset - start,
        });
        blocks.push(rows);
    }
    let dim = offset;

    let mut relations = Vec::new();
    for t in &manifest.tables {
        for fk in &t.foreign_keys {
            relations.push(format!("{}.{}", t.name, fk.column));
            relations.push(format!("{}.{}_inv", t.name, fk.column));
        }
    }
    let mut b = GraphBuilder::new(manifest.tables.iter().map(|t| t.name.clone()), relations, dim)
        .map_err(|e| Error::usage(format!("schema manifest: {e}")))?;

    let mut keys: Vec<HashMap<String, NodeId>> = Vec::new();
    let mut ids: Vec<Vec<NodeId>> = Vec::new();
    for (k, ((spec, table), rows)) in manifest.tables.iter().zip(&tables).zip(&blocks).enumerate() {
        let pk = table.column(&spec.primary_key)?;
        let slice = &slices[k];
        let mut index = HashMap::new();
        let mut row_ids = Vec::new();
        for (i, (row, block)) in table.rows.iter().zip(rows).enumerate() {
            let key = &row[pk];
            if key.is_empty() {
                return Err(Error::data(format!(
                    "{}:{}: empty primary key",
                    table.file,
                    Table::line(i)
                )));
            }
            let mut x = vec![0.0; dim];
            x[k] = 1.0;
            x[slice.offset..slice.offset + slice.width].copy_from_slice(block);
            let v = b.add_node(TypeId(k as u16), &x)?;
            if index.insert(key.clone(), v).is_some() {
                return Err(Error::data(format!(
                    "{}:{}: duplicate primary key `{key}`",
                    table.file,
                    Table::line(i)
                )));
            }
            row_ids.push(v);
        }
        keys.push(index);
        ids.push(row_ids);
    }

    let mut rel = 0u16;
    for (k, (spec, table)) in manifest.tables.iter().zip(&tables).enumerate() {
        for fk in &spec.foreign_keys {
            let c = table.column(&fk.column)?;
            let target = manifest
                .tables
                .iter()
                .position(|t| t.name == fk.references)
                .expect("validated");
            let (fwd, inv) = (crate::RelationId(rel), crate::RelationId(rel + 1));
            rel += 2;
            for (i, row) in table.rows.iter().enumerate() {
                let key = &row[c];
                if key.is_empty() {
                    continue;
                }
                let dst = *keys[target].get(key).ok_or_else(|| {
                    Error::data(format!(
                        "{}:{}: foreign key {}=`{key}` has no matching row in `{}`",
                        table.file,
                        Table::line(i),
                        fk.column,
                        fk.references
                    ))
                })?;
                let src = ids[k][i];
                b.add_edge(src, fwd, dst)?;
                b.add_edge(dst, inv, src)?;
            }
        }
    }

    let labels = read_labels(manifest, data_dir, &tables, &keys)?;
    let report = EncodingReport {
        feature_dim: dim,
        slices,
        attributes,
    };
    Ok((b.build(), labels, report))
}

fn read_labels(
    manifest: &SchemaManifest,
    data_dir: &Path,
    tables: &[Table],
    keys: &[HashMap<String, NodeId>],
) -> Result<Labels> {
    let k = manifest
        .tables
        .iter()
        .position(|t| t.name == manifest.target.table)
        .expect("validated");
    let mut labels = Labels::new();
    let mut put = |file: &str, i: usize, v: NodeId, raw: &str| -> Result<()> {
        if raw.is_empty() {
            return Ok(());
        }
        let l = parse_label(raw).ok_or_else(|| {
            Error::data(format!(
                "{file}:{}: label `{raw}` is not binary",
                Table::line(i)
            ))
        })?;
        if labels.insert(v, l).is_some() {
            return Err(Error::data(format!(
                "{file}:{}: row labelled twice",
                Table::line(i)
            )));
        }
        Ok(())
    };
    if let Some(col) = &manifest.target.label_column {
        let table = &tables[k];
        let c = table.column(col)?;
        let pk = table.column(&manifest.tables[k].primary_key)?;
        for (i, row) in table.rows.iter().enumerate() {
            put(&table.file, i, keys[k][&row[pk]], &row[c])?;
        }
    } else if let Some(file) = &manifest.target.label_file {
        let table = Table::read(data_dir, file)?;
        if table.headers.len() < 2 {
            return Err(Error::data(format!("{file}: expected columns (key, label)")));
        }
        for (i, row) in table.rows.iter().enumerate() {
            let v = *keys[k].get(&row[0]).ok_or_else(|| {
                Error::data(format!(
                    "{file}:{}: key `{}` not found in `{}`",
                    Table::line(i),
                    row[0],
                    manifest.target.table
                ))
            })?;
            put(file, i, v, &row[1])?;
        }
    }
    Ok(labels)
}

/// Merges all nodes of `table` that share a value of the categorical
/// attribute `column`.
///
/// Each group is replaced by one node at the position of its first member;
/// the other nodes keep their relative order. Edges are redirected and
/// duplicates collapse. The supernode keeps the grouping one-hot and takes
/// the member mean of every other attribute in its table block. Returns the
/// new graph and the old-to-new node mapping.
pub fn group_supernodes(
    g: &HeteroGraph,
    report: &EncodingReport,
    table: &str,
    column: &str,
) -> Result<(HeteroGraph, Vec<NodeId>)> {
    let ty = g
        .type_by_name(table)
        .ok_or_else(|| Error::usage(format!("unknown table `{table}`")))?;
    let enc = report
        .attribute(table, column)
        .ok_or_else(|| Error::usage(format!("`{table}` has no attribute `{column}`")))?;
    if enc.kind != AttributeKind::Categorical {
        return Err(Error::usage(format!(
            "{table}.{column} is numerical; only categorical columns can group nodes"
        )));
    }
    let slice = report
        .slices
        .iter()
        .find(|s| s.table == table)
        .ok_or_else(|| Error::usage(format!("no feature slice for `{table}`")))?;
    if enc.offset + enc.width > g.feature_dim() {
        return Err(Error::usage("encoding report does not match the graph"));
    }

    let value = |v: NodeId| -> usize {
        let x = &g.features(v)[enc.offset..enc.offset + enc.width];
        x.iter().position(|&b| b == 1.0).unwrap_or(enc.width)
    };
    let mut leader: BTreeMap<usize, NodeId> = BTreeMap::new();
    let mut members: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut mapping = vec![NodeId(0); g.num_nodes()];
    let mut next = 0u32;
    let mut new_nodes = Vec::new();
    for v in g.nodes() {
        if g.node_type(v) == ty {
            let key = value(v);
            if let Some(&first) = leader.get(&key) {
                mapping[v.index()] = mapping[first.index()];
                members.get_mut(&first).unwrap().push(v);
                continue;
            }
            leader.insert(key, v);
            members.insert(v, vec![v]);
        }
        mapping[v.index()] = NodeId(next);
        next += 1;
        new_nodes.push(v);
    }

    let mut b = GraphBuilder::new(
        g.type_names().to_vec(),
        g.relation_names().to_vec(),
        g.feature_dim(),
    )?;
    let block = slice.offset..slice.offset + slice.width;
    for &v in &new_nodes {
        let mut x = g.features(v).to_vec();
        if let Some(group) = members.get(&v) {
            if group.len() > 1 {
                for j in block.clone() {
                    if (enc.offset..enc.offset + enc.width).contains(&j) {
                        continue;
                    }
                    x[j] = group.iter().map(|&u| g.features(u)[j]).sum::<f64>() / group.len() as f64;
                }
            }
        }
        b.add_node(g.node_type(v), &x)?;
    }
    for e in g.edges() {
        b.add_edge(mapping[e.src.index()], e.rel, mapping[e.dst.index()])?;
    }
    Ok((b.build(), mapping))
}

/// Carries labels through a node mapping. Merged nodes must agree.
pub fn remap_labels(labels: &Labels, mapping: &[NodeId]) -> Result<Labels> {
    let mut out = Labels::new();
    for (&v, &l) in labels {
        let w = mapping[v.index()];
        if let Some(prev) = out.insert(w, l) {
            if prev != l {
                return Err(Error::data(format!(
                    "merged node {} carries both labels",
                    w.0
                )));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use std::fs;

    fn write(dir: &Path, files: &[(&str, &str)]) {
        for (name, body) in files {
            fs::write(dir.join(name), body).unwrap();
        }
    }

    const PRESCRIPTION_SCHEMA: &str = r#"
[[tables]]
name = "patient"
primary_key = "pid"

[[tables]]
name = "prescription"
primary_key = "prid"
foreign_keys = [{ column = "pid_fk", references = "patient" }]
attributes = [{ column = "exempt", kind = "categorical" }, { column = "price", kind = "numerical" }]

[target]
table = "patient"
label_column = "label"
"#;

    fn prescription_db() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &[
                ("patient.csv", "pid,label\np0,1\np1,0\n"),
                (
                    "prescription.csv",
                    "prid,pid_fk,exempt,price\n\
                     2,p0,no,20\n3,p0,yes,70\n4,p0,yes,60\n5,p1,no,20\n6,p1,yes,70\n7,p1,yes,\n",
                ),
            ],
        );
        dir
    }

    #[test]
    fn two_table_schema_transcribes() {
        let dir = prescription_db();
        let m = SchemaManifest::from_toml(PRESCRIPTION_SCHEMA).unwrap();
        let (g, labels, rep) = load_database(&m, dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 8);
        assert_eq!(g.relation_names(), ["prescription.pid_fk", "prescription.pid_fk_inv"]);
        assert_eq!(labels, Labels::from([(NodeId(0), true), (NodeId(1), false)]));
        // [patient, prescription | exempt=no, exempt=yes, price]
        assert_eq!(rep.feature_dim, 5);
        assert_eq!(g.features(NodeId(2)), &[0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.features(NodeId(3)), &[0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(g.features(NodeId(4))[4], 0.8);
        let price = rep.attribute("prescription", "price").unwrap();
        assert_eq!(price.range, Some((20.0, 70.0)));
        // Missing price takes the column mean, 48, scaled to 0.56.
        assert!((g.features(NodeId(7))[4] - 0.56).abs() < 1e-12);
        let r = g.relation_by_name("prescription.pid_fk").unwrap();
        assert_eq!(g.neighbors(NodeId(3), r).unwrap(), &[NodeId(0)]);
    }

    #[test]
    fn inverse_edges_mirror_forward_edges() {
        let dir = prescription_db();
        let m = SchemaManifest::from_toml(PRESCRIPTION_SCHEMA).unwrap();
        let (g, _, _) = load_database(&m, dir.path()).unwrap();
        let (fwd, inv) = (crate::RelationId(0), crate::RelationId(1));
        let edges: BTreeSet<Edge> = g.edges().collect();
        for e in &edges {
            let other = if e.rel == fwd { inv } else { fwd };
            assert!(edges.contains(&Edge::new(e.dst, other, e.src)));
        }
        assert_eq!(g.relation_edge_count(fwd), 6);
    }

    #[test]
    fn missing_category_gets_its_own_slot() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &[("t.csv", "id,c,y\na,x,1\nb,,0\nc,z,1\n")]);
        let m = SchemaManifest::from_toml(
            "[[tables]]\nname=\"t\"\nprimary_key=\"id\"\nattributes=[{column=\"c\",kind=\"categorical\"}]\n[target]\ntable=\"t\"\nlabel_column=\"y\"\n",
        )
        .unwrap();
        let (g, _, rep) = load_database(&m, dir.path()).unwrap();
        let vocab = rep.attributes[0].vocabulary.clone().unwrap();
        assert_eq!(vocab, ["x", "z", MISSING]);
        assert_eq!(g.features(NodeId(1)), &[1.0, 0.0, 0.0, 1.0]);
    }

    fn expect_data_error(files: &[(&str, &str)], needle: &str) {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), files);
        let m = SchemaManifest::from_toml(PRESCRIPTION_SCHEMA).unwrap();
        let err = load_database(&m, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        assert!(err.to_string().contains(needle), "{err}");
    }

    #[test]
    fn bad_rows_are_rejected_with_location() {
        let patients = ("patient.csv", "pid,label\np0,1\np1,0\n");
        expect_data_error(
            &[patients, ("prescription.csv", "prid,pid_fk,exempt,price\n1,p0,no,1\n2,p9,no,1\n")],
            "prescription.csv:3",
        );
        expect_data_error(
            &[patients, ("prescription.csv", "prid,pid_fk,exempt,price\n1,p0,no,cheap\n")],
            "price",
        );
        expect_data_error(
            &[
                ("patient.csv", "pid,label\np0,1\np1,maybe\n"),
                ("prescription.csv", "prid,pid_fk,exempt,price\n"),
            ],
            "not binary",
        );
        expect_data_error(
            &[
                ("patient.csv", "pid,label\np0,1\np0,0\n"),
                ("prescription.csv", "prid,pid_fk,exempt,price\n"),
            ],
            "duplicate primary key",
        );
    }

    #[test]
    fn manifest_rejects_unknown_reference() {
        let bad = PRESCRIPTION_SCHEMA.replace("references = \"patient\"", "references = \"ward\"");
        let err = SchemaManifest::from_toml(&bad).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn label_file_is_supported() {
        let dir = prescription_db();
        write(dir.path(), &[("labels.csv", "pid,label\np1,yes\n")]);
        let schema = PRESCRIPTION_SCHEMA.replace("label_column = \"label\"", "label_file = \"labels.csv\"");
        let m = SchemaManifest::from_toml(&schema).unwrap();
        let (_, labels, _) = load_database(&m, dir.path()).unwrap();
        assert_eq!(labels, Labels::from([(NodeId(1), true)]));
    }

    /// Ten `item` rows in three colour groups, each linked to one of four
    /// shops.
    fn shop_db() -> (HeteroGraph, EncodingReport) {
        let dir = tempfile::tempdir().unwrap();
        let mut items = String::from("id,shop,colour,weight\n");
        for i in 0..10 {
            items.push_str(&format!("i{i},s{},c{},{}\n", i % 4, i % 3, i));
        }
        write(
            dir.path(),
            &[("shop.csv", "id,label\ns0,1\ns1,0\ns2,1\ns3,0\n"), ("item.csv", &items)],
        );
        let m = SchemaManifest::from_toml(
            r#"
[[tables]]
name = "shop"
primary_key = "id"
[[tables]]
name = "item"
primary_key = "id"
foreign_keys = [{ column = "shop", references = "shop" }]
attributes = [{ column = "colour", kind = "categorical" }, { column = "weight", kind = "numerical" }]
[target]
table = "shop"
label_column = "label"
"#,
        )
        .unwrap();
        let (g, _, rep) = load_database(&m, dir.path()).unwrap();
        (g, rep)
    }

    #[test]
    fn grouping_merges_by_value_and_redirects_edges() {
        let (g, rep) = shop_db();
        let (h, map) = group_supernodes(&g, &rep, "item", "colour").unwrap();
        let item = h.type_by_name("item").unwrap();
        assert_eq!(h.nodes_of_type(item).count(), 3);
        // Brute force: the image of the old edge set, deduplicated.
        let image: BTreeSet<Edge> = g
            .edges()
            .map(|e| Edge::new(map[e.src.index()], e.rel, map[e.dst.index()]))
            .collect();
        assert_eq!(h.edges().collect::<BTreeSet<_>>(), image);
        // Group c0 = items 0, 3, 6, 9: weights 0, 3, 6, 9 scaled by 9.
        let w = rep.attribute("item", "weight").unwrap().offset;
        assert!((h.features(map[4])[w] - 4.5 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn grouping_is_idempotent_and_identity_on_distinct_values() {
        let (g, rep) = shop_db();
        let (h, _) = group_supernodes(&g, &rep, "item", "colour").unwrap();
        let (h2, map2) = group_supernodes(&h, &rep, "item", "colour").unwrap();
        assert_eq!(h, h2);
        assert!(map2.iter().enumerate().all(|(i, v)| v.index() == i));
    }

    #[test]
    fn grouping_by_numerical_column_is_usage_error() {
        let (g, rep) = shop_db();
        let err = group_supernodes(&g, &rep, "item", "weight").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
