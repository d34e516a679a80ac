//! Heterogeneous graph data model.
//!
//! A [`HeteroGraph`] is an immutable directed multi-relational graph with a
//! dense feature vector per node. Adjacency is stored as one CSR block per
//! relation, with neighbour lists sorted by [`NodeId`] so that every sum over a
//! neighbourhood has a fixed evaluation order.
//!
//! Feature vectors live in a single unified space of dimension `D` whose first
//! `num_types` entries are a one-hot node-type indicator.

mod walks;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use walks::{
    completion_sets, count_occurrences, count_occurrences_where, enumerate_occurrences,
    forward_layers, induced_subgraph, occurrence_counts, InducedSubgraph, Occurrence,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u16);

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypeId(pub u16);

impl TypeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A directed typed edge `src -rel-> dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub rel: RelationId,
    pub dst: NodeId,
}

impl Edge {
    pub fn new(src: NodeId, rel: RelationId, dst: NodeId) -> Self {
        Edge { src, rel, dst }
    }
}

/// An ordered sequence of relations `r1 -> r2 -> ... -> rL`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetaPath(Vec<RelationId>);

impl MetaPath {
    pub fn new(relations: Vec<RelationId>) -> Self {
        MetaPath(relations)
    }

    pub fn empty() -> Self {
        MetaPath(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.0
    }

    /// Returns a copy of this path extended by one relation.
    pub fn extended(&self, rel: RelationId) -> MetaPath {
        let mut rels = self.0.clone();
        rels.push(rel);
        MetaPath(rels)
    }

    /// Resolves relation names against `g`.
    pub fn from_names<S: AsRef<str>>(g: &HeteroGraph, names: &[S]) -> Result<Self> {
        names
            .iter()
            .map(|n| g.relation_by_name(n.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(MetaPath)
    }

    pub fn names(&self, g: &HeteroGraph) -> Vec<String> {
        self.0
            .iter()
            .map(|r| g.relation_name(*r).to_string())
            .collect()
    }

    pub fn display(&self, g: &HeteroGraph) -> String {
        if self.0.is_empty() {
            return "[]".to_string();
        }
        self.names(g).join(" -> ")
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Csr {
    fn from_sorted(num_nodes: usize, edges: &[(NodeId, NodeId)]) -> Self {
        let mut offsets = vec![0usize; num_nodes + 1];
        for (src, _) in edges {
            offsets[src.index() + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let targets = edges.iter().map(|(_, dst)| *dst).collect();
        Csr { offsets, targets }
    }

    #[inline]
    fn row(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v.index()]..self.offsets[v.index() + 1]]
    }
}

/// Immutable heterogeneous graph.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    type_names: Vec<String>,
    relation_names: Vec<String>,
    node_types: Vec<TypeId>,
    feature_dim: usize,
    features: Vec<f64>,
    adjacency: Vec<Csr>,
}

impl HeteroGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.targets.len()).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.num_nodes() as u32).map(NodeId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.num_relations() as u16).map(RelationId)
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        &self.type_names[t.index()]
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.type_names
            .iter()
            .position(|n| n == name)
            .map(|i| TypeId(i as u16))
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relation_names[r.index()]
    }

    pub fn relation_by_name(&self, name: &str) -> Result<RelationId> {
        self.relation_names
            .iter()
            .position(|n| n == name)
            .map(|i| RelationId(i as u16))
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn node_type(&self, v: NodeId) -> TypeId {
        self.node_types[v.index()]
    }

    pub fn nodes_of_type(&self, t: TypeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(move |v| self.node_type(*v) == t)
    }

    /// Feature vector `x_v`.
    #[inline]
    pub fn features(&self, v: NodeId) -> &[f64] {
        let d = self.feature_dim;
        &self.features[v.index() * d..(v.index() + 1) * d]
    }

    pub fn check_node(&self, v: NodeId) -> Result<()> {
        if v.index() < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::InvalidNode(v.0))
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<()> {
        if r.index() < self.num_relations() {
            Ok(())
        } else {
            Err(Error::InvalidRelation(r.0))
        }
    }

    /// The `r`-neighbours of `v`: every `u` with `(v, r, u)` an edge, sorted.
    pub fn neighbors(&self, v: NodeId, r: RelationId) -> Result<&[NodeId]> {
        self.check_node(v)?;
        self.check_relation(r)?;
        Ok(self.out(v, r))
    }

    /// Unchecked variant of [`neighbors`](Self::neighbors) for hot loops.
    #[inline]
    pub fn out(&self, v: NodeId, r: RelationId) -> &[NodeId] {
        self.adjacency[r.index()].row(v)
    }

    pub fn has_edge(&self, e: &Edge) -> bool {
        e.src.index() < self.num_nodes()
            && e.rel.index() < self.num_relations()
            && self.out(e.src, e.rel).binary_search(&e.dst).is_ok()
    }

    /// All edges in `(src, rel, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.nodes().flat_map(move |v| {
            self.relations()
                .flat_map(move |r| self.out(v, r).iter().map(move |&u| Edge::new(v, r, u)))
        })
    }

    pub fn relation_edge_count(&self, r: RelationId) -> usize {
        self.adjacency[r.index()].targets.len()
    }

    /// Rebuilds the graph with `remove` deleted and `add` inserted. Nodes,
    /// features and relation tables are unchanged.
    pub fn edit(&self, remove: &BTreeSet<Edge>, add: &[Edge]) -> Result<HeteroGraph> {
        for e in add {
            self.check_node(e.src)?;
            self.check_node(e.dst)?;
            self.check_relation(e.rel)?;
        }
        let mut per_rel: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); self.num_relations()];
        for e in self.edges() {
            if !remove.contains(&e) {
                per_rel[e.rel.index()].push((e.src, e.dst));
            }
        }
        for e in add {
            per_rel[e.rel.index()].push((e.src, e.dst));
        }
        let adjacency = per_rel
            .into_iter()
            .map(|mut es| {
                es.sort_unstable();
                es.dedup();
                Csr::from_sorted(self.num_nodes(), &es)
            })
            .collect();
        Ok(HeteroGraph {
            type_names: self.type_names.clone(),
            relation_names: self.relation_names.clone(),
            node_types: self.node_types.clone(),
            feature_dim: self.feature_dim,
            features: self.features.clone(),
            adjacency,
        })
    }
}

/// Incremental construction of a [`HeteroGraph`].
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    type_names: Vec<String>,
    relation_names: Vec<String>,
    feature_dim: usize,
    node_types: Vec<TypeId>,
    features: Vec<f64>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    /// `feature_dim` must be at least the number of types (the one-hot prefix).
    pub fn new<T, R>(type_names: T, relation_names: R, feature_dim: usize) -> Result<Self>
    where
        T: IntoIterator,
        T::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        let type_names: Vec<String> = type_names.into_iter().map(Into::into).collect();
        let relation_names: Vec<String> = relation_names.into_iter().map(Into::into).collect();
        if feature_dim < type_names.len() {
            return Err(Error::usage(format!(
                "feature dimension {feature_dim} cannot hold a one-hot over {} types",
                type_names.len()
            )));
        }
        if relation_names.len() > u16::MAX as usize || type_names.len() > u16::MAX as usize {
            return Err(Error::usage("too many relations or types"));
        }
        for (kind, names) in [("type", &type_names), ("relation", &relation_names)] {
            let unique: BTreeSet<&String> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(Error::usage(format!("duplicate {kind} name")));
            }
        }
        Ok(GraphBuilder {
            type_names,
            relation_names,
            feature_dim,
            node_types: Vec::new(),
            features: Vec::new(),
            edges: Vec::new(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.type_names
            .iter()
            .position(|n| n == name)
            .map(|i| TypeId(i as u16))
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_names
            .iter()
            .position(|n| n == name)
            .map(|i| RelationId(i as u16))
    }

    /// Adds a node with a full feature vector; the type prefix must be the
    /// one-hot indicator of `ty`.
    pub fn add_node(&mut self, ty: TypeId, features: &[f64]) -> Result<NodeId> {
        if ty.index() >= self.type_names.len() {
            return Err(Error::usage(format!("type id {} out of range", ty.0)));
        }
        if features.len() != self.feature_dim {
            return Err(Error::usage(format!(
                "feature vector has dimension {}, expected {}",
                features.len(),
                self.feature_dim
            )));
        }
        for (i, &x) in features[..self.type_names.len()].iter().enumerate() {
            let expected = if i == ty.index() { 1.0 } else { 0.0 };
            if x != expected {
                return Err(Error::usage(
                    "type-indicator block of the feature vector is not the one-hot of the node type",
                ));
            }
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::usage("non-finite feature value"));
        }
        if self.node_types.len() >= u32::MAX as usize {
            return Err(Error::usage("too many nodes"));
        }
        let id = NodeId(self.node_types.len() as u32);
        self.node_types.push(ty);
        self.features.extend_from_slice(features);
        Ok(id)
    }

    /// Adds a node whose features are the type one-hot followed by `attrs`,
    /// zero-padded to the feature dimension.
    pub fn add_typed_node(&mut self, ty: TypeId, attrs: &[f64]) -> Result<NodeId> {
        let t = self.type_names.len();
        if t + attrs.len() > self.feature_dim {
            return Err(Error::usage("attributes do not fit the feature dimension"));
        }
        let mut x = vec![0.0; self.feature_dim];
        if ty.index() < t {
            x[ty.index()] = 1.0;
        }
        x[t..t + attrs.len()].copy_from_slice(attrs);
        self.add_node(ty, &x)
    }

    pub fn add_edge(&mut self, src: NodeId, rel: RelationId, dst: NodeId) -> Result<()> {
        let n = self.node_types.len();
        if src.index() >= n {
            return Err(Error::InvalidNode(src.0));
        }
        if dst.index() >= n {
            return Err(Error::InvalidNode(dst.0));
        }
        if rel.index() >= self.relation_names.len() {
            return Err(Error::InvalidRelation(rel.0));
        }
        self.edges.push(Edge::new(src, rel, dst));
        Ok(())
    }

    /// Freezes the builder. Duplicate edges collapse into one.
    pub fn build(self) -> HeteroGraph {
        let n = self.node_types.len();
        let mut per_rel: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); self.relation_names.len()];
        for e in &self.edges {
            per_rel[e.rel.index()].push((e.src, e.dst));
        }
        let adjacency = per_rel
            .into_iter()
            .map(|mut es| {
                es.sort_unstable();
                es.dedup();
                Csr::from_sorted(n, &es)
            })
            .collect();
        HeteroGraph {
            type_names: self.type_names,
            relation_names: self.relation_names,
            node_types: self.node_types,
            feature_dim: self.feature_dim,
            features: self.features,
            adjacency,
        }
    }
}
