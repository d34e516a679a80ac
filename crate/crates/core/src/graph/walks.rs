//! Meta-path occurrences: counting, enumeration and induced subgraphs.
//!
//! An occurrence of `r1 -> ... -> rL` starting at `v` is a walk
//! `v = n0, n1, ..., nL` with `(n{i-1}, ri, ni)` an edge for every step.

use std::collections::{BTreeMap, BTreeSet};

use super::{Edge, GraphBuilder, HeteroGraph, MetaPath, NodeId};
use crate::error::Result;

/// The node sequence of one walk, `L + 1` entries long.
pub type Occurrence = Vec<NodeId>;

fn check_path(g: &HeteroGraph, mp: &MetaPath) -> Result<()> {
    for r in mp.relations() {
        g.check_relation(*r)?;
    }
    Ok(())
}

/// Number of distinct walks from `v` following `mp`. Uses frontier
/// multiplicities, so the walks themselves are never materialised.
/// Saturates at `u64::MAX`.
pub fn count_occurrences(g: &HeteroGraph, v: NodeId, mp: &MetaPath) -> Result<u64> {
    g.check_node(v)?;
    check_path(g, mp)?;
    let mut frontier: BTreeMap<NodeId, u64> = BTreeMap::from([(v, 1)]);
    for &r in mp.relations() {
        let mut next: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (&w, &mult) in &frontier {
            for &u in g.out(w, r) {
                let slot = next.entry(u).or_insert(0);
                *slot = slot.saturating_add(mult);
            }
        }
        if next.is_empty() {
            return Ok(0);
        }
        frontier = next;
    }
    Ok(frontier.values().fold(0u64, |acc, m| acc.saturating_add(*m)))
}

/// Like [`count_occurrences`], counting only walks whose final node satisfies
/// `accept`.
pub fn count_occurrences_where(
    g: &HeteroGraph,
    v: NodeId,
    mp: &MetaPath,
    accept: impl Fn(NodeId) -> bool,
) -> Result<u64> {
    g.check_node(v)?;
    check_path(g, mp)?;
    let mut frontier: BTreeMap<NodeId, u64> = BTreeMap::from([(v, 1)]);
    for &r in mp.relations() {
        let mut next: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (&w, &mult) in &frontier {
            for &u in g.out(w, r) {
                let slot = next.entry(u).or_insert(0);
                *slot = slot.saturating_add(mult);
            }
        }
        frontier = next;
    }
    Ok(frontier
        .iter()
        .filter(|(u, _)| accept(**u))
        .fold(0u64, |acc, (_, m)| acc.saturating_add(*m)))
}

/// Occurrence counts for every node at once, by a backward pass over the path.
pub fn occurrence_counts(g: &HeteroGraph, mp: &MetaPath) -> Result<Vec<u64>> {
    check_path(g, mp)?;
    let mut counts = vec![1u64; g.num_nodes()];
    for &r in mp.relations().iter().rev() {
        counts = g
            .nodes()
            .map(|v| {
                g.out(v, r)
                    .iter()
                    .fold(0u64, |acc, u| acc.saturating_add(counts[u.index()]))
            })
            .collect();
    }
    Ok(counts)
}

/// `sets[d][v]` is true when `v` can complete the suffix `r{d+1} .. rL`.
/// `sets[L]` is all true.
pub fn completion_sets(g: &HeteroGraph, mp: &MetaPath) -> Result<Vec<Vec<bool>>> {
    check_path(g, mp)?;
    let n = g.num_nodes();
    let l = mp.len();
    let mut sets = vec![vec![true; n]; l + 1];
    for d in (0..l).rev() {
        let r = mp.relations()[d];
        let (head, tail) = sets.split_at_mut(d + 1);
        let next = &tail[0];
        for v in g.nodes() {
            head[d][v.index()] = g.out(v, r).iter().any(|u| next[u.index()]);
        }
    }
    Ok(sets)
}

/// `layers[d]` is the sorted set of nodes reachable from `targets` by the
/// prefix `r1 .. rd`; `layers[0]` is the target set itself.
pub fn forward_layers(
    g: &HeteroGraph,
    targets: &[NodeId],
    mp: &MetaPath,
) -> Result<Vec<Vec<NodeId>>> {
    check_path(g, mp)?;
    for t in targets {
        g.check_node(*t)?;
    }
    let mut first: Vec<NodeId> = targets.to_vec();
    first.sort_unstable();
    first.dedup();
    let mut layers = vec![first];
    for &r in mp.relations() {
        let prev = layers.last().expect("non-empty");
        let next: BTreeSet<NodeId> = prev.iter().flat_map(|&v| g.out(v, r).iter().copied()).collect();
        layers.push(next.into_iter().collect());
    }
    Ok(layers)
}

/// All walks from `v` along `mp`, in lexicographic node order. Returns at
/// most `limit` walks.
pub fn enumerate_occurrences(
    g: &HeteroGraph,
    v: NodeId,
    mp: &MetaPath,
    limit: usize,
) -> Result<Vec<Occurrence>> {
    g.check_node(v)?;
    let complete = completion_sets(g, mp)?;
    let mut out = Vec::new();
    let mut stack = vec![v];
    fn dfs(
        g: &HeteroGraph,
        mp: &MetaPath,
        complete: &[Vec<bool>],
        stack: &mut Vec<NodeId>,
        out: &mut Vec<Occurrence>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        let depth = stack.len() - 1;
        if depth == mp.len() {
            out.push(stack.clone());
            return;
        }
        let here = *stack.last().expect("non-empty");
        let r = mp.relations()[depth];
        for &u in g.out(here, r) {
            if complete[depth + 1][u.index()] {
                stack.push(u);
                dfs(g, mp, complete, stack, out, limit);
                stack.pop();
            }
        }
    }
    if complete[0][v.index()] {
        dfs(g, mp, &complete, &mut stack, &mut out, limit);
    }
    Ok(out)
}

/// Union of every node and edge lying on at least one full occurrence of one
/// of the meta-paths, starting at one of the targets, plus the targets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InducedSubgraph {
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeSet<Edge>,
}

impl InducedSubgraph {
    pub fn contains_edge(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }

    /// Re-indexes the subgraph into a standalone graph. Node `i` of the result
    /// is `mapping[i]` in `g`; relative order is preserved.
    pub fn materialize(&self, g: &HeteroGraph) -> (HeteroGraph, Vec<NodeId>) {
        let mapping: Vec<NodeId> = self.nodes.iter().copied().collect();
        let index: BTreeMap<NodeId, NodeId> = mapping
            .iter()
            .enumerate()
            .map(|(i, v)| (*v, NodeId(i as u32)))
            .collect();
        let mut b = GraphBuilder::new(
            g.type_names().to_vec(),
            g.relation_names().to_vec(),
            g.feature_dim(),
        )
        .expect("source graph tables are valid");
        for &v in &mapping {
            b.add_node(g.node_type(v), g.features(v))
                .expect("source graph features are valid");
        }
        for e in &self.edges {
            b.add_edge(index[&e.src], e.rel, index[&e.dst])
                .expect("edge endpoints are subgraph nodes");
        }
        (b.build(), mapping)
    }
}

/// Induced explanation subgraph of `mps` over `targets`.
pub fn induced_subgraph(
    g: &HeteroGraph,
    targets: &[NodeId],
    mps: &[MetaPath],
) -> Result<InducedSubgraph> {
    let mut sub = InducedSubgraph::default();
    for t in targets {
        g.check_node(*t)?;
        sub.nodes.insert(*t);
    }
    for mp in mps {
        let complete = completion_sets(g, mp)?;
        let layers = forward_layers(g, targets, mp)?;
        for (d, &r) in mp.relations().iter().enumerate() {
            for &v in &layers[d] {
                if !complete[d][v.index()] {
                    continue;
                }
                for &u in g.out(v, r) {
                    if complete[d + 1][u.index()] {
                        sub.nodes.insert(v);
                        sub.nodes.insert(u);
                        sub.edges.insert(Edge::new(v, r, u));
                    }
                }
            }
        }
    }
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::random_graph;
    use crate::graph::{RelationId, TypeId};
    use proptest::prelude::*;

    /// Explicit depth-first enumeration without any pruning.
    fn brute_walks(g: &HeteroGraph, v: NodeId, mp: &MetaPath) -> Vec<Vec<NodeId>> {
        let mut walks = vec![vec![v]];
        for &r in mp.relations() {
            let mut next = Vec::new();
            for w in &walks {
                let last = *w.last().unwrap();
                for e in g.edges().filter(|e| e.src == last && e.rel == r) {
                    let mut w2 = w.clone();
                    w2.push(e.dst);
                    next.push(w2);
                }
            }
            walks = next;
        }
        walks
    }

    fn path(rels: &[u16]) -> MetaPath {
        MetaPath::new(rels.iter().map(|r| RelationId(*r)).collect())
    }

    #[test]
    fn empty_path_has_one_occurrence() {
        let (g, _) = random_graph(1, 6, 2, 10);
        for v in g.nodes() {
            assert_eq!(count_occurrences(&g, v, &MetaPath::empty()).unwrap(), 1);
        }
    }

    #[test]
    fn chains_are_counted() {
        // grey -r-> orange -s-> green, three complete chains and one truncated.
        let mut b = GraphBuilder::new(["grey", "orange", "green"], ["r", "s"], 3).unwrap();
        let grey = b.add_typed_node(TypeId(0), &[]).unwrap();
        let r = RelationId(0);
        let s = RelationId(1);
        for i in 0..4 {
            let o = b.add_typed_node(TypeId(1), &[]).unwrap();
            b.add_edge(grey, r, o).unwrap();
            if i < 3 {
                let gr = b.add_typed_node(TypeId(2), &[]).unwrap();
                b.add_edge(o, s, gr).unwrap();
            }
        }
        let g = b.build();
        let mp = MetaPath::new(vec![r, s]);
        assert_eq!(count_occurrences(&g, grey, &mp).unwrap(), 3);
        assert_eq!(enumerate_occurrences(&g, grey, &mp, usize::MAX).unwrap().len(), 3);
        let sub = induced_subgraph(&g, &[grey], &[mp]).unwrap();
        assert_eq!(sub.edges.len(), 6);
        assert_eq!(sub.nodes.len(), 7);
    }

    #[test]
    fn empty_path_induces_only_targets() {
        let (g, _) = random_graph(2, 10, 2, 30);
        let targets = [NodeId(1), NodeId(4)];
        let sub = induced_subgraph(&g, &targets, &[MetaPath::empty()]).unwrap();
        assert_eq!(sub.nodes, BTreeSet::from(targets));
        assert!(sub.edges.is_empty());
    }

    #[test]
    fn backward_counts_match_frontier_counts() {
        let (g, _) = random_graph(9, 40, 3, 150);
        let mp = path(&[0, 2, 1]);
        let all = occurrence_counts(&g, &mp).unwrap();
        for v in g.nodes() {
            assert_eq!(all[v.index()], count_occurrences(&g, v, &mp).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn counts_agree_with_brute_force(
            seed in 0u64..10_000,
            n in 5usize..60,
            m in 0usize..200,
            rels in proptest::collection::vec(0u16..3, 0..=4),
        ) {
            let (g, _) = random_graph(seed, n, 3, m);
            let mp = path(&rels);
            for v in g.nodes() {
                let brute = brute_walks(&g, v, &mp);
                prop_assert_eq!(count_occurrences(&g, v, &mp).unwrap(), brute.len() as u64);
                let enumerated = enumerate_occurrences(&g, v, &mp, usize::MAX).unwrap();
                let mut sorted = brute.clone();
                sorted.sort();
                prop_assert_eq!(enumerated, sorted);
            }
        }

        #[test]
        fn one_step_extension_sums_frontier(
            seed in 0u64..10_000,
            rels in proptest::collection::vec(0u16..3, 0..=3),
            last in 0u16..3,
        ) {
            let (g, _) = random_graph(seed, 30, 3, 90);
            let mp = path(&rels);
            let ext = mp.extended(RelationId(last));
            for v in g.nodes() {
                let via_frontier: u64 = brute_walks(&g, v, &mp)
                    .iter()
                    .map(|w| g.out(*w.last().unwrap(), RelationId(last)).len() as u64)
                    .sum();
                prop_assert_eq!(count_occurrences(&g, v, &ext).unwrap(), via_frontier);
            }
        }

        #[test]
        fn induced_edges_lie_on_enumerated_walks(
            seed in 0u64..10_000,
            rels in proptest::collection::vec(0u16..3, 1..=3),
        ) {
            let (g, _) = random_graph(seed, 25, 3, 80);
            let targets: Vec<NodeId> = (0..5).map(NodeId).collect();
            let mp = path(&rels);
            let sub = induced_subgraph(&g, &targets, std::slice::from_ref(&mp)).unwrap();
            let mut on_walk = BTreeSet::new();
            let mut walk_nodes: BTreeSet<NodeId> = targets.iter().copied().collect();
            for &t in &targets {
                for w in brute_walks(&g, t, &mp) {
                    for (i, &r) in mp.relations().iter().enumerate() {
                        on_walk.insert(Edge::new(w[i], r, w[i + 1]));
                    }
                    walk_nodes.extend(w);
                }
            }
            prop_assert_eq!(&sub.edges, &on_walk);
            prop_assert_eq!(&sub.nodes, &walk_nodes);
        }

        #[test]
        fn induced_subgraph_is_idempotent(
            seed in 0u64..10_000,
            rels in proptest::collection::vec(0u16..3, 0..=3),
        ) {
            let (g, _) = random_graph(seed, 25, 3, 80);
            let targets: Vec<NodeId> = vec![NodeId(0), NodeId(3), NodeId(7)];
            let mp = path(&rels);
            let once = induced_subgraph(&g, &targets, std::slice::from_ref(&mp)).unwrap();
            let (h, mapping) = once.materialize(&g);
            let mapped: Vec<NodeId> = targets
                .iter()
                .map(|t| NodeId(mapping.iter().position(|m| m == t).unwrap() as u32))
                .collect();
            let twice = induced_subgraph(&h, &mapped, &[mp]).unwrap();
            let (h2, mapping2) = twice.materialize(&h);
            prop_assert_eq!(h2, h);
            prop_assert_eq!(mapping2, (0..mapping.len() as u32).map(NodeId).collect::<Vec<_>>());
        }
    }
}
