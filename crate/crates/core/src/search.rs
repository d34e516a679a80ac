//! Meta-path construction by greedy relation scoring with a beam.
//!
//! Starting from singleton bags over the training targets, each iteration
//! scores every relation for every live prefix. Relations whose optimised
//! loss beats `eta` times their random-parameter baseline are candidate
//! extensions; the `beam` best of them across all prefixes survive, get their
//! bags propagated, and are evaluated by training a small GNN. Each lineage
//! remembers its prefix with the best validation F1.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::Labels;
use crate::graph::{HeteroGraph, MetaPath, NodeId, RelationId};
use crate::model::{stratified_split, train_with_split, Split, TrainConfig};
use crate::par;
use crate::rng;
use crate::scoring::{
    frontier, propagate_bags, score_relation, BagSets, OptimizerConfig, PairSample, ScoredRelation,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub l_max: usize,
    pub eta: f64,
    pub beam: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Budget for the per-prefix GNN evaluations inside the loop.
    pub inner: TrainConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            l_max: 4,
            eta: 0.7,
            beam: 3,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            inner: TrainConfig {
                max_epochs: 150,
                patience: 30,
                learning_rate: 0.03,
                ..TrainConfig::default()
            },
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.l_max == 0 || self.beam == 0 {
            return Err(Error::usage("l_max and beam must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::usage(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub relation: String,
    /// `None` when no bag member has an outgoing edge of this relation.
    pub loss: Option<f64>,
    pub baseline: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryTrace {
    pub prefix: Vec<String>,
    pub candidates: Vec<CandidateTrace>,
    /// Set when no candidate passed the `eta` guard.
    pub stopped: bool,
    pub min_loss: Option<f64>,
    pub min_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeptTrace {
    pub path: Vec<String>,
    pub loss: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub entries: Vec<EntryTrace>,
    pub kept: Vec<KeptTrace>,
    pub best_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPath {
    pub path: Vec<String>,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub iterations: Vec<IterationTrace>,
    pub result: Vec<RankedPath>,
    pub score_calls: usize,
    pub num_relations: usize,
}

impl SearchTrace {
    /// Plain-text table per iteration: one row per scored prefix and
    /// relation.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for it in &self.iterations {
            s.push_str(&format!("iteration {}\n", it.iteration));
            s.push_str("prefix\trelation\tloss\tbaseline\tpassed\n");
            for e in &it.entries {
                let prefix = if e.prefix.is_empty() {
                    "[]".to_string()
                } else {
                    e.prefix.join("->")
                };
                for c in &e.candidates {
                    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                    s.push_str(&format!(
                        "{prefix}\t{}\t{}\t{}\t{}\n",
                        c.relation,
                        fmt(c.loss),
                        fmt(c.baseline),
                        c.passed
                    ));
                }
            }
            for k in &it.kept {
                s.push_str(&format!("kept\t{}\tloss {:.4}\tval_f1 {:.4}\n", k.path.join("->"), k.loss, k.val_f1));
            }
        }
        s
    }
}

struct Entry {
    path: MetaPath,
    bags: BagSets,
    /// The entry can't be extended further (a class ran out of bags).
    terminal: bool,
    best: Option<(MetaPath, f64)>,
}

/// Training-split targets by class.
fn split_classes(split: &Split, labels: &Labels) -> (Vec<NodeId>, Vec<NodeId>) {
    let pos = split.train.iter().copied().filter(|v| labels[v]).collect();
    let neg = split.train.iter().copied().filter(|v| !labels[v]).collect();
    (pos, neg)
}

fn check_labels(g: &HeteroGraph, labels: &Labels) -> Result<()> {
    for v in labels.keys() {
        g.check_node(*v)?;
    }
    let pos = labels.values().filter(|l| **l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateLabels(format!(
            "{pos} positive and {} negative labels",
            labels.len() - pos
        )));
    }
    Ok(())
}

fn inner_f1(g: &HeteroGraph, path: &MetaPath, labels: &Labels, split: &Split, cfg: &SearchConfig) -> Result<f64> {
    let tc = TrainConfig {
        seed: rng::derive(cfg.seed, &[0x91, path.len() as u64]),
        ..cfg.inner
    };
    Ok(train_with_split(g, std::slice::from_ref(path), labels, split, &tc)?
        .metrics
        .val_f1)
}

/// Learns up to `beam` meta-paths ranked by validation F1, together with a
/// full trace. An empty list means nothing passed the `eta` guard.
pub fn learn_metapaths(g: &HeteroGraph, labels: &Labels, cfg: &SearchConfig) -> Result<(Vec<MetaPath>, SearchTrace)> {
    cfg.validate()?;
    check_labels(g, labels)?;
    let split = stratified_split(labels, cfg.inner.train_fraction, cfg.inner.val_fraction, cfg.seed);
    let (pos, neg) = split_classes(&split, labels);
    let relations: Vec<RelationId> = g.relations().collect();

    let mut beam = vec![Entry {
        path: MetaPath::empty(),
        bags: BagSets::singletons(&pos, &neg),
        terminal: false,
        best: None,
    }];
    let mut finished: Vec<(MetaPath, f64)> = Vec::new();
    let mut trace = SearchTrace {
        iterations: Vec::new(),
        result: Vec::new(),
        score_calls: 0,
        num_relations: relations.len(),
    };
    let mut best_f1: Option<f64> = None;

    for iteration in 1..=cfg.l_max {
        if beam.is_empty() {
            break;
        }
        let mut it = IterationTrace {
            iteration,
            entries: Vec::new(),
            kept: Vec::new(),
            best_f1,
        };
        // (loss, entry index, relation, scored)
        let mut pool: Vec<(f64, usize, RelationId, ScoredRelation)> = Vec::new();
        for (ei, entry) in beam.iter().enumerate() {
            let bags = &entry.bags;
            let mut prng = rng::derived(cfg.seed, &[0x9a, iteration as u64, ei as u64]);
            let sample = PairSample::draw(
                bags.positives.len(),
                bags.negatives.len(),
                cfg.optimizer.max_pairs,
                &mut prng,
            );
            let live: Vec<RelationId> = relations
                .iter()
                .copied()
                .filter(|&r| !frontier(g, bags, r).is_empty())
                .collect();
            let scored = par::map(&live, |&r| {
                let seed = rng::derive(cfg.seed, &[0x5c, iteration as u64, ei as u64, r.0 as u64]);
                score_relation(g, bags, r, &sample, &cfg.optimizer, seed)
            });
            trace.score_calls += live.len();
            let mut scored_iter = live.iter().zip(scored);
            let mut by_rel: Vec<Option<ScoredRelation>> = vec![None; relations.len()];
            for (r, s) in &mut scored_iter {
                by_rel[r.index()] = Some(s?);
            }
            let mut et = EntryTrace {
                prefix: entry.path.names(g),
                candidates: Vec::new(),
                stopped: false,
                min_loss: None,
                min_baseline: None,
            };
            let mut argmin: Option<&ScoredRelation> = None;
            for (r, s) in relations.iter().zip(&by_rel) {
                let passed = s.as_ref().is_some_and(|s| s.loss < cfg.eta * s.baseline_loss);
                et.candidates.push(CandidateTrace {
                    relation: g.relation_name(*r).to_string(),
                    loss: s.as_ref().map(|s| s.loss),
                    baseline: s.as_ref().map(|s| s.baseline_loss),
                    passed,
                });
                if let Some(s) = s {
                    if argmin.is_none_or(|m| s.loss < m.loss) {
                        argmin = Some(s);
                    }
                    if passed {
                        pool.push((s.loss, ei, *r, s.clone()));
                    }
                }
            }
            et.min_loss = argmin.map(|s| s.loss);
            et.min_baseline = argmin.map(|s| s.baseline_loss);
            et.stopped = !et.candidates.iter().any(|c| c.passed);
            it.entries.push(et);
        }

        pool.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.2.cmp(&b.2))
                .then(a.1.cmp(&b.1))
        });
        pool.truncate(cfg.beam);

        let mut extended_parents = BTreeSet::new();
        let mut next = Vec::new();
        for (loss, ei, r, scored) in pool {
            extended_parents.insert(ei);
            let parent = &beam[ei];
            let path = parent.path.extended(r);
            let bags = propagate_bags(g, &parent.bags, &scored)?;
            let terminal = bags.positives.is_empty() || bags.negatives.is_empty();
            let f1 = inner_f1(g, &path, labels, &split, cfg)?;
            let mut best = parent.best.clone();
            if best.as_ref().is_none_or(|(_, b)| f1 > *b) {
                best = Some((path.clone(), f1));
            }
            best_f1 = Some(best_f1.map_or(f1, |b: f64| b.max(f1)));
            it.kept.push(KeptTrace {
                path: path.names(g),
                loss,
                val_f1: f1,
            });
            next.push(Entry {
                path,
                bags,
                terminal,
                best,
            });
        }
        it.best_f1 = best_f1;
        trace.iterations.push(it);

        for (ei, entry) in beam.into_iter().enumerate() {
            if !extended_parents.contains(&ei) {
                finished.extend(entry.best);
            }
        }
        beam = Vec::new();
        for entry in next {
            if entry.terminal || entry.path.len() >= cfg.l_max {
                finished.extend(entry.best);
            } else {
                beam.push(entry);
            }
        }
    }
    for entry in beam {
        finished.extend(entry.best);
    }

    // Distinct lineage winners by validation F1; shorter paths first on ties.
    finished.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.len().cmp(&b.0.len()))
            .then(a.0.cmp(&b.0))
    });
    let mut seen = BTreeSet::new();
    let mut result = Vec::new();
    for (path, f1) in finished {
        if seen.insert(path.clone()) {
            trace.result.push(RankedPath {
                path: path.names(g),
                val_f1: f1,
            });
            result.push(path);
            if result.len() == cfg.beam {
                break;
            }
        }
    }
    Ok((result, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub prefix: Vec<String>,
    /// Validation F1 per candidate relation, in relation order.
    pub f1: Vec<(String, f64)>,
    pub chosen: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub steps: Vec<GreedyStep>,
    pub best: Vec<String>,
    pub best_f1: f64,
}

/// Comparator: at every step extend with the relation whose trained GNN
/// reaches the highest validation F1 (ties: lowest relation id), up to
/// `l_max` steps, and return the best prefix seen.
pub fn greedy_by_f1_baseline(g: &HeteroGraph, labels: &Labels, cfg: &SearchConfig) -> Result<(MetaPath, GreedyTrace)> {
    cfg.validate()?;
    check_labels(g, labels)?;
    let split = stratified_split(labels, cfg.inner.train_fraction, cfg.inner.val_fraction, cfg.seed);
    let relations: Vec<RelationId> = g.relations().collect();
    if relations.is_empty() {
        return Err(Error::usage("graph has no relations"));
    }
    let mut path = MetaPath::empty();
    let mut best: Option<(MetaPath, f64)> = None;
    let mut steps = Vec::new();
    for _ in 0..cfg.l_max {
        let f1s = par::map(&relations, |&r| inner_f1(g, &path.extended(r), labels, &split, cfg));
        let f1s: Vec<f64> = f1s.into_iter().collect::<Result<_>>()?;
        let mut arg = 0;
        for (i, f) in f1s.iter().enumerate() {
            if *f > f1s[arg] {
                arg = i;
            }
        }
        let r = relations[arg];
        steps.push(GreedyStep {
            prefix: path.names(g),
            f1: relations
                .iter()
                .zip(&f1s)
                .map(|(r, f)| (g.relation_name(*r).to_string(), *f))
                .collect(),
            chosen: g.relation_name(r).to_string(),
        });
        path = path.extended(r);
        if best.as_ref().is_none_or(|(_, b)| f1s[arg] > *b) {
            best = Some((path.clone(), f1s[arg]));
        }
    }
    let (best, best_f1) = best.expect("l_max is positive");
    let trace = GreedyTrace {
        steps,
        best: best.names(g),
        best_f1,
    };
    Ok((best, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::{GraphBuilder, TypeId};
    use rand::Rng as _;

    fn quick() -> SearchConfig {
        SearchConfig {
            optimizer: OptimizerConfig {
                iterations: 150,
                restarts: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn prescriptions_yield_b_then_d() {
        let ds = fixtures::prescriptions();
        let (paths, trace) = learn_metapaths(&ds.graph, &ds.labels, &SearchConfig::default()).unwrap();
        assert_eq!(paths[0], ds.truth, "{}", trace.table());
        assert_eq!(paths.len(), 1);
    }

    #[test]
    fn coin_flip_labels_stop_immediately() {
        // Every target sees the same two hub nodes, so structure carries no
        // information about the labels.
        let mut b = GraphBuilder::new(["t", "h"], ["r", "s"], 2).unwrap();
        let hubs: Vec<NodeId> = (0..2).map(|_| b.add_typed_node(TypeId(1), &[]).unwrap()).collect();
        let mut rng = rng::rng(1);
        let mut labels = Labels::new();
        for i in 0..60 {
            let t = b.add_typed_node(TypeId(0), &[]).unwrap();
            b.add_edge(t, RelationId(0), hubs[0]).unwrap();
            b.add_edge(t, RelationId(1), hubs[1]).unwrap();
            labels.insert(t, if i < 2 { i == 0 } else { rng.gen_bool(0.5) });
        }
        let g = b.build();
        let (paths, trace) = learn_metapaths(&g, &labels, &quick()).unwrap();
        assert!(paths.is_empty());
        assert!(trace.iterations[0].entries[0].stopped);
    }

    #[test]
    fn trace_invariants_hold() {
        let ds = fixtures::lookahead(150, 2);
        let cfg = quick();
        let (_, trace) = learn_metapaths(&ds.graph, &ds.labels, &cfg).unwrap();
        assert!(trace.score_calls <= cfg.beam * ds.graph.num_relations() * cfg.l_max);
        let mut last = None;
        for it in &trace.iterations {
            if let (Some(a), Some(b)) = (last, it.best_f1) {
                assert!(b >= a);
            }
            last = it.best_f1.or(last);
            for e in &it.entries {
                if e.stopped {
                    if let (Some(l), Some(b)) = (e.min_loss, e.min_baseline) {
                        assert!(l >= cfg.eta * b);
                    }
                }
            }
        }
        let (_, again) = learn_metapaths(&ds.graph, &ds.labels, &cfg).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn single_relation_graph_agrees() {
        let ds = fixtures::chains();
        // Keep only relation r by building a graph with the same nodes and r edges.
        let mut b = GraphBuilder::new(["grey", "orange", "green"], ["r"], 3).unwrap();
        for v in ds.graph.nodes() {
            b.add_node(ds.graph.node_type(v), ds.graph.features(v)).unwrap();
        }
        for e in ds.graph.edges().filter(|e| e.rel == RelationId(0)) {
            b.add_edge(e.src, e.rel, e.dst).unwrap();
        }
        let g = b.build();
        let cfg = SearchConfig { l_max: 1, ..quick() };
        let (greedy, _) = greedy_by_f1_baseline(&g, &ds.labels, &cfg).unwrap();
        let (ours, _) = learn_metapaths(&g, &ds.labels, &cfg).unwrap();
        assert_eq!(greedy, MetaPath::new(vec![RelationId(0)]));
        assert!(ours.is_empty() || ours[0] == greedy);
    }
}
