//! Faithfulness of meta-path explanations.
//!
//! Sufficiency: edits outside the meta-path induced subgraph must leave every
//! prediction bit-identical. Necessity: removing occurrences of the meta-paths
//! should lower the probability of the originally predicted class.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::Labels;
use crate::graph::{enumerate_occurrences, induced_subgraph, Edge, HeteroGraph, MetaPath, NodeId, RelationId};
use crate::model::{f1, predicted_class, MpsGnnModel};
use crate::par;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalPlan {
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub removed: BTreeSet<Edge>,
    /// Occurrences per target before removal.
    pub before: Vec<u64>,
    /// Occurrences per target destroyed by the removal.
    pub destroyed: Vec<u64>,
}

/// Destroys about `fraction` of each target's meta-path occurrences.
///
/// Occurrences are grouped into branches by their first edge, which starts
/// at the target itself and so never touches another target's branches.
/// Branches are deleted in random order until at least the per-target goal
/// of `floor(f n) + Bernoulli(frac(f n))` occurrences is gone.
pub fn remove_occurrences(
    g: &HeteroGraph,
    mps: &[MetaPath],
    targets: &[NodeId],
    plan: &RemovalPlan,
) -> Result<(HeteroGraph, Removal)> {
    if !(0.0..=1.0).contains(&plan.fraction) {
        return Err(Error::usage(format!("removal fraction {} is outside [0, 1]", plan.fraction)));
    }
    let mut removed = BTreeSet::new();
    let mut before = Vec::with_capacity(targets.len());
    let mut destroyed = Vec::with_capacity(targets.len());
    for (ti, &t) in targets.iter().enumerate() {
        // first edge -> occurrences through it
        let mut branches: std::collections::BTreeMap<Edge, u64> = std::collections::BTreeMap::new();
        for mp in mps {
            if mp.is_empty() {
                continue;
            }
            for occ in enumerate_occurrences(g, t, mp, usize::MAX)? {
                *branches
                    .entry(Edge::new(occ[0], mp.relations()[0], occ[1]))
                    .or_insert(0) += 1;
            }
        }
        let total: u64 = branches.values().sum();
        let mut rng = rng::derived(plan.seed, &[0xe1, t.0 as u64, ti as u64]);
        let exact = plan.fraction * total as f64;
        let mut goal = exact.floor() as u64;
        if rng.gen::<f64>() < exact - exact.floor() {
            goal += 1;
        }
        let mut order: Vec<(Edge, u64)> = branches.into_iter().collect();
        order.shuffle(&mut rng);
        let mut gone = 0;
        for (e, n) in order {
            if gone >= goal {
                break;
            }
            removed.insert(e);
            gone += n;
        }
        before.push(total);
        destroyed.push(gone);
    }
    let edited = g.edit(&removed, &[])?;
    Ok((
        edited,
        Removal {
            removed,
            before,
            destroyed,
        },
    ))
}

/// Mean drop in the probability of each target's originally predicted class.
pub fn necessity(model: &MpsGnnModel, g: &HeteroGraph, g_removed: &HeteroGraph, targets: &[NodeId]) -> Result<f64> {
    let p = model.predict(g, targets)?;
    let q = model.predict(g_removed, targets)?;
    Ok(necessity_from(&p, &q))
}

/// Necessity from stored probabilities.
pub fn necessity_from(original: &[[f64; 2]], modified: &[[f64; 2]]) -> f64 {
    if original.is_empty() {
        return 0.0;
    }
    let total: f64 = original
        .iter()
        .zip(modified)
        .map(|(p, q)| {
            let c = predicted_class(p) as usize;
            p[c] - q[c]
        })
        .sum();
    total / original.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    pub perturbations: usize,
    pub passed: bool,
    /// One line per offending edit and target.
    pub failures: Vec<String>,
}

fn edge_label(g: &HeteroGraph, e: &Edge) -> String {
    format!("({}, {}, {})", e.src, g.relation_name(e.rel), e.dst)
}

/// One random edit that leaves the induced subgraph unchanged: either
/// delete an edge outside it or insert an edge that does not join it.
fn complement_edit(
    g: &HeteroGraph,
    mps: &[MetaPath],
    targets: &[NodeId],
    outside: &[Edge],
    rng: &mut rng::Rng,
) -> Result<Option<(String, HeteroGraph)>> {
    let base = induced_subgraph(g, targets, mps)?;
    let try_insert = outside.is_empty() || rng.gen_bool(0.5);
    if try_insert && g.num_relations() > 0 {
        for _ in 0..64 {
            let e = Edge::new(
                NodeId(rng.gen_range(0..g.num_nodes() as u32)),
                RelationId(rng.gen_range(0..g.num_relations() as u16)),
                NodeId(rng.gen_range(0..g.num_nodes() as u32)),
            );
            if g.has_edge(&e) {
                continue;
            }
            let h = g.edit(&BTreeSet::new(), &[e])?;
            if induced_subgraph(&h, targets, mps)? == base {
                return Ok(Some((format!("insert {}", edge_label(g, &e)), h)));
            }
        }
    }
    if let Some(e) = outside.choose(rng) {
        let h = g.edit(&BTreeSet::from([*e]), &[])?;
        return Ok(Some((format!("delete {}", edge_label(g, e)), h)));
    }
    Ok(None)
}

fn compare(label: &str, targets: &[NodeId], p: &[[f64; 2]], q: &[[f64; 2]], out: &mut Vec<String>) {
    for ((t, a), b) in targets.iter().zip(p).zip(q) {
        if a[0].to_bits() != b[0].to_bits() || a[1].to_bits() != b[1].to_bits() {
            out.push(format!("{label}: target {t} changed from {:?} to {:?}", a, b));
        }
    }
}

/// Applies `num_perturbations` independent random complement edits, each to
/// the original graph, and checks that every target's probabilities are
/// bit-identical.
pub fn sufficiency_check(
    model: &MpsGnnModel,
    g: &HeteroGraph,
    targets: &[NodeId],
    num_perturbations: usize,
    seed: u64,
) -> Result<SufficiencyReport> {
    let mps = model.paths();
    let base = model.predict(g, targets)?;
    let sub = induced_subgraph(g, targets, &mps)?;
    let outside: Vec<Edge> = g.edges().filter(|e| !sub.contains_edge(e)).collect();
    let results = par::map_range(num_perturbations, |i| -> Result<Vec<String>> {
        let mut rng = rng::derived(seed, &[0x5f, i as u64]);
        let mut failures = Vec::new();
        if let Some((label, h)) = complement_edit(g, &mps, targets, &outside, &mut rng)? {
            let q = model.predict(&h, targets)?;
            compare(&label, targets, &base, &q, &mut failures);
        }
        Ok(failures)
    });
    let mut failures = Vec::new();
    for r in results {
        failures.extend(r?);
    }
    Ok(SufficiencyReport {
        perturbations: num_perturbations,
        passed: failures.is_empty(),
        failures,
    })
}

/// Negative control: deletes one random edge inside the induced subgraph and
/// reports whether any target's probabilities moved. Returns `None` when the
/// subgraph has no edges.
pub fn inside_edit_changes_prediction(
    model: &MpsGnnModel,
    g: &HeteroGraph,
    targets: &[NodeId],
    seed: u64,
) -> Result<Option<(String, bool)>> {
    let mps = model.paths();
    let sub = induced_subgraph(g, targets, &mps)?;
    let inside: Vec<Edge> = sub.edges.iter().copied().collect();
    let mut rng = rng::derived(seed, &[0x1c]);
    let Some(e) = inside.choose(&mut rng) else {
        return Ok(None);
    };
    let h = g.edit(&BTreeSet::from([*e]), &[])?;
    let p = model.predict(g, targets)?;
    let q = model.predict(&h, targets)?;
    let mut diffs = Vec::new();
    compare("inside", targets, &p, &q, &mut diffs);
    Ok(Some((format!("delete {}", edge_label(g, e)), !diffs.is_empty())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub fraction: f64,
    pub f1: f64,
    pub necessity: f64,
    /// Share of all occurrences that the removal destroyed.
    pub destroyed_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub baseline_f1: f64,
    pub rows: Vec<FractionRow>,
}

impl FaithfulnessReport {
    /// `fraction,f1,necessity` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,f1,necessity\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.fraction, r.f1, r.necessity);
        }
        s
    }
}

/// F1 and necessity of a frozen model after removing each fraction of the
/// meta-path occurrences of `targets`.
pub fn faithfulness(
    model: &MpsGnnModel,
    g: &HeteroGraph,
    targets: &[NodeId],
    labels: &Labels,
    fractions: &[f64],
    seed: u64,
) -> Result<FaithfulnessReport> {
    let gold: Vec<bool> = targets
        .iter()
        .map(|t| {
            labels
                .get(t)
                .copied()
                .ok_or_else(|| Error::data(format!("node {t} has no label")))
        })
        .collect::<Result<_>>()?;
    let mps = model.paths();
    let base = model.predict(g, targets)?;
    let f1_of = |p: &[[f64; 2]]| {
        let pred: Vec<bool> = p.iter().map(predicted_class).collect();
        f1(&pred, &gold)
    };
    let rows = par::map(fractions, |&fraction| -> Result<FractionRow> {
        let plan = RemovalPlan {
            fraction,
            seed: rng::derive(seed, &[fraction.to_bits()]),
        };
        let (h, removal) = remove_occurrences(g, &mps, targets, &plan)?;
        let q = model.predict(&h, targets)?;
        let total: u64 = removal.before.iter().sum();
        let gone: u64 = removal.destroyed.iter().sum();
        Ok(FractionRow {
            fraction,
            f1: f1_of(&q),
            necessity: necessity_from(&base, &q),
            destroyed_share: if total == 0 { 0.0 } else { gone as f64 / total as f64 },
        })
    });
    Ok(FaithfulnessReport {
        baseline_f1: f1_of(&base),
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::count_occurrences;
    use crate::model::TrainConfig;

    #[test]
    fn fraction_zero_keeps_the_graph() {
        let ds = fixtures::prescriptions();
        let plan = RemovalPlan { fraction: 0.0, seed: 1 };
        let (h, r) = remove_occurrences(&ds.graph, std::slice::from_ref(&ds.truth), &[NodeId(0), NodeId(1)], &plan).unwrap();
        assert_eq!(h, ds.graph);
        assert!(r.removed.is_empty());
    }

    #[test]
    fn full_removal_clears_positive_patient() {
        let ds = fixtures::prescriptions();
        let plan = RemovalPlan { fraction: 1.0, seed: 1 };
        let (h, r) = remove_occurrences(&ds.graph, std::slice::from_ref(&ds.truth), &[NodeId(0)], &plan).unwrap();
        assert_eq!(count_occurrences(&ds.graph, NodeId(0), &ds.truth).unwrap(), 4);
        assert_eq!(count_occurrences(&h, NodeId(0), &ds.truth).unwrap(), 0);
        let sub = induced_subgraph(&ds.graph, &[NodeId(0)], std::slice::from_ref(&ds.truth)).unwrap();
        assert!(r.removed.iter().all(|e| sub.contains_edge(e)));
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let ds = fixtures::chains();
        let plan = RemovalPlan { fraction: 1.5, seed: 1 };
        assert!(remove_occurrences(&ds.graph, std::slice::from_ref(&ds.truth), &[NodeId(0)], &plan).is_err());
    }

    #[test]
    fn necessity_arithmetic() {
        let p = [[0.2, 0.8], [0.9, 0.1], [0.4, 0.6]];
        let q = [[0.5, 0.5], [0.7, 0.3], [0.4, 0.6]];
        let expected = ((0.8 - 0.5) + (0.9 - 0.7) + 0.0) / 3.0;
        assert!((necessity_from(&p, &q) - expected).abs() < 1e-15);
        assert_eq!(necessity_from(&p, &p), 0.0);
    }

    #[test]
    fn chains_model_is_sufficient_and_control_moves() {
        let ds = fixtures::chains();
        let cfg = TrainConfig { max_epochs: 40, ..Default::default() };
        let model = crate::model::train(&ds.graph, std::slice::from_ref(&ds.truth), &ds.labels, &cfg).unwrap().model;
        let targets: Vec<NodeId> = ds.labels.keys().copied().collect();
        let report = sufficiency_check(&model, &ds.graph, &targets, 40, 3).unwrap();
        assert!(report.passed, "{:?}", report.failures);
        assert_eq!(sufficiency_check(&model, &ds.graph, &targets, 0, 3).unwrap().perturbations, 0);
        let (_, moved) = inside_edit_changes_prediction(&model, &ds.graph, &targets, 5).unwrap().unwrap();
        assert!(moved);
        let rep = faithfulness(&model, &ds.graph, &targets, &ds.labels, &[0.0, 0.5], 1).unwrap();
        assert_eq!(rep.rows[0].necessity, 0.0);
        assert_eq!(rep.rows[0].f1, rep.baseline_f1);
    }
}
