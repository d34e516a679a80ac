//! Synthetic count-based node classification scenarios.
//!
//! A target is positive when it starts at least `c` occurrences of a hidden
//! meta-path of length `l`. Every target has the same number of neighbours
//! along the first true relation: some start a full occurrence, the rest are
//! decoys whose chains stop one hop short. Negatives start exactly `c - 1`
//! occurrences, so the mere existence of an occurrence does not separate the
//! classes once `c >= 2`. The remaining relations are distractors into a
//! small pool of noise nodes.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::Labels;
use crate::graph::{
    count_occurrences, count_occurrences_where, induced_subgraph, Edge, GraphBuilder, HeteroGraph,
    MetaPath, NodeId, RelationId, TypeId,
};
use crate::rng;

const NOISE_ATTRS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub num_relations: usize,
    pub threshold: usize,
    pub path_length: usize,
    pub num_targets: usize,
    pub positive_fraction: f64,
    /// Mean out-degree of distractor relations.
    pub distractor_density: f64,
    /// Active and decoy nodes per hop.
    pub pool_size: usize,
    pub noise_nodes: usize,
    /// Only occurrences ending at a marked node count; unmarked endings are
    /// spurious look-alikes.
    pub feature_constrained: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            num_relations: 5,
            threshold: 2,
            path_length: 2,
            num_targets: 2000,
            positive_fraction: 0.3,
            distractor_density: 1.0,
            pool_size: 200,
            noise_nodes: 20,
            feature_constrained: false,
            seed: 0,
        }
    }
}

pub const PRESETS: [(&str, usize, usize, usize); 8] = [
    ("s1", 5, 2, 2),
    ("s2", 5, 2, 3),
    ("s3", 5, 3, 3),
    ("s4", 5, 4, 2),
    ("s5", 10, 2, 2),
    ("s6", 10, 2, 3),
    ("s7", 10, 3, 3),
    ("s8", 10, 4, 2),
];

impl ScenarioSpec {
    /// `s1` .. `s8` as `(|R|, c, l)`.
    pub fn preset(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        PRESETS
            .iter()
            .find(|p| p.0 == lower)
            .map(|&(_, r, c, l)| ScenarioSpec {
                num_relations: r,
                threshold: c,
                path_length: l,
                ..Default::default()
            })
            .ok_or_else(|| Error::usage(format!("unknown preset `{name}` (expected s1..s8)")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::usage(m));
        if self.threshold == 0 {
            return fail("threshold c must be at least 1".into());
        }
        if self.path_length == 0 {
            return fail("path length must be at least 1".into());
        }
        if self.num_relations < self.path_length {
            return fail(format!(
                "{} relations cannot host a meta-path of length {}",
                self.num_relations, self.path_length
            ));
        }
        if self.num_relations > u16::MAX as usize {
            return fail("too many relations".into());
        }
        if self.num_targets < 2 {
            return fail("need at least two targets".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return fail("positive fraction must lie strictly between 0 and 1".into());
        }
        if !(self.distractor_density >= 0.0 && self.distractor_density.is_finite()) {
            return fail("distractor density must be non-negative".into());
        }
        if self.pool_size < self.threshold + 4 {
            return fail(format!("pool size must be at least c + 4 = {}", self.threshold + 4));
        }
        if self.noise_nodes == 0 {
            return fail("need at least one noise node".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGroundTruth {
    pub path: Vec<String>,
    pub threshold: usize,
    pub targets: Vec<NodeId>,
    pub counts: Vec<u64>,
    pub labels: Vec<bool>,
    /// Explanation edges `(src, relation, dst)` per positive target.
    pub explanations: Vec<(NodeId, Vec<(NodeId, String, NodeId)>)>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub graph: HeteroGraph,
    pub labels: Labels,
    pub truth: MetaPath,
    pub ground_truth: ScenarioGroundTruth,
}

fn noisy_node(b: &mut GraphBuilder, ty: usize, n_types: usize, marker: Option<f64>, rng: &mut rng::Rng) -> NodeId {
    let mut x = vec![0.0; b.feature_dim()];
    x[ty] = 1.0;
    let off = n_types + ty * NOISE_ATTRS;
    for k in 0..NOISE_ATTRS {
        x[off + k] = rng.gen::<f64>();
    }
    if let Some(m) = marker {
        x[n_types * (1 + NOISE_ATTRS)] = m;
    }
    b.add_node(TypeId(ty as u16), &x).expect("generator features are valid")
}

/// Builds a scenario and audits every label against an independent recount.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let l = spec.path_length;
    let c = spec.threshold;
    let mut rng = rng::derived(spec.seed, &[0x5e9]);

    let mut type_names = vec!["target".to_string()];
    type_names.extend((1..=l).map(|i| format!("hop{i}")));
    type_names.push("noise".to_string());
    let n_types = type_names.len();
    let noise_ty = n_types - 1;
    let dim = n_types * (1 + NOISE_ATTRS) + spec.feature_constrained as usize;
    let rel_names: Vec<String> = (0..spec.num_relations).map(|i| format!("r{i}")).collect();

    let mut ids: Vec<u16> = (0..spec.num_relations as u16).collect();
    ids.shuffle(&mut rng);
    let true_rels: Vec<RelationId> = ids[..l].iter().map(|&i| RelationId(i)).collect();
    let mut distractors: Vec<RelationId> = ids[l..].iter().map(|&i| RelationId(i)).collect();
    distractors.sort_unstable();
    let truth = MetaPath::new(true_rels.clone());

    let mut b = GraphBuilder::new(type_names.clone(), rel_names, dim)?;
    let marker = |m: f64| spec.feature_constrained.then_some(m);

    let targets: Vec<NodeId> = (0..spec.num_targets)
        .map(|_| noisy_node(&mut b, 0, n_types, marker(0.0), &mut rng))
        .collect();

    // active[i] and decoy[i] are the hop-(i+1) pools.
    let p = spec.pool_size;
    let mut active: Vec<Vec<NodeId>> = Vec::with_capacity(l);
    let mut decoy: Vec<Vec<NodeId>> = Vec::with_capacity(l);
    for hop in 1..=l {
        let is_last = hop == l;
        active.push(
            (0..p)
                .map(|_| noisy_node(&mut b, hop, n_types, marker(if is_last { 1.0 } else { 0.0 }), &mut rng))
                .collect(),
        );
        let decoys = if spec.feature_constrained {
            // Final-hop look-alikes carry marker 0.
            p
        } else if is_last {
            0
        } else {
            p
        };
        decoy.push(
            (0..decoys)
                .map(|_| noisy_node(&mut b, hop, n_types, marker(0.0), &mut rng))
                .collect(),
        );
    }
    let noise: Vec<NodeId> = (0..spec.noise_nodes)
        .map(|_| noisy_node(&mut b, noise_ty, n_types, marker(0.0), &mut rng))
        .collect();

    for i in 0..l.saturating_sub(1) {
        let r = true_rels[i + 1];
        for &v in &active[i] {
            b.add_edge(v, r, active[i + 1][rng.gen_range(0..p)])?;
        }
        // Decoy chains stop at hop l-1 unless final-hop look-alikes exist.
        let reaches_last = i + 1 < l - 1 || spec.feature_constrained;
        if reaches_last {
            for &v in &decoy[i] {
                b.add_edge(v, r, decoy[i + 1][rng.gen_range(0..decoy[i + 1].len())])?;
            }
        }
    }

    let n_pos = ((spec.num_targets as f64 * spec.positive_fraction).round() as usize)
        .clamp(1, spec.num_targets - 1);
    let mut is_pos = vec![false; spec.num_targets];
    for i in rand::seq::index::sample(&mut rng, spec.num_targets, n_pos) {
        is_pos[i] = true;
    }
    let degree = c + 2;
    let has_decoys = !decoy[0].is_empty();
    for (t, &pos) in targets.iter().zip(&is_pos) {
        let k = if pos { c + rng.gen_range(0..=2) } else { c - 1 };
        let n_decoy = if has_decoys { degree - k } else { 0 };
        for i in rand::seq::index::sample(&mut rng, p, k) {
            b.add_edge(*t, true_rels[0], active[0][i])?;
        }
        for i in rand::seq::index::sample(&mut rng, decoy[0].len().max(n_decoy), n_decoy) {
            b.add_edge(*t, true_rels[0], decoy[0][i])?;
        }
    }

    // Distractors: sources cycle over node types, destinations are noise.
    let by_type: Vec<Vec<NodeId>> = {
        let mut v = vec![Vec::new(); n_types];
        v[0] = targets.clone();
        for hop in 1..=l {
            v[hop] = active[hop - 1].iter().chain(&decoy[hop - 1]).copied().collect();
        }
        v[noise_ty] = noise.clone();
        v
    };
    let max_deg = (2.0 * spec.distractor_density).round() as usize;
    for (j, &r) in distractors.iter().enumerate() {
        for &v in &by_type[j % n_types] {
            let d = rng.gen_range(0..=max_deg);
            for _ in 0..d {
                b.add_edge(v, r, noise[rng.gen_range(0..noise.len())])?;
            }
        }
    }

    let graph = b.build();
    let marker_col = n_types * (1 + NOISE_ATTRS);
    let mut labels = Labels::new();
    let mut counts = Vec::with_capacity(targets.len());
    for (t, &pos) in targets.iter().zip(&is_pos) {
        let n = if spec.feature_constrained {
            count_occurrences_where(&graph, *t, &truth, |u| graph.features(u)[marker_col] == 1.0)?
        } else {
            count_occurrences(&graph, *t, &truth)?
        };
        if (n >= c as u64) != pos {
            return Err(Error::Numerical(format!(
                "generator audit failed: target {t} has {n} occurrences but label {pos}"
            )));
        }
        counts.push(n);
        labels.insert(*t, pos);
    }

    let mut explanations = Vec::new();
    for (t, &pos) in targets.iter().zip(&is_pos) {
        if !pos {
            continue;
        }
        let sub = induced_subgraph(&graph, &[*t], std::slice::from_ref(&truth))?;
        let edges = sub
            .edges
            .iter()
            .filter(|e: &&Edge| {
                !spec.feature_constrained || e.rel != *true_rels.last().unwrap() || graph.features(e.dst)[marker_col] == 1.0
            })
            .map(|e| (e.src, graph.relation_name(e.rel).to_string(), e.dst))
            .collect();
        explanations.push((*t, edges));
    }

    let ground_truth = ScenarioGroundTruth {
        path: truth.names(&graph),
        threshold: c,
        targets: targets.clone(),
        counts,
        labels: is_pos,
        explanations,
    };
    Ok(Scenario {
        graph,
        labels,
        truth,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_the_table() {
        let s4 = ScenarioSpec::preset("S4").unwrap();
        assert_eq!((s4.num_relations, s4.threshold, s4.path_length), (5, 4, 2));
        let s7 = ScenarioSpec::preset("s7").unwrap();
        assert_eq!((s7.num_relations, s7.threshold, s7.path_length), (10, 3, 3));
        assert!(ScenarioSpec::preset("s9").is_err());
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let bad = ScenarioSpec { threshold: 0, ..Default::default() };
        assert!(matches!(generate(&bad), Err(Error::Usage(_))));
        let bad = ScenarioSpec { num_relations: 2, path_length: 3, ..Default::default() };
        assert!(matches!(generate(&bad), Err(Error::Usage(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec { num_targets: 300, seed: 5, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn threshold_one_is_existence() {
        let spec = ScenarioSpec { threshold: 1, num_targets: 200, ..Default::default() };
        let s = generate(&spec).unwrap();
        for (t, &pos) in &s.labels {
            let n = count_occurrences(&s.graph, *t, &s.truth).unwrap();
            assert_eq!(pos, n > 0);
        }
    }

    #[test]
    fn positive_share_and_degree() {
        let s = generate(&ScenarioSpec { num_targets: 1000, ..Default::default() }).unwrap();
        let pos = s.labels.values().filter(|v| **v).count();
        assert_eq!(pos, 300);
        let r0 = s.truth.relations()[0];
        for t in &s.ground_truth.targets {
            assert_eq!(s.graph.out(*t, r0).len(), 4);
        }
    }

    #[test]
    fn feature_constrained_mode_counts_marked_endings() {
        let spec = ScenarioSpec { feature_constrained: true, num_targets: 300, seed: 2, ..Default::default() };
        let s = generate(&spec).unwrap();
        let plain_differs = s
            .ground_truth
            .targets
            .iter()
            .zip(&s.ground_truth.counts)
            .any(|(t, n)| count_occurrences(&s.graph, *t, &s.truth).unwrap() != *n);
        assert!(plain_differs);
    }
}
