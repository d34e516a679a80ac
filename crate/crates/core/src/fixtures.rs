//! Small hand-built datasets with known answers.
//!
//! * [`prescriptions`]: two patients whose labels follow a counts-of-counts
//!   rule ("at least two prescriptions, each with at least two medications").
//! * [`prescriptions_with_price`]: the same graph with a price attribute on
//!   prescriptions.
//! * [`chains`]: grey nodes labelled positive when they start at least three
//!   `r -> s` chains.
//! * [`lookahead`]: a dataset where the informative relation only pays off
//!   after a second hop, while another relation looks better on its own.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::graph::{GraphBuilder, HeteroGraph, MetaPath, NodeId, RelationId, TypeId};
use crate::rng;

/// Binary node labels; `true` is the positive class.
pub type Labels = BTreeMap<NodeId, bool>;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: HeteroGraph,
    pub labels: Labels,
    /// The meta-path that determines the labels.
    pub truth: MetaPath,
}

fn prescriptions_impl(prices: Option<[f64; 5]>) -> Dataset {
    let types = ["patient", "prescription", "hospital", "medication", "doctor"];
    let attrs = if prices.is_some() { 3 } else { 2 };
    let mut b = GraphBuilder::new(types, ["a", "b", "c", "d"], types.len() + attrs)
        .expect("static schema");
    let ty = |name: &str| TypeId(types.iter().position(|t| *t == name).unwrap() as u16);
    let [a, rb, c, d] = [0, 1, 2, 3].map(RelationId);

    let patient0 = b.add_typed_node(ty("patient"), &[]).unwrap();
    let patient1 = b.add_typed_node(ty("patient"), &[]).unwrap();
    // Prescriptions 2..6: [exempt, nonexempt, price?]. Only 2 and 5 are non-exempt.
    let exempt = [false, true, true, false, true];
    let mut presc = Vec::new();
    for (i, &ex) in exempt.iter().enumerate() {
        let mut x = vec![if ex { 1.0 } else { 0.0 }, if ex { 0.0 } else { 1.0 }];
        if let Some(p) = prices {
            x.push(p[i]);
        }
        let mut full = vec![0.0; types.len()];
        full.extend(x);
        full[ty("prescription").index()] = 1.0;
        presc.push(b.add_node(ty("prescription"), &full).unwrap());
    }
    let hospital = b.add_typed_node(ty("hospital"), &[]).unwrap();
    let meds: Vec<NodeId> = (0..5)
        .map(|_| b.add_typed_node(ty("medication"), &[]).unwrap())
        .collect();
    let doctor = b.add_typed_node(ty("doctor"), &[]).unwrap();
    let p = |k: usize| presc[k - 2];
    let m = |k: usize| meds[k - 8];

    b.add_edge(patient0, a, hospital).unwrap();
    b.add_edge(patient1, a, hospital).unwrap();
    for k in [2, 3, 4] {
        b.add_edge(patient0, rb, p(k)).unwrap();
    }
    for k in [4, 5, 6] {
        b.add_edge(patient1, rb, p(k)).unwrap();
    }
    for (src, dsts) in [(3, &[10, 11][..]), (4, &[8, 9]), (5, &[10, 11]), (6, &[12])] {
        for &dst in dsts {
            b.add_edge(p(src), d, m(dst)).unwrap();
        }
    }
    b.add_edge(p(3), c, doctor).unwrap();
    b.add_edge(p(6), c, doctor).unwrap();

    Dataset {
        graph: b.build(),
        labels: Labels::from([(patient0, true), (patient1, false)]),
        truth: MetaPath::new(vec![rb, d]),
    }
}

/// Patients 0 (positive) and 1 (negative); prescriptions 2..6; a shared
/// hospital 7 reached by `a`; medications 8..12 reached by `d`; a doctor 13
/// reached by `c`.
pub fn prescriptions() -> Dataset {
    prescriptions_impl(None)
}

/// [`prescriptions`] with a price column on prescriptions (dollar prices
/// 20, 70, 60, 20, 70 for prescriptions 2..6), min-max normalised.
pub fn prescriptions_with_price() -> Dataset {
    let raw = [20.0, 70.0, 60.0, 20.0, 70.0];
    let norm = raw.map(|p: f64| (p - 20.0) / 50.0);
    prescriptions_impl(Some(norm))
}

/// Grey nodes with `r -> s` chains to green nodes via orange nodes. The
/// chain counts per grey node are `[3, 1, 4, 2, 0, 3]`; every grey node also
/// has one orange neighbour without an `s` edge.
pub fn chains() -> Dataset {
    let counts = [3usize, 1, 4, 2, 0, 3];
    let mut b = GraphBuilder::new(["grey", "orange", "green"], ["r", "s"], 3).unwrap();
    let (r, s) = (RelationId(0), RelationId(1));
    let mut labels = Labels::new();
    let greys: Vec<NodeId> = counts
        .iter()
        .map(|_| b.add_typed_node(TypeId(0), &[]).unwrap())
        .collect();
    for (&grey, &k) in greys.iter().zip(&counts) {
        for _ in 0..k {
            let o = b.add_typed_node(TypeId(1), &[]).unwrap();
            let gr = b.add_typed_node(TypeId(2), &[]).unwrap();
            b.add_edge(grey, r, o).unwrap();
            b.add_edge(o, s, gr).unwrap();
        }
        let dangling = b.add_typed_node(TypeId(1), &[]).unwrap();
        b.add_edge(grey, r, dangling).unwrap();
        labels.insert(grey, k >= 3);
    }
    Dataset {
        graph: b.build(),
        labels,
        truth: MetaPath::new(vec![r, s]),
    }
}

/// Lookahead dataset. Every target has four `r1` neighbours in a shared pool
/// of hub nodes; it is positive when at least two of them carry an `r2`
/// edge. `r2` also connects targets directly to one of two marker groups
/// whose flag agrees with the label for about 80% of targets, and `r3` links
/// targets to an uninformative pool.
pub fn lookahead(num_targets: usize, seed: u64) -> Dataset {
    const NOISE: usize = 2;
    let types = ["target", "hub", "leaf", "marker", "noise"];
    let nt = types.len();
    let dim = nt + NOISE + 1;
    let mut b = GraphBuilder::new(types, ["r1", "r2", "r3"], dim).unwrap();
    let (r1, r2, r3) = (RelationId(0), RelationId(1), RelationId(2));
    let mut rng = rng::derived(seed, &[0x100c]);
    let noisy = |b: &mut GraphBuilder, ty: u16, flag: f64, rng: &mut rng::Rng| {
        let mut x = vec![0.0; dim];
        x[ty as usize] = 1.0;
        for k in 0..NOISE {
            x[nt + k] = rng.gen::<f64>();
        }
        x[nt + NOISE] = flag;
        b.add_node(TypeId(ty), &x).unwrap()
    };

    let targets: Vec<NodeId> = (0..num_targets)
        .map(|_| noisy(&mut b, 0, 0.0, &mut rng))
        .collect();
    let pool = 40;
    let active: Vec<NodeId> = (0..pool).map(|_| noisy(&mut b, 1, 0.0, &mut rng)).collect();
    let inert: Vec<NodeId> = (0..pool).map(|_| noisy(&mut b, 1, 0.0, &mut rng)).collect();
    let leaves: Vec<NodeId> = (0..pool).map(|_| noisy(&mut b, 2, 0.0, &mut rng)).collect();
    for &h in &active {
        let leaf = leaves[rng.gen_range(0..pool)];
        b.add_edge(h, r2, leaf).unwrap();
    }
    let markers: Vec<NodeId> = (0..10)
        .map(|i| noisy(&mut b, 3, if i < 5 { 1.0 } else { 0.0 }, &mut rng))
        .collect();
    let noise: Vec<NodeId> = (0..10).map(|_| noisy(&mut b, 4, 0.0, &mut rng)).collect();

    let mut labels = Labels::new();
    for &t in &targets {
        let positive = rng.gen_bool(0.5);
        let k = if positive {
            rng.gen_range(2..=4)
        } else {
            rng.gen_range(0..=1)
        };
        let mut hubs = rand::seq::index::sample(&mut rng, pool, k)
            .into_iter()
            .map(|i| active[i])
            .collect::<Vec<_>>();
        hubs.extend(
            rand::seq::index::sample(&mut rng, pool, 4 - k)
                .into_iter()
                .map(|i| inert[i]),
        );
        for h in hubs {
            b.add_edge(t, r1, h).unwrap();
        }
        let agree = rng.gen_bool(0.8);
        let flagged = positive == agree;
        let m = markers[if flagged { 0 } else { 5 } + rng.gen_range(0..5)];
        b.add_edge(t, r2, m).unwrap();
        b.add_edge(t, r3, noise[rng.gen_range(0..noise.len())]).unwrap();
        labels.insert(t, positive);
    }
    Dataset {
        graph: b.build(),
        labels,
        truth: MetaPath::new(vec![r1, r2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::count_occurrences;

    #[test]
    fn prescription_graph_shape() {
        let ds = prescriptions();
        let g = &ds.graph;
        assert_eq!(g.num_nodes(), 14);
        let b = g.relation_by_name("b").unwrap();
        assert_eq!(g.neighbors(NodeId(0), b).unwrap(), &[NodeId(2), NodeId(3), NodeId(4)]);
        assert_eq!(count_occurrences(g, NodeId(0), &ds.truth).unwrap(), 4);
        assert_eq!(count_occurrences(g, NodeId(1), &ds.truth).unwrap(), 5);
    }

    #[test]
    fn chain_labels_follow_counts() {
        let ds = chains();
        for (&v, &label) in &ds.labels {
            let n = count_occurrences(&ds.graph, v, &ds.truth).unwrap();
            assert_eq!(label, n >= 3);
        }
        assert_eq!(count_occurrences(&ds.graph, NodeId(0), &ds.truth).unwrap(), 3);
    }

    #[test]
    fn lookahead_labels_follow_counts() {
        let ds = lookahead(200, 3);
        let hub_paths = MetaPath::new(vec![RelationId(0), RelationId(1)]);
        let mut pos = 0;
        for (&v, &label) in &ds.labels {
            let n = count_occurrences(&ds.graph, v, &hub_paths).unwrap();
            assert_eq!(label, n >= 2);
            pos += label as usize;
        }
        assert!(pos > 50 && pos < 150);
    }
}
