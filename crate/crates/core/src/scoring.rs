//! Weighted multi-instance relation scoring.
//!
//! A bag is a weighted node set. For a candidate relation `r` every member
//! `v` gets the value
//!
//! ```text
//! f(v) = Θᵀx_v                      if v has no r-successors
//! f(v) = Θᵀx_v · Σ_{u ∈ N_r(v)} w_u  otherwise
//! ```
//!
//! a bag's discriminant is `F(B) = Σ α(v,B) f(v)`, and the relaxed ranking
//! loss is the mean of `σ(F(B⁻) − F(B⁺))` over sampled bag pairs. The score
//! of `r` is the minimum of that loss over `(Θ, w)`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::dense::{dot, logistic};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeId, RelationId};
use crate::rng;

/// A weighted node set. `alpha[i]` is the weight of `members[i]`; members
/// are sorted and distinct. `origin` is the labelled node the bag descends
/// from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub origin: NodeId,
    pub members: Vec<NodeId>,
    pub alpha: Vec<f64>,
}

impl Bag {
    pub fn singleton(v: NodeId) -> Self {
        Bag {
            origin: v,
            members: vec![v],
            alpha: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn alpha_of(&self, v: NodeId) -> Option<f64> {
        self.members.binary_search(&v).ok().map(|i| self.alpha[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagSets {
    pub positives: Vec<Bag>,
    pub negatives: Vec<Bag>,
    pub iteration: usize,
}

impl BagSets {
    /// One singleton bag with weight 1 per labelled node.
    pub fn singletons(positives: &[NodeId], negatives: &[NodeId]) -> Self {
        BagSets {
            positives: positives.iter().map(|v| Bag::singleton(*v)).collect(),
            negatives: negatives.iter().map(|v| Bag::singleton(*v)).collect(),
            iteration: 0,
        }
    }

    fn check_both_classes(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::DegenerateLabels(format!(
                "{} positive and {} negative bags",
                self.positives.len(),
                self.negatives.len()
            )));
        }
        Ok(())
    }
}

/// How the putative weights of an `r`-neighbourhood are combined.
/// `Max` is the existence-style variant used as a comparator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

/// `Θ` plus one logit per frontier node; `w_u = logistic(logit_u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub theta: Vec<f64>,
    pub frontier: Vec<NodeId>,
    pub w_logits: Vec<f64>,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl ScoringParams {
    pub fn weight(&self, u: NodeId) -> Option<f64> {
        self.frontier
            .binary_search(&u)
            .ok()
            .map(|i| logistic(self.w_logits[i]))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.w_logits.iter().map(|l| logistic(*l)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub baseline_draws: usize,
    pub max_pairs: usize,
    pub aggregation: Aggregation,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            iterations: 300,
            restarts: 3,
            baseline_draws: 5,
            max_pairs: 500,
            aggregation: Aggregation::Sum,
        }
    }
}

/// Indices of `(positive bag, negative bag)` pairs entering the loss.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub pairs: Vec<(u32, u32)>,
}

impl PairSample {
    pub fn all(num_pos: usize, num_neg: usize) -> Self {
        let mut pairs = Vec::with_capacity(num_pos * num_neg);
        for i in 0..num_pos as u32 {
            for j in 0..num_neg as u32 {
                pairs.push((i, j));
            }
        }
        PairSample { pairs }
    }

    /// Every pair when there are at most `max_pairs`, otherwise `max_pairs`
    /// distinct pairs drawn uniformly.
    pub fn draw(num_pos: usize, num_neg: usize, max_pairs: usize, rng: &mut rng::Rng) -> Self {
        let total = num_pos.saturating_mul(num_neg);
        if total <= max_pairs {
            return Self::all(num_pos, num_neg);
        }
        let mut pairs: Vec<(u32, u32)> = if total <= 4 * max_pairs.max(1) {
            let mut all = Self::all(num_pos, num_neg).pairs;
            all.shuffle(rng);
            all.truncate(max_pairs);
            all
        } else {
            let mut seen = std::collections::BTreeSet::new();
            while seen.len() < max_pairs {
                seen.insert((
                    rng.gen_range(0..num_pos as u32),
                    rng.gen_range(0..num_neg as u32),
                ));
            }
            seen.into_iter().collect()
        };
        pairs.sort_unstable();
        PairSample { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRelation {
    pub relation: RelationId,
    pub loss: f64,
    pub baseline_loss: f64,
    pub params: ScoringParams,
}

/// Sorted union of the `r`-successors of every bag member.
pub fn frontier(g: &HeteroGraph, bags: &BagSets, r: RelationId) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = bags
        .positives
        .iter()
        .chain(&bags.negatives)
        .flat_map(|b| b.members.iter())
        .flat_map(|&v| g.out(v, r).iter().copied())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn aggregate(params: &ScoringParams, nbrs: &[NodeId]) -> f64 {
    let ws = nbrs.iter().map(|u| {
        params
            .weight(*u)
            .expect("neighbour outside the frontier universe")
    });
    match params.aggregation {
        Aggregation::Sum => ws.sum(),
        Aggregation::Max => ws.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// `f(v, r, Θ, w)`. Every `r`-successor of `v` must belong to the frontier
/// of `params`.
pub fn node_feature(g: &HeteroGraph, v: NodeId, r: RelationId, params: &ScoringParams) -> f64 {
    let base = dot(&params.theta, g.features(v));
    let nbrs = g.out(v, r);
    if nbrs.is_empty() {
        base
    } else {
        base * aggregate(params, nbrs)
    }
}

/// `F(B) = Σ α(v,B) f(v)`.
pub fn discriminant(g: &HeteroGraph, bag: &Bag, r: RelationId, params: &ScoringParams) -> f64 {
    bag.members
        .iter()
        .zip(&bag.alpha)
        .map(|(&v, &a)| a * node_feature(g, v, r, params))
        .sum()
}

/// Mean of `σ(F(B⁻) − F(B⁺))` over the sampled pairs.
pub fn pairwise_loss(
    g: &HeteroGraph,
    bags: &BagSets,
    r: RelationId,
    params: &ScoringParams,
    sample: &PairSample,
) -> Result<f64> {
    bags.check_both_classes()?;
    if sample.is_empty() {
        return Err(Error::DegenerateLabels("empty pair sample".into()));
    }
    let fp: Vec<f64> = bags
        .positives
        .iter()
        .map(|b| discriminant(g, b, r, params))
        .collect();
    let fneg: Vec<f64> = bags
        .negatives
        .iter()
        .map(|b| discriminant(g, b, r, params))
        .collect();
    let total: f64 = sample
        .pairs
        .iter()
        .map(|&(i, j)| logistic(fneg[j as usize] - fp[i as usize]))
        .sum();
    Ok(total / sample.len() as f64)
}

/// A relation-scoring problem flattened into index form: distinct bag
/// members, their neighbour lists as frontier indices, and per-bag
/// `(member, α)` lists.
pub struct Problem<'a> {
    g: &'a HeteroGraph,
    members: Vec<NodeId>,
    nbrs: Vec<Vec<u32>>,
    frontier: Vec<NodeId>,
    pos: Vec<Vec<(u32, f64)>>,
    neg: Vec<Vec<(u32, f64)>>,
    pairs: Vec<(u32, u32)>,
    aggregation: Aggregation,
}

/// Loss value and gradients with respect to `Θ` and the weight logits.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub theta: Vec<f64>,
    pub logits: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(
        g: &'a HeteroGraph,
        bags: &BagSets,
        r: RelationId,
        sample: &PairSample,
        aggregation: Aggregation,
    ) -> Result<Self> {
        g.check_relation(r)?;
        bags.check_both_classes()?;
        if sample.is_empty() {
            return Err(Error::DegenerateLabels("empty pair sample".into()));
        }
        for &(i, j) in &sample.pairs {
            if i as usize >= bags.positives.len() || j as usize >= bags.negatives.len() {
                return Err(Error::usage("pair sample does not match the bag sets"));
            }
        }
        // Only bags that enter some pair are compiled.
        let mut used_pos = vec![false; bags.positives.len()];
        let mut used_neg = vec![false; bags.negatives.len()];
        for &(i, j) in &sample.pairs {
            used_pos[i as usize] = true;
            used_neg[j as usize] = true;
        }
        let mut members: Vec<NodeId> = bags
            .positives
            .iter()
            .zip(&used_pos)
            .chain(bags.negatives.iter().zip(&used_neg))
            .filter(|(_, u)| **u)
            .flat_map(|(b, _)| b.members.iter().copied())
            .collect();
        members.sort_unstable();
        members.dedup();
        let mut frontier: Vec<NodeId> = members
            .iter()
            .flat_map(|&v| g.out(v, r).iter().copied())
            .collect();
        frontier.sort_unstable();
        frontier.dedup();
        let nbrs = members
            .iter()
            .map(|&v| {
                g.out(v, r)
                    .iter()
                    .map(|u| frontier.binary_search(u).expect("in frontier") as u32)
                    .collect()
            })
            .collect();
        let index = |bs: &[Bag], used: &[bool]| -> Vec<Vec<(u32, f64)>> {
            bs.iter()
                .zip(used)
                .map(|(b, u)| {
                    if !*u {
                        return Vec::new();
                    }
                    b.members
                        .iter()
                        .zip(&b.alpha)
                        .map(|(v, a)| (members.binary_search(v).expect("member") as u32, *a))
                        .collect()
                })
                .collect()
        };
        let pos = index(&bags.positives, &used_pos);
        let neg = index(&bags.negatives, &used_neg);
        Ok(Problem {
            g,
            members,
            nbrs,
            frontier,
            pos,
            neg,
            pairs: sample.pairs.clone(),
            aggregation,
        })
    }

    pub fn frontier(&self) -> &[NodeId] {
        &self.frontier
    }

    pub fn feature_dim(&self) -> usize {
        self.g.feature_dim()
    }

    /// Loss only.
    pub fn loss(&self, theta: &[f64], logits: &[f64]) -> f64 {
        self.eval(theta, logits, false).loss
    }

    pub fn loss_grad(&self, theta: &[f64], logits: &[f64]) -> LossGrad {
        self.eval(theta, logits, true)
    }

    fn eval(&self, theta: &[f64], logits: &[f64], want_grad: bool) -> LossGrad {
        let w: Vec<f64> = logits.iter().map(|l| logistic(*l)).collect();
        let m = self.members.len();
        let mut proj = vec![0.0; m];
        let mut agg = vec![1.0; m];
        let mut arg = vec![u32::MAX; m];
        for i in 0..m {
            proj[i] = dot(theta, self.g.features(self.members[i]));
            let nb = &self.nbrs[i];
            if nb.is_empty() {
                continue;
            }
            match self.aggregation {
                Aggregation::Sum => agg[i] = nb.iter().map(|&u| w[u as usize]).sum(),
                Aggregation::Max => {
                    let mut best = nb[0];
                    for &u in &nb[1..] {
                        if w[u as usize] > w[best as usize] {
                            best = u;
                        }
                    }
                    agg[i] = w[best as usize];
                    arg[i] = best;
                }
            }
        }
        let bag_value = |b: &[(u32, f64)]| -> f64 {
            b.iter()
                .map(|&(k, a)| a * proj[k as usize] * agg[k as usize])
                .sum()
        };
        let fp: Vec<f64> = self.pos.iter().map(|b| bag_value(b)).collect();
        let fneg: Vec<f64> = self.neg.iter().map(|b| bag_value(b)).collect();
        let n = self.pairs.len() as f64;
        let mut loss = 0.0;
        let mut dfp = vec![0.0; fp.len()];
        let mut dfn = vec![0.0; fneg.len()];
        for &(i, j) in &self.pairs {
            let s = logistic(fneg[j as usize] - fp[i as usize]);
            loss += s;
            if want_grad {
                let d = s * (1.0 - s) / n;
                dfn[j as usize] += d;
                dfp[i as usize] -= d;
            }
        }
        loss /= n;
        if !want_grad {
            return LossGrad {
                loss,
                theta: Vec::new(),
                logits: Vec::new(),
            };
        }
        // dL/df for each distinct member.
        let mut dfm = vec![0.0; m];
        for (bags, d) in [(&self.pos, &dfp), (&self.neg, &dfn)] {
            for (b, &db) in bags.iter().zip(d.iter()) {
                if db == 0.0 {
                    continue;
                }
                for &(k, a) in b {
                    dfm[k as usize] += a * db;
                }
            }
        }
        let mut gtheta = vec![0.0; theta.len()];
        let mut gw = vec![0.0; w.len()];
        for i in 0..m {
            if dfm[i] == 0.0 {
                continue;
            }
            let c = dfm[i] * agg[i];
            for (gt, x) in gtheta.iter_mut().zip(self.g.features(self.members[i])) {
                *gt += c * x;
            }
            if self.nbrs[i].is_empty() {
                continue;
            }
            let dagg = dfm[i] * proj[i];
            match self.aggregation {
                Aggregation::Sum => {
                    for &u in &self.nbrs[i] {
                        gw[u as usize] += dagg;
                    }
                }
                Aggregation::Max => gw[arg[i] as usize] += dagg,
            }
        }
        let glogits = gw
            .iter()
            .zip(&w)
            .map(|(g, wu)| g * wu * (1.0 - wu))
            .collect();
        LossGrad {
            loss,
            theta: gtheta,
            logits: glogits,
        }
    }
}

fn uniform_vec(rng: &mut rng::Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn finite_or_err(loss: f64, r: RelationId, stage: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numerical(format!(
            "non-finite scoring loss for relation {} during {stage}",
            r.0
        )))
    }
}

/// Minimises the pairwise loss for relation `r`. Deterministic given the
/// inputs and `seed`.
///
/// The baseline is the mean loss of `opt.baseline_draws` random parameter
/// draws. Those draws also count as candidate points, so the reported loss
/// never exceeds the baseline.
pub fn score_relation(
    g: &HeteroGraph,
    bags: &BagSets,
    r: RelationId,
    sample: &PairSample,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<ScoredRelation> {
    let problem = Problem::new(g, bags, r, sample, opt.aggregation)?;
    let d = g.feature_dim();
    let nf = problem.frontier.len();

    let mut best_loss = f64::INFINITY;
    let mut best_theta = vec![0.0; d];
    let mut best_logits = vec![0.0; nf];

    let mut baseline = 0.0;
    for k in 0..opt.baseline_draws {
        let mut rng = rng::derived(seed, &[1, k as u64]);
        let theta = uniform_vec(&mut rng, d, -0.1, 0.1);
        let logits = uniform_vec(&mut rng, nf, -1.0, 1.0);
        let loss = finite_or_err(problem.loss(&theta, &logits), r, "baseline")?;
        baseline += loss;
        if loss < best_loss {
            best_loss = loss;
            best_theta = theta;
            best_logits = logits;
        }
    }
    if opt.baseline_draws > 0 {
        baseline /= opt.baseline_draws as f64;
    } else {
        baseline = f64::NAN;
    }

    let mut params = vec![0.0; d + nf];
    for restart in 0..opt.restarts {
        let mut rng = rng::derived(seed, &[2, restart as u64]);
        params[..d].copy_from_slice(&uniform_vec(&mut rng, d, -0.1, 0.1));
        params[d..].iter_mut().for_each(|x| *x = 0.0);
        let mut adam = Adam::new(d + nf, opt.learning_rate);
        let mut grad = vec![0.0; d + nf];
        for it in 0..=opt.iterations {
            let lg = problem.loss_grad(&params[..d], &params[d..]);
            let loss = finite_or_err(lg.loss, r, "optimisation")?;
            if loss < best_loss {
                best_loss = loss;
                best_theta.copy_from_slice(&params[..d]);
                best_logits.copy_from_slice(&params[d..]);
            }
            if it == opt.iterations {
                break;
            }
            grad[..d].copy_from_slice(&lg.theta);
            grad[d..].copy_from_slice(&lg.logits);
            if grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite scoring gradient for relation {}",
                    r.0
                )));
            }
            adam.step(&mut params, &grad);
        }
    }
    if !best_loss.is_finite() {
        return Err(Error::usage(
            "scoring needs at least one restart or baseline draw",
        ));
    }
    if baseline.is_nan() {
        baseline = best_loss;
    }
    Ok(ScoredRelation {
        relation: r,
        loss: best_loss,
        baseline_loss: baseline,
        params: ScoringParams {
            theta: best_theta,
            frontier: problem.frontier,
            w_logits: best_logits,
            aggregation: opt.aggregation,
        },
    })
}

/// Moves every bag one step along the chosen relation:
/// `B' = ∪_{v∈B} N_r(v)` with `α(u,B') = Σ_{v∈B, u∈N_r(v)} Θᵀx_v α(v,B)`.
/// Bags with no successors are dropped.
pub fn propagate_bags(g: &HeteroGraph, bags: &BagSets, chosen: &ScoredRelation) -> Result<BagSets> {
    let r = chosen.relation;
    g.check_relation(r)?;
    let step = |b: &Bag| -> Option<Bag> {
        let mut acc: std::collections::BTreeMap<NodeId, f64> = std::collections::BTreeMap::new();
        for (&v, &a) in b.members.iter().zip(&b.alpha) {
            let nbrs = g.out(v, r);
            if nbrs.is_empty() {
                continue;
            }
            let c = dot(&chosen.params.theta, g.features(v)) * a;
            for &u in nbrs {
                *acc.entry(u).or_insert(0.0) += c;
            }
        }
        if acc.is_empty() {
            return None;
        }
        let (members, alpha) = acc.into_iter().unzip();
        Some(Bag {
            origin: b.origin,
            members,
            alpha,
        })
    };
    let positives: Vec<Bag> = bags.positives.iter().filter_map(step).collect();
    let negatives: Vec<Bag> = bags.negatives.iter().filter_map(step).collect();
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::DeadEnd(g.relation_name(r).to_string()));
    }
    Ok(BagSets {
        positives,
        negatives,
        iteration: bags.iteration + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::random_graph;

    fn random_bags(g: &HeteroGraph, seed: u64, np: usize, nn: usize) -> BagSets {
        let mut rng = rng::rng(seed);
        let n = g.num_nodes() as u32;
        let mut mk = |origin: u32| {
            let k = rng.gen_range(1..4);
            let mut members: Vec<NodeId> = (0..k).map(|_| NodeId(rng.gen_range(0..n))).collect();
            members.sort_unstable();
            members.dedup();
            let alpha = members.iter().map(|_| rng.gen_range(-1.5..1.5)).collect();
            Bag {
                origin: NodeId(origin),
                members,
                alpha,
            }
        };
        BagSets {
            positives: (0..np as u32).map(&mut mk).collect(),
            negatives: (np as u32..(np + nn) as u32).map(&mut mk).collect(),
            iteration: 1,
        }
    }

    fn random_params(g: &HeteroGraph, bags: &BagSets, r: RelationId, seed: u64, agg: Aggregation) -> ScoringParams {
        let mut rng = rng::rng(seed);
        let frontier = frontier(g, bags, r);
        ScoringParams {
            theta: uniform_vec(&mut rng, g.feature_dim(), -1.0, 1.0),
            w_logits: uniform_vec(&mut rng, frontier.len(), -2.0, 2.0),
            frontier,
            aggregation: agg,
        }
    }

    /// Direct scalar evaluation of `f`, independent of the indexed problem.
    fn scalar_feature(g: &HeteroGraph, v: NodeId, r: RelationId, p: &ScoringParams) -> f64 {
        let x = g.features(v);
        let mut base = 0.0;
        for i in 0..x.len() {
            base += p.theta[i] * x[i];
        }
        let mut s = 0.0;
        let mut any = false;
        for e in g.edges() {
            if e.src == v && e.rel == r {
                any = true;
                let idx = p.frontier.iter().position(|f| *f == e.dst).unwrap();
                s += 1.0 / (1.0 + (-p.w_logits[idx]).exp());
            }
        }
        if any {
            base * s
        } else {
            base
        }
    }

    #[test]
    fn empty_neighbourhood_uses_projection_only() {
        let mut b = crate::GraphBuilder::new(["t"], ["r"], 2).unwrap();
        let v = b.add_typed_node(crate::TypeId(0), &[0.3]).unwrap();
        let g = b.build();
        let p = ScoringParams {
            theta: vec![0.4, 1.0],
            frontier: vec![],
            w_logits: vec![],
            aggregation: Aggregation::Sum,
        };
        assert!((node_feature(&g, v, RelationId(0), &p) - 0.7).abs() < 1e-15);
        let bag = Bag::singleton(v);
        assert_eq!(discriminant(&g, &bag, RelationId(0), &p), node_feature(&g, v, RelationId(0), &p));
    }

    #[test]
    fn node_feature_matches_scalar_oracle() {
        let (g, _) = random_graph(21, 10, 2, 25);
        let bags = random_bags(&g, 4, 3, 3);
        let all = BagSets {
            positives: g.nodes().map(Bag::singleton).collect(),
            negatives: bags.negatives.clone(),
            iteration: 0,
        };
        for r in g.relations() {
            let p = random_params(&g, &all, r, 8, Aggregation::Sum);
            for v in g.nodes() {
                let a = node_feature(&g, v, r, &p);
                let b = scalar_feature(&g, v, r, &p);
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn exhaustive_pairs_match_hand_sum() {
        let (g, _) = random_graph(5, 30, 2, 90);
        let bags = random_bags(&g, 6, 3, 3);
        let r = RelationId(1);
        let p = random_params(&g, &bags, r, 7, Aggregation::Sum);
        let mut total = 0.0;
        for bp in &bags.positives {
            for bn in &bags.negatives {
                let fp: f64 = bp.members.iter().zip(&bp.alpha).map(|(v, a)| a * scalar_feature(&g, *v, r, &p)).sum();
                let fneg: f64 = bn.members.iter().zip(&bn.alpha).map(|(v, a)| a * scalar_feature(&g, *v, r, &p)).sum();
                total += 1.0 / (1.0 + (fp - fneg).exp());
            }
        }
        let expected = total / 9.0;
        let sample = PairSample::all(3, 3);
        let got = pairwise_loss(&g, &bags, r, &p, &sample).unwrap();
        assert!((got - expected).abs() < 1e-12);
        let problem = Problem::new(&g, &bags, r, &sample, Aggregation::Sum).unwrap();
        assert!((problem.loss(&p.theta, &p.w_logits) - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_bags_give_one_half() {
        let (g, _) = random_graph(8, 20, 2, 50);
        let bags = random_bags(&g, 1, 4, 0);
        let mirrored = BagSets {
            negatives: bags.positives.clone(),
            ..bags.clone()
        };
        let sample = PairSample { pairs: (0..4).map(|i| (i, i)).collect() };
        for seed in 0..5 {
            let p = random_params(&g, &mirrored, RelationId(0), seed, Aggregation::Sum);
            let loss = pairwise_loss(&g, &mirrored, RelationId(0), &p, &sample).unwrap();
            assert_eq!(loss, 0.5);
        }
    }

    #[test]
    fn constant_parameters_reduce_to_alpha_sum() {
        // Θ on the type indicator only and equal weights: F = const · Σα per
        // type-homogeneous bag.
        let mut b = crate::GraphBuilder::new(["t", "u"], ["r"], 4).unwrap();
        let vs: Vec<NodeId> = (0..6).map(|i| b.add_typed_node(crate::TypeId(0), &[i as f64, 1.0]).unwrap()).collect();
        let us: Vec<NodeId> = (0..3).map(|_| b.add_typed_node(crate::TypeId(1), &[]).unwrap()).collect();
        for (i, v) in vs.iter().enumerate() {
            for u in &us[..(i % 3) + 1] {
                b.add_edge(*v, RelationId(0), *u).unwrap();
            }
        }
        let g = b.build();
        let bag = Bag {
            origin: vs[0],
            members: vs[..3].to_vec(),
            alpha: vec![0.5, -1.0, 2.0],
        };
        let p = ScoringParams {
            theta: vec![0.8, 0.0, 0.0, 0.0],
            frontier: us.clone(),
            w_logits: vec![-3.0; 3],
            aggregation: Aggregation::Max,
        };
        let w = logistic(-3.0);
        let expected = 0.8 * w * (0.5 - 1.0 + 2.0);
        assert!((discriminant(&g, &bag, RelationId(0), &p) - expected).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for inst in 0..24u64 {
            let (g, _) = random_graph(100 + inst, 25, 2, 70);
            let bags = random_bags(&g, 200 + inst, 4, 3);
            let r = RelationId((inst % 2) as u16);
            let sample = PairSample::all(4, 3);
            let agg = if inst % 3 == 0 { Aggregation::Max } else { Aggregation::Sum };
            let problem = Problem::new(&g, &bags, r, &sample, agg).unwrap();
            let p = random_params(&g, &bags, r, 300 + inst, agg);
            let lg = problem.loss_grad(&p.theta, &p.w_logits);
            let h = 1e-5;
            let check = |analytic: f64, plus: f64, minus: f64| {
                let numeric = (plus - minus) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / denom <= 1e-4 || (analytic - numeric).abs() < 1e-10,
                    "instance {inst}: analytic {analytic} numeric {numeric}"
                );
            };
            for i in 0..p.theta.len() {
                let mut tp = p.theta.clone();
                tp[i] += h;
                let mut tm = p.theta.clone();
                tm[i] -= h;
                check(lg.theta[i], problem.loss(&tp, &p.w_logits), problem.loss(&tm, &p.w_logits));
            }
            for i in 0..p.w_logits.len() {
                let mut lp = p.w_logits.clone();
                lp[i] += h;
                let mut lm = p.w_logits.clone();
                lm[i] -= h;
                check(lg.logits[i], problem.loss(&p.theta, &lp), problem.loss(&p.theta, &lm));
            }
        }
    }

    #[test]
    fn propagation_matches_double_loop() {
        for inst in 0..20u64 {
            let (g, raw) = random_graph(400 + inst, 30, 3, 100);
            let bags = random_bags(&g, 500 + inst, 2, 2);
            let r = RelationId((inst % 3) as u16);
            let params = random_params(&g, &bags, r, 600 + inst, Aggregation::Sum);
            let chosen = ScoredRelation { relation: r, loss: 0.0, baseline_loss: 0.5, params };
            let out = match propagate_bags(&g, &bags, &chosen) {
                Ok(o) => o,
                Err(Error::DeadEnd(_)) => {
                    assert!(frontier(&g, &bags, r).is_empty());
                    continue;
                }
                Err(e) => panic!("{e}"),
            };
            let mut edges: Vec<_> = raw.iter().filter(|e| e.rel == r).map(|e| (e.src, e.dst)).collect();
            edges.sort();
            edges.dedup();
            let all_old: Vec<&Bag> = bags.positives.iter().chain(&bags.negatives).collect();
            let all_new: Vec<&Bag> = out.positives.iter().chain(&out.negatives).collect();
            let mut k = 0;
            for old in all_old {
                let mut expected: Vec<(NodeId, f64)> = Vec::new();
                for u in g.nodes() {
                    let mut a = 0.0;
                    let mut hit = false;
                    for (v, av) in old.members.iter().zip(&old.alpha) {
                        if edges.contains(&(*v, u)) {
                            hit = true;
                            let proj: f64 = chosen.params.theta.iter().zip(g.features(*v)).map(|(t, x)| t * x).sum();
                            a += proj * av;
                        }
                    }
                    if hit {
                        expected.push((u, a));
                    }
                }
                if expected.is_empty() {
                    continue;
                }
                let new = all_new[k];
                k += 1;
                assert_eq!(new.origin, old.origin);
                assert_eq!(new.members, expected.iter().map(|e| e.0).collect::<Vec<_>>());
                for (got, want) in new.alpha.iter().zip(&expected) {
                    assert!((got - want.1).abs() < 1e-12);
                }
            }
            assert_eq!(k, all_new.len());
        }
    }

    #[test]
    fn scoring_is_deterministic_and_bounded_by_baseline() {
        let (g, _) = random_graph(77, 40, 3, 120);
        let bags = random_bags(&g, 78, 5, 5);
        let sample = PairSample::all(5, 5);
        let opt = OptimizerConfig { iterations: 60, ..Default::default() };
        for r in g.relations() {
            let a = score_relation(&g, &bags, r, &sample, &opt, 42).unwrap();
            let b = score_relation(&g, &bags, r, &sample, &opt, 42).unwrap();
            assert_eq!(a, b);
            assert!(a.loss <= a.baseline_loss);
            assert!(a.params.weights().iter().all(|w| (0.0..=1.0).contains(w)));
        }
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        let (g, _) = random_graph(3, 10, 1, 10);
        let bags = BagSets::singletons(&[NodeId(0)], &[]);
        let r = score_relation(&g, &bags, RelationId(0), &PairSample::all(1, 0), &OptimizerConfig::default(), 0);
        assert!(matches!(r, Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn pair_draw_is_capped_and_distinct() {
        let mut rng = rng::rng(3);
        let s = PairSample::draw(40, 30, 500, &mut rng);
        assert_eq!(s.len(), 500);
        let set: std::collections::BTreeSet<_> = s.pairs.iter().collect();
        assert_eq!(set.len(), 500);
        assert_eq!(PairSample::draw(10, 20, 500, &mut rng).len(), 200);
    }
}
