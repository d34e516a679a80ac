//! Meta-path-structured GNN.
//!
//! For a meta-path `r1 .. rL` a target's embedding is computed on the
//! unrolled occurrence tree only: a node at depth `d` has completed the
//! prefix `r1 .. rd` from some target and can still complete `r{d+1} .. rL`.
//! Layer `l` (0-based) processes depth `d = L-1-l` and consumes relation
//! `r{d+1}`:
//!
//! ```text
//! e_L(v) = x_v
//! e_d(v) = σ(g_l(v) W0_l + Σ_{u ∈ N'(v)} e_{d+1}(u) Wn_l + x_v W1_l)
//! ```
//!
//! where `N'(v)` keeps only neighbours that complete the suffix and `g_l(v)`
//! is the node's own state after `l` layers with no incoming messages
//! (`g_0 = x`, `g_{j+1} = σ(g_j W0_j + x W1_j)`). Nothing outside the
//! meta-path induced subgraph enters a target's embedding. Embeddings of
//! several meta-paths are concatenated before a linear two-class readout.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::dense::{logistic, Mat};
use crate::error::{Error, Result};
use crate::fixtures::Labels;
use crate::graph::{completion_sets, HeteroGraph, MetaPath, NodeId};
use crate::rng;
use crate::scoring::Aggregation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Logistic,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Logistic => logistic(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the output `y`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Logistic => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Logistic => "logistic",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Feed raw features into every layer. Disabling it forces `W1 = 0`.
    pub skip: bool,
    pub activation: Activation,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 32,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 50,
            train_fraction: 0.7,
            val_fraction: 0.2,
            skip: true,
            activation: Activation::Logistic,
            aggregation: Aggregation::Sum,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w0: Mat,
    pub wn: Mat,
    pub w1: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    pub path: MetaPath,
    /// `layers[l]` handles depth `L-1-l`.
    pub layers: Vec<Layer>,
}

impl Tower {
    fn out_dim(&self, feature_dim: usize, hidden: usize) -> usize {
        if self.layers.is_empty() {
            feature_dim
        } else {
            hidden
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpsGnnModel {
    pub feature_dim: usize,
    pub hidden: usize,
    pub skip: bool,
    pub activation: Activation,
    pub aggregation: Aggregation,
    pub towers: Vec<Tower>,
    /// `(Σ tower dims) × 2`.
    pub readout: Mat,
    /// `1 × 2`.
    pub bias: Mat,
}

fn xavier(rng: &mut rng::Rng, rows: usize, cols: usize) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
}

impl MpsGnnModel {
    /// Fresh model with seeded Xavier-uniform weights and zero biases.
    pub fn new(feature_dim: usize, mps: &[MetaPath], cfg: &TrainConfig) -> Self {
        let h = cfg.hidden;
        let towers: Vec<Tower> = mps
            .iter()
            .enumerate()
            .map(|(k, mp)| {
                let layers = (0..mp.len())
                    .map(|l| {
                        let din = if l == 0 { feature_dim } else { h };
                        let r = |which: u64| rng::derived(cfg.seed, &[0x6e6e, k as u64, l as u64, which]);
                        Layer {
                            w0: xavier(&mut r(0), din, h),
                            wn: xavier(&mut r(1), din, h),
                            w1: if cfg.skip {
                                xavier(&mut r(2), feature_dim, h)
                            } else {
                                Mat::zeros(feature_dim, h)
                            },
                        }
                    })
                    .collect();
                Tower {
                    path: mp.clone(),
                    layers,
                }
            })
            .collect();
        let total: usize = towers.iter().map(|t| t.out_dim(feature_dim, h)).sum();
        MpsGnnModel {
            feature_dim,
            hidden: h,
            skip: cfg.skip,
            activation: cfg.activation,
            aggregation: cfg.aggregation,
            towers,
            readout: xavier(&mut rng::derived(cfg.seed, &[0x7e7e]), total, 2),
            bias: Mat::zeros(1, 2),
        }
    }

    pub fn paths(&self) -> Vec<MetaPath> {
        self.towers.iter().map(|t| t.path.clone()).collect()
    }

    fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        MpsGnnModel {
            towers: self
                .towers
                .iter()
                .map(|t| Tower {
                    path: t.path.clone(),
                    layers: t
                        .layers
                        .iter()
                        .map(|l| Layer {
                            w0: z(&l.w0),
                            wn: z(&l.wn),
                            w1: z(&l.w1),
                        })
                        .collect(),
                })
                .collect(),
            readout: z(&self.readout),
            bias: z(&self.bias),
            ..self.clone()
        }
    }

    /// Every trainable matrix in a fixed order. `W1` is left out when the
    /// skip connection is disabled.
    fn matrices_mut(&mut self) -> Vec<&mut Mat> {
        let skip = self.skip;
        let mut out = Vec::new();
        for t in &mut self.towers {
            for l in &mut t.layers {
                out.push(&mut l.w0);
                out.push(&mut l.wn);
                if skip {
                    out.push(&mut l.w1);
                }
            }
        }
        out.push(&mut self.readout);
        out.push(&mut self.bias);
        out
    }

    fn matrices(&self) -> Vec<&Mat> {
        let mut out = Vec::new();
        for t in &self.towers {
            for l in &t.layers {
                out.push(&l.w0);
                out.push(&l.wn);
                if self.skip {
                    out.push(&l.w1);
                }
            }
        }
        out.push(&self.readout);
        out.push(&self.bias);
        out
    }

    /// All trainable entries, flattened in a fixed order.
    pub fn params(&self) -> Vec<f64> {
        self.matrices().iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let n: usize = self.matrices().iter().map(|m| m.data().len()).sum();
        if p.len() != n {
            return Err(Error::usage(format!("expected {n} parameters, got {}", p.len())));
        }
        let mut off = 0;
        for m in self.matrices_mut() {
            let k = m.data().len();
            m.data_mut().copy_from_slice(&p[off..off + k]);
            off += k;
        }
        Ok(())
    }

    /// Mean negative log-likelihood of `gold` over `targets` and its
    /// gradient in [`params`](Self::params) order, weight decay excluded.
    pub fn loss_grad(
        &self,
        g: &HeteroGraph,
        targets: &[NodeId],
        gold: &[bool],
    ) -> Result<(f64, Vec<f64>)> {
        let mps = self.paths();
        self.check(g, &mps)?;
        if gold.len() != targets.len() {
            return Err(Error::usage("one label per target is required"));
        }
        for t in targets {
            g.check_node(*t)?;
        }
        let plan = Plan::new(g, &mps, targets)?;
        let fwd = self.run(&plan);
        let rows: Vec<usize> = (0..targets.len()).collect();
        let (loss, grad) = self.backward(&plan, &fwd, &rows, gold);
        Ok((loss, grad.params()))
    }

    fn check(&self, g: &HeteroGraph, mps: &[MetaPath]) -> Result<()> {
        if g.feature_dim() != self.feature_dim {
            return Err(Error::usage(format!(
                "model expects feature dimension {}, graph has {}",
                self.feature_dim,
                g.feature_dim()
            )));
        }
        if mps.len() != self.towers.len()
            || mps.iter().zip(&self.towers).any(|(m, t)| m.len() != t.layers.len())
        {
            return Err(Error::usage("meta-paths do not match the model's towers"));
        }
        for mp in mps {
            for r in mp.relations() {
                g.check_relation(*r)?;
            }
        }
        Ok(())
    }

    /// Class probabilities `[p(negative), p(positive)]` per target.
    pub fn forward(&self, g: &HeteroGraph, mps: &[MetaPath], targets: &[NodeId]) -> Result<Vec<[f64; 2]>> {
        self.check(g, mps)?;
        for t in targets {
            g.check_node(*t)?;
        }
        let plan = Plan::new(g, mps, targets)?;
        let fwd = self.run(&plan);
        Ok(fwd.probs)
    }

    /// Probabilities on the model's own meta-paths.
    pub fn predict(&self, g: &HeteroGraph, targets: &[NodeId]) -> Result<Vec<[f64; 2]>> {
        self.forward(g, &self.paths(), targets)
    }

    fn run(&self, plan: &Plan) -> Forward {
        let act = self.activation;
        let mut towers = Vec::with_capacity(self.towers.len());
        let mut z_blocks: Vec<Mat> = Vec::new();
        for (tower, tp) in self.towers.iter().zip(&plan.towers) {
            let big_l = tower.layers.len();
            let mut depths: Vec<DepthCache> = Vec::with_capacity(big_l);
            // e_{d+1}, starting from e_L = x.
            let mut below = tp.features[big_l].clone();
            for d in (0..big_l).rev() {
                let l = big_l - 1 - d;
                let x = &tp.features[d];
                let mut chain = vec![x.clone()];
                for j in 0..l {
                    let lay = &tower.layers[j];
                    let mut pre = chain[j].matmul(&lay.w0);
                    if self.skip {
                        pre.add_assign(&x.matmul(&lay.w1));
                    }
                    chain.push(pre.map(|v| act.apply(v)));
                }
                let (agg, argmax) = aggregate(&below, &tp.nbrs[d], self.aggregation);
                let lay = &tower.layers[l];
                let mut pre = chain[l].matmul(&lay.w0);
                pre.add_assign(&agg.matmul(&lay.wn));
                if self.skip {
                    pre.add_assign(&x.matmul(&lay.w1));
                }
                let e = pre.map(|v| act.apply(v));
                depths.push(DepthCache {
                    chain,
                    agg,
                    argmax,
                    out: e.clone(),
                });
                below = e;
            }
            depths.reverse();
            z_blocks.push(below.gather_rows(&tp.target_rows));
            towers.push(depths);
        }
        let n = plan.targets.len();
        let total: usize = z_blocks.iter().map(|b| b.cols()).sum();
        let mut z = Mat::zeros(n, total);
        for i in 0..n {
            let mut off = 0;
            for blk in &z_blocks {
                z.row_mut(i)[off..off + blk.cols()].copy_from_slice(blk.row(i));
                off += blk.cols();
            }
        }
        let mut logits = z.matmul(&self.readout);
        for i in 0..n {
            for c in 0..2 {
                let v = logits.get(i, c) + self.bias.get(0, c);
                logits.set(i, c, v);
            }
        }
        let probs = (0..n)
            .map(|i| {
                let (a, b) = (logits.get(i, 0), logits.get(i, 1));
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                [ea / (ea + eb), eb / (ea + eb)]
            })
            .collect();
        Forward { towers, z, probs }
    }

    /// Mean negative log-likelihood over `rows` (indices into the plan's
    /// targets) and its gradient, weight decay excluded.
    fn backward(&self, plan: &Plan, fwd: &Forward, rows: &[usize], gold: &[bool]) -> (f64, MpsGnnModel) {
        let act = self.activation;
        let n = rows.len().max(1) as f64;
        let mut grad = self.zeros_like();
        let mut dlogits = Mat::zeros(plan.targets.len(), 2);
        let mut loss = 0.0;
        for &i in rows {
            let y = gold[i] as usize;
            let p = fwd.probs[i];
            loss -= p[y].max(1e-300).ln();
            for c in 0..2 {
                let t = if c == y { 1.0 } else { 0.0 };
                dlogits.set(i, c, (p[c] - t) / n);
            }
        }
        loss /= n;
        grad.readout = fwd.z.t_matmul(&dlogits);
        for i in 0..plan.targets.len() {
            for c in 0..2 {
                let v = grad.bias.get(0, c) + dlogits.get(i, c);
                grad.bias.set(0, c, v);
            }
        }
        let dz = dlogits.matmul_t(&self.readout);
        let mut off = 0;
        for (k, (tower, tp)) in self.towers.iter().zip(&plan.towers).enumerate() {
            let big_l = tower.layers.len();
            let width = tower.out_dim(self.feature_dim, self.hidden);
            if big_l == 0 {
                off += width;
                continue;
            }
            let cache = &fwd.towers[k];
            // dE_0 scattered from the target rows.
            let mut de = Mat::zeros(cache[0].out.rows(), width);
            for (i, &row) in tp.target_rows.iter().enumerate() {
                let src = &dz.row(i)[off..off + width];
                for (a, b) in de.row_mut(row).iter_mut().zip(src) {
                    *a += b;
                }
            }
            off += width;
            for d in 0..big_l {
                let l = big_l - 1 - d;
                let c = &cache[d];
                let lay = &tower.layers[l];
                let x = &tp.features[d];
                let mut dpre = de.clone();
                for (g, y) in dpre.data_mut().iter_mut().zip(c.out.data()) {
                    *g *= act.grad_from_output(*y);
                }
                let gl = &mut grad.towers[k].layers[l];
                gl.w0.add_assign(&c.chain[l].t_matmul(&dpre));
                gl.wn.add_assign(&c.agg.t_matmul(&dpre));
                if self.skip {
                    gl.w1.add_assign(&x.t_matmul(&dpre));
                }
                // Messages back to depth d+1.
                if d + 1 < big_l {
                    let da = dpre.matmul_t(&lay.wn);
                    let below_rows = cache[d + 1].out.rows();
                    let mut de_below = Mat::zeros(below_rows, da.cols());
                    scatter(&da, &tp.nbrs[d], &c.argmax, self.aggregation, &mut de_below);
                    de = de_below;
                }
                // Own-state chain.
                let mut dg = dpre.matmul_t(&lay.w0);
                for j in (0..l).rev() {
                    let lj = &tower.layers[j];
                    let mut dp = dg;
                    for (g, y) in dp.data_mut().iter_mut().zip(c.chain[j + 1].data()) {
                        *g *= act.grad_from_output(*y);
                    }
                    let gj = &mut grad.towers[k].layers[j];
                    gj.w0.add_assign(&c.chain[j].t_matmul(&dp));
                    if self.skip {
                        gj.w1.add_assign(&x.t_matmul(&dp));
                    }
                    dg = dp.matmul_t(&lj.w0);
                }
            }
        }
        (loss, grad)
    }

    /// Text checkpoint: a header, tower meta-paths by relation name, then
    /// every matrix as `name rows cols` followed by row-major values.
    pub fn to_text(&self, g: &HeteroGraph) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mpsgnn-model 1");
        let _ = writeln!(s, "feature_dim {}", self.feature_dim);
        let _ = writeln!(s, "hidden {}", self.hidden);
        let _ = writeln!(s, "skip {}", self.skip);
        let _ = writeln!(s, "activation {}", self.activation.name());
        let agg = match self.aggregation {
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
        };
        let _ = writeln!(s, "aggregation {agg}");
        let _ = writeln!(s, "towers {}", self.towers.len());
        for t in &self.towers {
            let names = t.path.names(g);
            let _ = writeln!(s, "path {} {}", names.len(), names.join(" "));
        }
        let mut put = |name: String, m: &Mat| {
            let _ = writeln!(s, "{name} {} {}", m.rows(), m.cols());
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        };
        for (k, t) in self.towers.iter().enumerate() {
            for (l, lay) in t.layers.iter().enumerate() {
                put(format!("w0 {k} {l}"), &lay.w0);
                put(format!("wn {k} {l}"), &lay.wn);
                put(format!("w1 {k} {l}"), &lay.w1);
            }
        }
        put("readout".into(), &self.readout);
        put("bias".into(), &self.bias);
        s
    }

    pub fn from_text(text: &str, g: &HeteroGraph) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |what: &str| Error::data(format!("malformed model checkpoint: {what}"));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(what)).map(str::to_owned);
        let field = |line: String, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(key))
        };
        if next("header")?.trim() != "mpsgnn-model 1" {
            return Err(bad("header"));
        }
        let parse_usize = |s: String, what: &str| s.parse::<usize>().map_err(|_| bad(what));
        let feature_dim = parse_usize(field(next("feature_dim")?, "feature_dim")?, "feature_dim")?;
        let hidden = parse_usize(field(next("hidden")?, "hidden")?, "hidden")?;
        let skip = match field(next("skip")?, "skip")?.as_str() {
            "true" => true,
            "false" => false,
            _ => return Err(bad("skip")),
        };
        let activation = match field(next("activation")?, "activation")?.as_str() {
            "logistic" => Activation::Logistic,
            "relu" => Activation::Relu,
            _ => return Err(bad("activation")),
        };
        let aggregation = match field(next("aggregation")?, "aggregation")?.as_str() {
            "sum" => Aggregation::Sum,
            "max" => Aggregation::Max,
            _ => return Err(bad("aggregation")),
        };
        let k = parse_usize(field(next("towers")?, "towers")?, "towers")?;
        let mut paths = Vec::with_capacity(k);
        for _ in 0..k {
            let line = field(next("path")?, "path")?;
            let mut parts = line.split_whitespace();
            let n = parse_usize(parts.next().unwrap_or("").to_string(), "path length")?;
            let names: Vec<&str> = parts.collect();
            if names.len() != n {
                return Err(bad("path length"));
            }
            paths.push(MetaPath::from_names(g, &names)?);
        }
        let mut read_mat = |name: &str| -> Result<Mat> {
            let head = next(name)?;
            let mut parts = head.split_whitespace();
            let tag = parts.next().unwrap_or("");
            if tag != name.split_whitespace().next().unwrap_or("") {
                return Err(bad(name));
            }
            let dims: Vec<usize> = parts
                .collect::<Vec<_>>()
                .iter()
                .rev()
                .take(2)
                .rev()
                .map(|s| s.parse::<usize>().map_err(|_| bad(name)))
                .collect::<Result<_>>()?;
            let (rows, cols) = (dims[0], dims[1]);
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = next(name)?;
                for v in row.split_whitespace() {
                    data.push(v.parse::<f64>().map_err(|_| bad(name))?);
                }
            }
            if data.len() != rows * cols {
                return Err(bad(name));
            }
            Ok(Mat::from_vec(rows, cols, data))
        };
        let mut towers = Vec::with_capacity(k);
        for path in paths {
            let mut layers = Vec::with_capacity(path.len());
            for _ in 0..path.len() {
                layers.push(Layer {
                    w0: read_mat("w0")?,
                    wn: read_mat("wn")?,
                    w1: read_mat("w1")?,
                });
            }
            towers.push(Tower { path, layers });
        }
        let readout = read_mat("readout")?;
        let bias = read_mat("bias")?;
        let model = MpsGnnModel {
            feature_dim,
            hidden,
            skip,
            activation,
            aggregation,
            towers,
            readout,
            bias,
        };
        model.check(g, &model.paths())?;
        Ok(model)
    }
}

fn aggregate(below: &Mat, nbrs: &[Vec<u32>], agg: Aggregation) -> (Mat, Vec<u32>) {
    let cols = below.cols();
    let mut out = Mat::zeros(nbrs.len(), cols);
    let mut argmax = Vec::new();
    match agg {
        Aggregation::Sum => {
            for (i, nb) in nbrs.iter().enumerate() {
                let row = out.row_mut(i);
                for &u in nb {
                    for (a, b) in row.iter_mut().zip(below.row(u as usize)) {
                        *a += b;
                    }
                }
            }
        }
        Aggregation::Max => {
            argmax = vec![u32::MAX; nbrs.len() * cols];
            for (i, nb) in nbrs.iter().enumerate() {
                if nb.is_empty() {
                    continue;
                }
                for c in 0..cols {
                    let mut best = nb[0];
                    for &u in &nb[1..] {
                        if below.get(u as usize, c) > below.get(best as usize, c) {
                            best = u;
                        }
                    }
                    out.set(i, c, below.get(best as usize, c));
                    argmax[i * cols + c] = best;
                }
            }
        }
    }
    (out, argmax)
}

fn scatter(da: &Mat, nbrs: &[Vec<u32>], argmax: &[u32], agg: Aggregation, into: &mut Mat) {
    let cols = da.cols();
    for (i, nb) in nbrs.iter().enumerate() {
        match agg {
            Aggregation::Sum => {
                for &u in nb {
                    let row = into.row_mut(u as usize);
                    for (a, b) in row.iter_mut().zip(da.row(i)) {
                        *a += b;
                    }
                }
            }
            Aggregation::Max => {
                if nb.is_empty() {
                    continue;
                }
                for c in 0..cols {
                    let u = argmax[i * cols + c] as usize;
                    let v = into.get(u, c) + da.get(i, c);
                    into.set(u, c, v);
                }
            }
        }
    }
}

struct DepthCache {
    /// `chain[j]` is the bare own-state `g_j` for the nodes at this depth.
    chain: Vec<Mat>,
    agg: Mat,
    argmax: Vec<u32>,
    out: Mat,
}

struct Forward {
    towers: Vec<Vec<DepthCache>>,
    z: Mat,
    probs: Vec<[f64; 2]>,
}

struct TowerPlan {
    /// `features[d]` holds `x` for the depth-`d` nodes, `d = 0..=L`.
    features: Vec<Mat>,
    /// `nbrs[d][i]` lists depth-`d+1` rows adjacent to depth-`d` row `i`.
    nbrs: Vec<Vec<Vec<u32>>>,
    /// Depth-0 row of each target.
    target_rows: Vec<usize>,
}

/// The unrolled computation structure for fixed graph, meta-paths and
/// targets.
struct Plan {
    targets: Vec<NodeId>,
    towers: Vec<TowerPlan>,
}

impl Plan {
    fn new(g: &HeteroGraph, mps: &[MetaPath], targets: &[NodeId]) -> Result<Self> {
        let mut towers = Vec::with_capacity(mps.len());
        let mut depth0: Vec<NodeId> = targets.to_vec();
        depth0.sort_unstable();
        depth0.dedup();
        let target_rows: Vec<usize> = targets
            .iter()
            .map(|t| depth0.binary_search(t).expect("target present"))
            .collect();
        for mp in mps {
            let complete = completion_sets(g, mp)?;
            let mut layers: Vec<Vec<NodeId>> = vec![depth0.clone()];
            let mut nbrs: Vec<Vec<Vec<u32>>> = Vec::with_capacity(mp.len());
            for (d, &r) in mp.relations().iter().enumerate() {
                let cur = &layers[d];
                let mut next: Vec<NodeId> = cur
                    .iter()
                    .flat_map(|&v| g.out(v, r).iter().copied())
                    .filter(|u| complete[d + 1][u.index()])
                    .collect();
                next.sort_unstable();
                next.dedup();
                let adj = cur
                    .iter()
                    .map(|&v| {
                        if d > 0 && !complete[d][v.index()] {
                            return Vec::new();
                        }
                        g.out(v, r)
                            .iter()
                            .filter(|u| complete[d + 1][u.index()])
                            .map(|u| next.binary_search(u).expect("in next layer") as u32)
                            .collect()
                    })
                    .collect();
                nbrs.push(adj);
                layers.push(next);
            }
            let d = g.feature_dim();
            let features = layers
                .iter()
                .map(|vs| {
                    let mut data = Vec::with_capacity(vs.len() * d);
                    for v in vs {
                        data.extend_from_slice(g.features(*v));
                    }
                    Mat::from_vec(vs.len(), d, data)
                })
                .collect();
            towers.push(TowerPlan {
                features,
                nbrs,
                target_rows: target_rows.clone(),
            });
        }
        Ok(Plan {
            targets: targets.to_vec(),
            towers,
        })
    }
}

/// F1 of the positive class; 0 when precision + recall is 0.
pub fn f1(pred: &[bool], gold: &[bool]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "prediction and gold lengths differ");
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn predicted_class(p: &[f64; 2]) -> bool {
    p[1] > p[0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

/// Minimum members per class for a real three-way split.
const MIN_PER_CLASS: usize = 5;

/// Stratified seeded split. When a class has fewer than five members every
/// part is the full labelled set.
pub fn stratified_split(labels: &Labels, train: f64, val: f64, seed: u64) -> Split {
    let pos: Vec<NodeId> = labels.iter().filter(|(_, l)| **l).map(|(v, _)| *v).collect();
    let neg: Vec<NodeId> = labels.iter().filter(|(_, l)| !**l).map(|(v, _)| *v).collect();
    if pos.len() < MIN_PER_CLASS || neg.len() < MIN_PER_CLASS {
        let all: Vec<NodeId> = labels.keys().copied().collect();
        return Split {
            train: all.clone(),
            val: all.clone(),
            test: all,
        };
    }
    let mut rng = rng::derived(seed, &[0x5b1]);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut class in [pos, neg] {
        class.shuffle(&mut rng);
        let n = class.len();
        let nt = ((n as f64 * train).round() as usize).clamp(1, n);
        let nv = ((n as f64 * val).round() as usize).min(n - nt);
        split.train.extend_from_slice(&class[..nt]);
        split.val.extend_from_slice(&class[nt..nt + nv]);
        split.test.extend_from_slice(&class[nt + nv..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_f1: f64,
    pub val_f1: f64,
    pub test_f1: f64,
    pub val_loss: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: MpsGnnModel,
    pub metrics: Metrics,
    pub split: Split,
}

/// Trains on the seeded stratified split of `labels`, keeping the snapshot
/// with the best validation F1 (ties: lower validation loss).
pub fn train(g: &HeteroGraph, mps: &[MetaPath], labels: &Labels, cfg: &TrainConfig) -> Result<Trained> {
    let split = stratified_split(labels, cfg.train_fraction, cfg.val_fraction, cfg.seed);
    train_with_split(g, mps, labels, &split, cfg)
}

pub fn train_with_split(
    g: &HeteroGraph,
    mps: &[MetaPath],
    labels: &Labels,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let has = |set: &[NodeId], class: bool| set.iter().any(|v| labels.get(v) == Some(&class));
    if !has(&split.train, true) || !has(&split.train, false) {
        return Err(Error::DegenerateLabels(
            "the training split holds a single class".into(),
        ));
    }
    let targets: Vec<NodeId> = labels.keys().copied().collect();
    let gold: Vec<bool> = targets.iter().map(|v| labels[v]).collect();
    let rows = |set: &[NodeId]| -> Vec<usize> {
        set.iter()
            .map(|v| targets.binary_search(v).expect("labelled node"))
            .collect()
    };
    let (train_rows, val_rows, test_rows) = (rows(&split.train), rows(&split.val), rows(&split.test));

    let mut model = MpsGnnModel::new(g.feature_dim(), mps, cfg);
    model.check(g, mps)?;
    let plan = Plan::new(g, mps, &targets)?;
    let mut opts: Vec<Adam> = model
        .matrices()
        .iter()
        .map(|m| Adam::new(m.data().len(), cfg.learning_rate))
        .collect();

    let f1_on = |probs: &[[f64; 2]], rows: &[usize]| -> f64 {
        let pred: Vec<bool> = rows.iter().map(|&i| predicted_class(&probs[i])).collect();
        let g: Vec<bool> = rows.iter().map(|&i| gold[i]).collect();
        f1(&pred, &g)
    };
    let nll = |probs: &[[f64; 2]], rows: &[usize]| -> f64 {
        let s: f64 = rows
            .iter()
            .map(|&i| -probs[i][gold[i] as usize].max(1e-300).ln())
            .sum();
        s / rows.len().max(1) as f64
    };

    let mut best: Option<(f64, f64, usize, MpsGnnModel)> = None;
    let mut since = 0usize;
    let mut epochs = 0usize;
    for epoch in 0..=cfg.max_epochs {
        let fwd = model.run(&plan);
        if fwd.probs.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Numerical(format!("non-finite probabilities at epoch {epoch}")));
        }
        let vf = f1_on(&fwd.probs, &val_rows);
        let vl = nll(&fwd.probs, &val_rows);
        let improved = match &best {
            None => true,
            Some((bf, bl, _, _)) => vf > *bf || (vf == *bf && vl < *bl),
        };
        if improved {
            best = Some((vf, vl, epoch, model.clone()));
            since = 0;
        } else {
            since += 1;
        }
        if epoch == cfg.max_epochs || since >= cfg.patience {
            break;
        }
        let (loss, mut grad) = model.backward(&plan, &fwd, &train_rows, &gold);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
        }
        let wd = cfg.weight_decay;
        let params = model.matrices_mut();
        let grads = grad.matrices_mut();
        for ((p, gm), opt) in params.into_iter().zip(grads).zip(&mut opts) {
            let gvec: Vec<f64> = gm
                .data()
                .iter()
                .zip(p.data())
                .map(|(g, w)| g + wd * w)
                .collect();
            opt.step(p.data_mut(), &gvec);
        }
        epochs += 1;
    }
    let (val_f1, val_loss, best_epoch, model) = best.expect("at least one evaluation");
    let fwd = model.run(&plan);
    let metrics = Metrics {
        train_f1: f1_on(&fwd.probs, &train_rows),
        val_f1,
        test_f1: f1_on(&fwd.probs, &test_rows),
        val_loss,
        epochs,
        best_epoch,
    };
    Ok(Trained {
        model,
        metrics,
        split: split.clone(),
    })
}

/// F1 of a trained model on `targets` of `g`.
pub fn evaluate_f1(model: &MpsGnnModel, g: &HeteroGraph, targets: &[NodeId], labels: &Labels) -> Result<f64> {
    let probs = model.predict(g, targets)?;
    let pred: Vec<bool> = probs.iter().map(predicted_class).collect();
    let gold: Vec<bool> = targets
        .iter()
        .map(|t| {
            labels
                .get(t)
                .copied()
                .ok_or_else(|| Error::data(format!("node {t} has no label")))
        })
        .collect::<Result<_>>()?;
    Ok(f1(&pred, &gold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::random_graph;
    use crate::graph::RelationId;

    #[test]
    fn f1_cases() {
        assert_eq!(f1(&[true, false, true], &[true, false, true]), 1.0);
        assert_eq!(f1(&[false; 4], &[true, false, true, false]), 0.0);
        // tp=3 fp=1 fn=2
        let pred = [true, true, true, true, false, false];
        let gold = [true, true, true, false, true, true];
        let expected = 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
        assert!((f1(&pred, &gold) - expected).abs() < 1e-15);
    }

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn vec_mat(v: &[f64], m: &Mat) -> Vec<f64> {
        (0..m.cols())
            .map(|j| (0..m.rows()).map(|i| v[i] * m.get(i, j)).sum())
            .collect()
    }

    /// Recursive per-target evaluation written straight from the layer
    /// equations, independent of the batched plan.
    fn oracle_embedding(
        model: &MpsGnnModel,
        tower: &Tower,
        g: &HeteroGraph,
        v: NodeId,
        d: usize,
        complete: &[Vec<bool>],
    ) -> Vec<f64> {
        let big_l = tower.layers.len();
        let x = g.features(v).to_vec();
        if d == big_l {
            return x;
        }
        let l = big_l - 1 - d;
        let mut own = x.clone();
        for j in 0..l {
            let a = vec_mat(&own, &tower.layers[j].w0);
            let b = vec_mat(&x, &tower.layers[j].w1);
            own = a.iter().zip(&b).map(|(p, q)| sigma(p + q)).collect();
        }
        let width = if l == 0 { g.feature_dim() } else { model.hidden };
        let mut msg = vec![0.0; width];
        if d == 0 || complete[d][v.index()] {
            let r = tower.path.relations()[d];
            for &u in g.out(v, r) {
                if complete[d + 1][u.index()] {
                    let e = oracle_embedding(model, tower, g, u, d + 1, complete);
                    for (m, x) in msg.iter_mut().zip(&e) {
                        *m += x;
                    }
                }
            }
        }
        let lay = &tower.layers[l];
        let a = vec_mat(&own, &lay.w0);
        let b = vec_mat(&msg, &lay.wn);
        let c = vec_mat(&x, &lay.w1);
        (0..model.hidden).map(|k| sigma(a[k] + b[k] + c[k])).collect()
    }

    #[test]
    fn forward_matches_recursive_oracle() {
        let (g, _) = random_graph(31, 15, 2, 45);
        let mps = vec![
            MetaPath::new(vec![RelationId(0), RelationId(1)]),
            MetaPath::new(vec![RelationId(1)]),
        ];
        let cfg = TrainConfig { hidden: 5, seed: 3, ..Default::default() };
        let model = MpsGnnModel::new(g.feature_dim(), &mps, &cfg);
        let targets: Vec<NodeId> = (0..15).map(NodeId).collect();
        let probs = model.forward(&g, &mps, &targets).unwrap();
        for (i, &t) in targets.iter().enumerate() {
            let mut z = Vec::new();
            for tower in &model.towers {
                let complete = completion_sets(&g, &tower.path).unwrap();
                z.extend(oracle_embedding(&model, tower, &g, t, 0, &complete));
            }
            let lg: Vec<f64> = (0..2)
                .map(|c| vec_mat(&z, &model.readout)[c] + model.bias.get(0, c))
                .collect();
            let p1 = 1.0 / (1.0 + (lg[0] - lg[1]).exp());
            assert!((probs[i][1] - p1).abs() < 1e-10, "target {t}: {} vs {p1}", probs[i][1]);
        }
    }

    #[test]
    fn empty_path_is_a_feature_model() {
        let (g, _) = random_graph(2, 8, 1, 10);
        let cfg = TrainConfig::default();
        let model = MpsGnnModel::new(g.feature_dim(), &[MetaPath::empty()], &cfg);
        let probs = model.forward(&g, &[MetaPath::empty()], &[NodeId(3)]).unwrap();
        let x = g.features(NodeId(3));
        let lg = vec_mat(x, &model.readout);
        let p1 = 1.0 / (1.0 + (lg[0] - lg[1]).exp());
        assert!((probs[0][1] - p1).abs() < 1e-12);
    }

    #[test]
    fn skip_only_model_ignores_structure() {
        let (g, _) = random_graph(4, 20, 2, 60);
        let mp = MetaPath::new(vec![RelationId(0), RelationId(1)]);
        let mut model = MpsGnnModel::new(g.feature_dim(), std::slice::from_ref(&mp), &TrainConfig { hidden: 4, ..Default::default() });
        for lay in &mut model.towers[0].layers {
            lay.w0 = Mat::zeros(lay.w0.rows(), lay.w0.cols());
            lay.wn = Mat::zeros(lay.wn.rows(), lay.wn.cols());
        }
        let targets: Vec<NodeId> = g.nodes().collect();
        let a = model.forward(&g, std::slice::from_ref(&mp), &targets).unwrap();
        let h = g.edit(&g.edges().take(30).collect(), &[]).unwrap();
        let b = model.forward(&h, &[mp], &targets).unwrap();
        assert_eq!(a, b);
    }

    fn grad_check(agg: Aggregation, skip: bool, seed: u64) {
        let (g, _) = random_graph(seed, 18, 2, 60);
        let mps = vec![
            MetaPath::new(vec![RelationId(0), RelationId(1), RelationId(0)]),
            MetaPath::new(vec![RelationId(1)]),
        ];
        let cfg = TrainConfig { hidden: 3, skip, aggregation: agg, seed, ..Default::default() };
        let model = MpsGnnModel::new(g.feature_dim(), &mps, &cfg);
        let targets: Vec<NodeId> = (0..10).map(NodeId).collect();
        let gold: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let rows: Vec<usize> = (0..10).collect();
        let plan = Plan::new(&g, &mps, &targets).unwrap();
        let fwd = model.run(&plan);
        let (_, grad) = model.backward(&plan, &fwd, &rows, &gold);
        let loss_of = |m: &MpsGnnModel| {
            let f = m.run(&plan);
            rows.iter().map(|&i| -f.probs[i][gold[i] as usize].ln()).sum::<f64>() / rows.len() as f64
        };
        let h = 1e-5;
        let n_mats = model.matrices().len();
        let grads = grad.matrices();
        for k in 0..n_mats {
            for idx in 0..grads[k].data().len() {
                let mut plus = model.clone();
                plus.matrices_mut()[k].data_mut()[idx] += h;
                let mut minus = model.clone();
                minus.matrices_mut()[k].data_mut()[idx] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads[k].data()[idx];
                let err = (analytic - numeric).abs();
                let denom = analytic.abs().max(numeric.abs());
                assert!(
                    err < 1e-9 || err / denom <= 1e-4,
                    "matrix {k} entry {idx}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        grad_check(Aggregation::Sum, true, 1);
        grad_check(Aggregation::Sum, false, 2);
        grad_check(Aggregation::Max, true, 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (g, _) = random_graph(6, 12, 2, 30);
        let mps = vec![MetaPath::new(vec![RelationId(1), RelationId(0)]), MetaPath::empty()];
        let model = MpsGnnModel::new(g.feature_dim(), &mps, &TrainConfig { hidden: 4, ..Default::default() });
        let text = model.to_text(&g);
        let back = MpsGnnModel::from_text(&text, &g).unwrap();
        assert_eq!(back, model);
        assert!(MpsGnnModel::from_text("garbage", &g).is_err());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Labels = (0..100).map(|i| (NodeId(i), i % 4 == 0)).collect();
        let s = stratified_split(&labels, 0.7, 0.2, 9);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 100);
        let pos_train = s.train.iter().filter(|v| labels[v]).count();
        assert_eq!(pos_train, 18);
        let tiny: Labels = (0..6).map(|i| (NodeId(i), i == 0)).collect();
        let t = stratified_split(&tiny, 0.7, 0.2, 9);
        assert_eq!(t.train.len(), 6);
        assert_eq!(t.test.len(), 6);
    }

    #[test]
    fn separable_feature_is_learned_quickly() {
        // Label = second attribute above one half, with a margin around the
        // boundary; empty meta-path.
        let mut b = crate::GraphBuilder::new(["t"], ["r"], 3).unwrap();
        let mut rng = rng::rng(5);
        let mut labels = Labels::new();
        for _ in 0..200 {
            let x: f64 = if rng.gen_bool(0.5) { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.0..0.4) };
            let v = b.add_typed_node(crate::TypeId(0), &[rng.gen(), x]).unwrap();
            labels.insert(v, x > 0.5);
        }
        let g = b.build();
        let cfg = TrainConfig { max_epochs: 50, learning_rate: 0.1, seed: 1, ..Default::default() };
        let out = train(&g, &[MetaPath::empty()], &labels, &cfg).unwrap();
        assert!(out.metrics.test_f1 >= 0.99, "{:?}", out.metrics);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = crate::fixtures::lookahead(120, 1);
        let cfg = TrainConfig { max_epochs: 30, seed: 4, ..Default::default() };
        let a = train(&ds.graph, std::slice::from_ref(&ds.truth), &ds.labels, &cfg).unwrap();
        let b = train(&ds.graph, std::slice::from_ref(&ds.truth), &ds.labels, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model, b.model);
    }
}
