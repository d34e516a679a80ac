use std::path::{Path, PathBuf};

use serde::Serialize;

use mpsgnn::explain::{faithfulness, inside_edit_changes_prediction, sufficiency_check};
use mpsgnn::fixtures::{self, Labels};
use mpsgnn::graph::count_occurrences;
use mpsgnn::ingest::{group_supernodes, load_database, remap_labels, SchemaManifest};
use mpsgnn::io::{ensure_dir, read_graph, read_text, write_graph, write_text};
use mpsgnn::model::{train, MpsGnnModel, Split, TrainConfig};
use mpsgnn::scoring::Aggregation;
use mpsgnn::search::{greedy_by_f1_baseline, learn_metapaths, SearchConfig};
use mpsgnn::synth::{generate, ScenarioSpec};
use mpsgnn::{Error, HeteroGraph, MetaPath, NodeId, Result};

use crate::opts::*;

const DEFAULT_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];
const LOOKAHEAD_TARGETS: usize = 1000;

pub struct Context {
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a, O: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    threads: Option<usize>,
    options: &'a O,
    resolved: &'a R,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// The output directory is left out of the manifest so that two runs that
/// differ only in where they write produce identical files.
fn write_manifest<O: Serialize, R: Serialize>(
    out: &Path,
    ctx: &Context,
    command: &str,
    options: &O,
    resolved: &R,
) -> Result<()> {
    let m = Manifest {
        tool: "mpsgnn",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: ctx.seed,
        threads: ctx.threads,
        options,
        resolved,
    };
    write_text(&out.join("manifest.json"), &json(&m))
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::usage(format!("missing required option --{flag}")))
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = required(out, "out")?;
    ensure_dir(&dir)?;
    Ok(dir)
}

fn load_source(src: &GraphSource, seed: u64) -> Result<(HeteroGraph, Option<Labels>)> {
    match (&src.graph, src.fixture) {
        (Some(dir), None) => read_graph(dir),
        (None, Some(f)) => {
            let ds = match f {
                Fixture::Toy => fixtures::prescriptions(),
                Fixture::ToyPrice => fixtures::prescriptions_with_price(),
                Fixture::Lookahead => {
                    fixtures::lookahead(src.fixture_targets.unwrap_or(LOOKAHEAD_TARGETS), seed)
                }
                Fixture::Chains => fixtures::chains(),
            };
            Ok((ds.graph, Some(ds.labels)))
        }
        (Some(_), Some(_)) => Err(Error::usage("--graph and --fixture are mutually exclusive")),
        (None, None) => Err(Error::usage("one of --graph or --fixture is required")),
    }
}

fn labelled(src: &GraphSource, seed: u64) -> Result<(HeteroGraph, Labels)> {
    let (g, labels) = load_source(src, seed)?;
    let labels = labels.ok_or_else(|| Error::data("graph has no labels.tsv"))?;
    Ok((g, labels))
}

fn parse_metapath(g: &HeteroGraph, s: &str) -> Result<MetaPath> {
    let names: Vec<&str> = s.split(',').map(str::trim).filter(|n| !n.is_empty()).collect();
    MetaPath::from_names(g, &names)
}

fn format_metapaths(g: &HeteroGraph, mps: &[MetaPath]) -> String {
    mps.iter().map(|mp| mp.names(g).join(",") + "\n").collect()
}

fn save_model(out: &Path, g: &HeteroGraph, trained: &mpsgnn::model::Trained) -> Result<()> {
    write_text(&out.join("model.txt"), &trained.model.to_text(g))?;
    write_text(&out.join("metrics.json"), &json(&trained.metrics))?;
    write_text(&out.join("split.json"), &json(&trained.split))
}

pub fn generate_cmd(ctx: &Context, args: &GenerateArgs) -> Result<()> {
    let base = match &args.preset {
        Some(p) => ScenarioSpec::preset(p)?,
        None => {
            if args.relations.is_none() || args.count.is_none() || args.length.is_none() {
                return Err(Error::usage(
                    "give --preset or all of --relations, --count and --length",
                ));
            }
            ScenarioSpec::default()
        }
    };
    let spec = ScenarioSpec {
        num_relations: args.relations.unwrap_or(base.num_relations),
        threshold: args.count.unwrap_or(base.threshold),
        path_length: args.length.unwrap_or(base.path_length),
        num_targets: args.targets.unwrap_or(base.num_targets),
        positive_fraction: args.positive_fraction.unwrap_or(base.positive_fraction),
        distractor_density: args.distractor_density.unwrap_or(base.distractor_density),
        feature_constrained: args.constrained.unwrap_or(base.feature_constrained),
        seed: ctx.seed,
        ..base
    };
    spec.validate()?;
    let out = out_dir(&args.out)?;
    let sc = generate(&spec)?;
    write_graph(&out, &sc.graph, Some(&sc.labels))?;
    write_text(&out.join("ground_truth.json"), &json(&sc.ground_truth))?;
    write_manifest(&out, ctx, "generate", &GenerateArgs { out: None, ..args.clone() }, &spec)?;
    let pos = sc.labels.values().filter(|l| **l).count();
    println!(
        "audit ok: {} targets ({pos} positive), labels match recounted occurrences of {}",
        sc.labels.len(),
        sc.ground_truth.path.join(" -> ")
    );
    Ok(())
}

pub fn ingest_cmd(ctx: &Context, args: &IngestArgs) -> Result<()> {
    let schema_path = required(&args.schema, "schema")?;
    let data = required(&args.data, "data")?;
    let manifest = SchemaManifest::load(&schema_path)?;
    let (mut g, mut labels, report) = load_database(&manifest, &data)?;
    for spec in args.group.iter().flatten() {
        let (table, column) = spec
            .split_once('.')
            .ok_or_else(|| Error::usage(format!("--group expects TABLE.COLUMN, got `{spec}`")))?;
        let (h, mapping) = group_supernodes(&g, &report, table, column)?;
        labels = remap_labels(&labels, &mapping)?;
        g = h;
    }
    let out = out_dir(&args.out)?;
    write_graph(&out, &g, Some(&labels))?;
    write_text(&out.join("encoding.json"), &json(&report))?;
    write_manifest(&out, ctx, "ingest", &IngestArgs { out: None, ..args.clone() }, &manifest)?;
    println!(
        "{} nodes, {} edges, {} relations, feature dimension {}, {} labels",
        g.num_nodes(),
        g.num_edges(),
        g.num_relations(),
        g.feature_dim(),
        labels.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct LearnResolved {
    search: SearchConfig,
    train: TrainConfig,
}

pub fn learn_cmd(ctx: &Context, args: &LearnArgs) -> Result<()> {
    let (g, labels) = labelled(&args.source, ctx.seed)?;
    let existence = args.existence.unwrap_or(false);
    let agg = if existence { Aggregation::Max } else { Aggregation::Sum };
    let mut search = SearchConfig {
        seed: ctx.seed,
        ..SearchConfig::default()
    };
    search.beam = args.beam.unwrap_or(search.beam);
    search.l_max = args.lmax.unwrap_or(search.l_max);
    search.eta = args.eta.unwrap_or(search.eta);
    search.optimizer.iterations = args.iterations.unwrap_or(search.optimizer.iterations);
    search.optimizer.restarts = args.restarts.unwrap_or(search.optimizer.restarts);
    search.optimizer.aggregation = agg;
    search.inner.aggregation = agg;
    let train_cfg = args.train.resolve(
        TrainConfig {
            aggregation: agg,
            ..TrainConfig::default()
        },
        ctx.seed,
    );
    let out = out_dir(&args.out)?;

    let (mps, trace) = learn_metapaths(&g, &labels, &search)?;
    write_text(&out.join("metapaths.txt"), &format_metapaths(&g, &mps))?;
    write_text(&out.join("trace.json"), &json(&trace))?;
    write_text(&out.join("trace.tsv"), &trace.table())?;
    let trained = train(&g, &mps, &labels, &train_cfg)?;
    save_model(&out, &g, &trained)?;

    let shown: Vec<String> = mps.iter().map(|mp| mp.display(&g)).collect();
    println!("learned: {}", if shown.is_empty() { "(none)".into() } else { shown.join("; ") });
    println!("test F1: {:.4}", trained.metrics.test_f1);

    if args.greedy_f1.unwrap_or(false) {
        let (gp, gtrace) = greedy_by_f1_baseline(&g, &labels, &search)?;
        let gtrained = train(&g, std::slice::from_ref(&gp), &labels, &train_cfg)?;
        write_text(&out.join("greedy.json"), &json(&gtrace))?;
        let mut table = String::from("method\tmetapath\tval_f1\ttest_f1\n");
        table.push_str(&format!(
            "scoring\t{}\t{}\t{}\n",
            shown.join("; "),
            trained.metrics.val_f1,
            trained.metrics.test_f1
        ));
        table.push_str(&format!(
            "greedy_f1\t{}\t{}\t{}\n",
            gp.display(&g),
            gtrained.metrics.val_f1,
            gtrained.metrics.test_f1
        ));
        write_text(&out.join("comparison.tsv"), &table)?;
        print!("{table}");
    }
    let options = LearnArgs { out: None, ..args.clone() };
    write_manifest(&out, ctx, "learn", &options, &LearnResolved { search, train: train_cfg })
}

pub fn train_cmd(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let (g, labels) = labelled(&args.source, ctx.seed)?;
    let mps: Vec<MetaPath> = if let Some(file) = &args.metapaths {
        read_text(file)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_metapath(&g, l))
            .collect::<Result<_>>()?
    } else {
        args.metapath
            .iter()
            .flatten()
            .map(|s| parse_metapath(&g, s))
            .collect::<Result<_>>()?
    };
    let cfg = args.train.resolve(TrainConfig::default(), ctx.seed);
    let out = out_dir(&args.out)?;
    let trained = train(&g, &mps, &labels, &cfg)?;
    write_text(&out.join("metapaths.txt"), &format_metapaths(&g, &mps))?;
    save_model(&out, &g, &trained)?;
    let m = &trained.metrics;
    println!(
        "train F1 {:.4}  val F1 {:.4}  test F1 {:.4}  (best epoch {} of {})",
        m.train_f1, m.val_f1, m.test_f1, m.best_epoch, m.epochs
    );
    write_manifest(&out, ctx, "train", &TrainArgs { out: None, ..args.clone() }, &cfg)
}

#[derive(Serialize)]
struct EvaluateResolved {
    fractions: Vec<f64>,
    sufficiency_perturbations: usize,
    targets: EvalTargets,
    num_targets: usize,
}

#[derive(Serialize)]
struct SufficiencyOut {
    perturbations: usize,
    passed: bool,
    failures: Vec<String>,
    inside_edit: Option<String>,
    inside_edit_changed_prediction: Option<bool>,
}

pub fn evaluate_cmd(ctx: &Context, args: &EvaluateArgs) -> Result<()> {
    let (g, labels) = labelled(&args.source, ctx.seed)?;
    let model_dir = required(&args.model, "model")?;
    let model = MpsGnnModel::from_text(&read_text(&model_dir.join("model.txt"))?, &g)?;
    let split_path = model_dir.join("split.json");
    let on = args.on.unwrap_or(if split_path.exists() { EvalTargets::Test } else { EvalTargets::All });
    let targets: Vec<NodeId> = match on {
        EvalTargets::All => labels.keys().copied().collect(),
        EvalTargets::Test => {
            let split: Split = serde_json::from_str(&read_text(&split_path)?)
                .map_err(|e| Error::data(format!("{}: {e}", split_path.display())))?;
            split.test
        }
    };
    let fractions = args.fractions.clone().unwrap_or(DEFAULT_FRACTIONS.to_vec());
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::usage(format!("fraction {f} is outside [0, 1]")));
    }
    let perturbations = args.sufficiency_perturbations.unwrap_or(100);
    let out = out_dir(&args.out)?;

    let report = faithfulness(&model, &g, &targets, &labels, &fractions, ctx.seed)?;
    write_text(&out.join("faithfulness.csv"), &report.to_csv())?;
    write_text(&out.join("faithfulness.json"), &json(&report))?;
    let suff = sufficiency_check(&model, &g, &targets, perturbations, ctx.seed)?;
    let inside = inside_edit_changes_prediction(&model, &g, &targets, ctx.seed)?;
    let suff_out = SufficiencyOut {
        perturbations: suff.perturbations,
        passed: suff.passed,
        failures: suff.failures.clone(),
        inside_edit: inside.as_ref().map(|(e, _)| e.clone()),
        inside_edit_changed_prediction: inside.as_ref().map(|(_, c)| *c),
    };
    write_text(&out.join("sufficiency.json"), &json(&suff_out))?;

    print!("{}", report.to_csv());
    println!(
        "sufficiency: {} ({}/{} perturbations unchanged)",
        if suff.passed { "pass" } else { "fail" },
        suff.perturbations - suff.failures.len().min(suff.perturbations),
        suff.perturbations
    );
    let resolved = EvaluateResolved {
        fractions,
        sufficiency_perturbations: perturbations,
        targets: on,
        num_targets: targets.len(),
    };
    write_manifest(&out, ctx, "evaluate", &EvaluateArgs { out: None, ..args.clone() }, &resolved)
}

pub fn oracle_cmd(ctx: &Context, args: &OracleArgs) -> Result<()> {
    let (g, labels) = load_source(&args.source, ctx.seed)?;
    let mp = parse_metapath(&g, &required(&args.metapath, "metapath")?)?;
    let nodes: Vec<NodeId> = match &args.nodes {
        Some(ns) => ns.iter().map(|&v| NodeId(v)).collect(),
        None => labels
            .ok_or_else(|| Error::usage("graph has no labels; pass --nodes"))?
            .keys()
            .copied()
            .collect(),
    };
    let mut table = String::from("node\tcount\n");
    for v in nodes {
        table.push_str(&format!("{}\t{}\n", v.0, count_occurrences(&g, v, &mp)?));
    }
    print!("{table}");
    if args.out.is_some() {
        let out = out_dir(&args.out)?;
        write_text(&out.join("counts.tsv"), &table)?;
        write_manifest(&out, ctx, "oracle", &OracleArgs { out: None, ..args.clone() }, &mp.names(&g))?;
    }
    Ok(())
}
