//! Command-line and config-file options. Every option is optional so that a
//! flag, a config-file entry and the built-in default can be layered; flags
//! win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mpsgnn::model::{Activation, TrainConfig};
use mpsgnn::scoring::Aggregation;
use mpsgnn::{Error, Result};

pub const SEED_ENV: &str = "MPSGNN_SEED";

#[derive(Parser, Debug)]
#[command(name = "mpsgnn", version, about = "Meta-path learning and MPS-GNN training on relational data")]
pub struct Cli {
    /// Master seed. Falls back to the config file, then $MPSGNN_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// TOML file with defaults: top-level `seed`, `threads` and one table
    /// per subcommand using the long flag names (dashes become underscores).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scenario with a planted meta-path.
    Generate(GenerateArgs),
    /// Convert CSV tables plus a schema manifest into a graph directory.
    Ingest(IngestArgs),
    /// Learn meta-paths and train a model on them.
    Learn(LearnArgs),
    /// Train a model on given meta-paths.
    Train(TrainArgs),
    /// Faithfulness report for a trained model.
    Evaluate(EvaluateArgs),
    /// Count meta-path occurrences per node.
    Oracle(OracleArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Ingest(_) => "ingest",
            Command::Learn(_) => "learn",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Oracle(_) => "oracle",
        }
    }
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub generate: GenerateArgs,
    pub ingest: IngestArgs,
    pub learn: LearnArgs,
    pub train: TrainArgs,
    pub evaluate: EvaluateArgs,
    pub oracle: OracleArgs,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::usage(format!("config file: {e}")))
    }
}

macro_rules! layered {
    ($ty:ident { $($f:ident),* $(,)? } $(nested { $($n:ident),* $(,)? })?) => {
        impl $ty {
            /// Fields set in `self` win; the rest come from `fallback`.
            pub fn or(self, fallback: Self) -> Self {
                $ty {
                    $($f: self.$f.or(fallback.$f),)*
                    $($($n: self.$n.or(fallback.$n),)*)?
                }
            }
        }
    };
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fixture {
    /// Two patients, prescriptions, medications.
    Toy,
    /// The same with a price attribute on prescriptions.
    ToyPrice,
    /// Two-hop relation that only pays off after lookahead.
    Lookahead,
    /// Grey nodes labelled by their `r -> s` chain count.
    Chains,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSource {
    /// Graph directory (as written by `generate` or `ingest`).
    #[arg(long, conflicts_with = "fixture")]
    pub graph: Option<PathBuf>,

    /// Built-in dataset instead of a graph directory.
    #[arg(long, value_enum)]
    pub fixture: Option<Fixture>,

    /// Number of targets for the lookahead fixture.
    #[arg(long)]
    pub fixture_targets: Option<usize>,
}
layered!(GraphSource { graph, fixture, fixture_targets });

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationArg {
    Logistic,
    Relu,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationArg {
    Sum,
    Max,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Sum => Aggregation::Sum,
            AggregationArg::Max => Aggregation::Max,
        }
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOpts {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Raw-feature skip connection in every layer.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub skip: Option<bool>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// Neighbour aggregation in the GNN layers.
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
}
layered!(TrainOpts { hidden, lr, weight_decay, epochs, patience, skip, activation, aggregation });

impl TrainOpts {
    pub fn resolve(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.unwrap_or(base.hidden),
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            max_epochs: self.epochs.unwrap_or(base.max_epochs),
            patience: self.patience.unwrap_or(base.patience),
            skip: self.skip.unwrap_or(base.skip),
            activation: match self.activation {
                Some(ActivationArg::Logistic) => Activation::Logistic,
                Some(ActivationArg::Relu) => Activation::Relu,
                None => base.activation,
            },
            aggregation: self.aggregation.map(Into::into).unwrap_or(base.aggregation),
            seed,
            ..base
        }
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// Preset s1..s8.
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of relations |R|.
    #[arg(long)]
    pub relations: Option<usize>,
    /// Occurrence threshold c.
    #[arg(long)]
    pub count: Option<usize>,
    /// Meta-path length l.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub targets: Option<usize>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    #[arg(long)]
    pub distractor_density: Option<f64>,
    /// Decoy chains end at nodes whose marker feature is 0.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub constrained: Option<bool>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
layered!(GenerateArgs {
    preset,
    relations,
    count,
    length,
    targets,
    positive_fraction,
    distractor_density,
    constrained,
    out,
});

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    /// Schema manifest (TOML).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Directory holding the CSV files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Merge rows of `table` sharing a value of `column`; repeatable.
    #[arg(long, value_name = "TABLE.COLUMN")]
    pub group: Option<Vec<String>>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
layered!(IngestArgs { schema, data, group, out });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: GraphSource,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub lmax: Option<usize>,
    /// Acceptance ratio against the random baseline.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Optimizer iterations per scored relation.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Also run the greedy-by-F1 comparator and print both side by side.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub greedy_f1: Option<bool>,
    /// Existence comparator: max aggregation in scoring and in the GNN.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub existence: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOpts,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
layered!(LearnArgs { beam, lmax, eta, iterations, restarts, greedy_f1, existence, out } nested { source, train });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: GraphSource,
    /// Comma-separated relation names; repeat for several meta-paths.
    #[arg(long)]
    pub metapath: Option<Vec<String>>,
    /// File with one comma-separated meta-path per line (as written by `learn`).
    #[arg(long, conflicts_with = "metapath")]
    pub metapaths: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOpts,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
layered!(TrainArgs { metapath, metapaths, out } nested { source, train });

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTargets {
    /// Test split saved next to the model.
    Test,
    /// Every labelled node.
    All,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: GraphSource,
    /// Directory written by `learn` or `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Occurrence fractions to remove.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub sufficiency_perturbations: Option<usize>,
    #[arg(long, value_enum)]
    pub on: Option<EvalTargets>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
layered!(EvaluateArgs { model, fractions, sufficiency_perturbations, on, out } nested { source });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: GraphSource,
    /// Comma-separated relation names.
    #[arg(long)]
    pub metapath: Option<String>,
    /// Nodes to report; defaults to every labelled node.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<u32>>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
layered!(OracleArgs { metapath, nodes, out } nested { source });
