//! The `edgekg` command line: one subcommand per pipeline stage. Stages
//! exchange dataset directories and checkpoint files, so any output of one
//! stage is a valid input of the next.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use edgekg_core::checkpoint::{self, Encoding};
use edgekg_core::eval::{self, RelationFrequencyScorer};
use edgekg_core::pdqa::{self, FitMode, ScoreDistribution};
use edgekg_core::prune::{self, MaskScope, PruneReport, SensitivityKind};
use edgekg_core::synth;
use edgekg_core::triples::{AttributeTable, FusionKey};
use edgekg_core::{EmbeddingModel, Error, Profile, RankOptions, Split, TieRule, TripleFormat, TripleStore};

use crate::config::{parse_override, Settings};
use crate::service::{CompleteRequest, InferenceService, ScoreRequest};

/// Exit status when `pdqa` flags at least one record.
pub const EXIT_FLAGGED: u8 = 1;
/// Exit status for usage errors (clap's convention).
pub const EXIT_USAGE: u8 = 2;
/// Exit status for runtime failures.
pub const EXIT_FAILURE: u8 = 3;

pub type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "edgekg", version, about = "Knowledge graph embedding pipeline and local inference service")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Configuration override, applied after the file (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
    /// Seed for training, splitting, sampling and generation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training profile: paper-basic, paper-tuned-rotate or desk.
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid fraction {p:?}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected three comma-separated fractions".to_owned())
}

fn parse_delimiter(s: &str) -> Result<char, String> {
    match s {
        "tab" | "\\t" => Ok('\t'),
        "comma" => Ok(','),
        _ => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(format!("delimiter must be one character, got {s:?}")),
            }
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a delimited triple file into a dataset directory.
    Ingest(IngestArgs),
    /// Generate the synthetic family graph as a dataset directory.
    Synth(OutArgs),
    /// Partition a dataset into train/valid/test.
    Split(SplitArgs),
    /// Train an embedding model and write a checkpoint.
    Train(TrainArgs),
    /// Rank the queries of a split and report HITS@N, AMRI and friends.
    Eval(EvalArgs),
    /// Flag low-confidence triples by z-score.
    Pdqa(PdqaArgs),
    /// Sensitivity-prune a model and write a sparse checkpoint.
    Prune(PruneArgs),
    /// Fine-tune a pruned model with its mask held fixed.
    Finetune(FinetuneArgs),
    /// Write node and edge CSV tables for graph tools.
    Export(ExportArgs),
    /// Serve scoring, completion and compliance checks over HTTP.
    Serve(ServeArgs),
    /// Score one triple against the reference distribution.
    Score(ScoreArgs),
    /// Rank completions for a (head, relation, ?) or (?, relation, tail) query.
    Complete(CompleteArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Triple file, one `head relation tail` per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Field delimiter: one character, `tab` or `comma`.
    #[arg(long, default_value = "tab", value_parser = parse_delimiter)]
    pub delimiter: char,
    /// Comma-separated attribute names identifying one real-world entity.
    #[arg(long, requires = "attributes")]
    pub fuse_key: Option<String>,
    /// Attribute CSV with an `entity` column, used for fusion.
    #[arg(long, requires = "fuse_key")]
    pub attributes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train, valid and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
    pub fractions: [f64; 3],
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report (key-value text).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-epoch loss curve (CSV).
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Ranking {
    /// Filter other known triples out of the candidates (default).
    #[arg(long, conflicts_with = "raw")]
    pub filtered: bool,
    /// Rank against every entity.
    #[arg(long)]
    pub raw: bool,
    /// optimistic, pessimistic or realistic.
    #[arg(long, default_value = "realistic")]
    pub tie_rule: TieRule,
}

impl Ranking {
    fn options(&self) -> RankOptions {
        RankOptions {
            filtered: !self.raw,
            tie_rule: self.tie_rule,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub ranking: Ranking,
    /// Also evaluate the relation-frequency baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Metrics as key-value text.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics as a CSV row.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-query ranks (CSV).
    #[arg(long)]
    pub ranks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PdqaArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Flag records with z below this value.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Frozen reference distribution; the batch fits its own without it.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Fit one distribution per relation.
    #[arg(long, conflicts_with = "reference")]
    pub per_relation: bool,
    /// Corrupt this fraction of the test split before checking.
    #[arg(long, conflicts_with = "labels")]
    pub inject: Option<f64>,
    /// Ground-truth corruption labels for computing recall.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Where to write the labels of injected corruptions.
    #[arg(long, requires = "inject")]
    pub labels_out: Option<PathBuf>,
    /// Where to write the corrupted dataset.
    #[arg(long, requires = "inject")]
    pub corrupted_out: Option<PathBuf>,
    /// Anomaly report (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the fitted distribution for later streaming checks.
    #[arg(long)]
    pub fit_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Global,
    PerTable,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SensitivityArg {
    Gradient,
    GradientWeight,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Prune report (key-value text).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Prune report as CSV header plus row.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Skip HITS@10 evaluation.
    #[arg(long)]
    pub no_eval: bool,
    #[command(flatten)]
    pub ranking: Ranking,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Fraction of parameters to prune, in [0, 1).
    #[arg(long)]
    pub ratio: f64,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "global")]
    pub scope: ScopeArg,
    #[arg(long, value_enum, default_value = "gradient")]
    pub sensitivity: SensitivityArg,
    /// Split the sensitivities are measured on.
    #[arg(long, default_value = "valid")]
    pub sensitivity_split: Split,
    /// Number of batches to average (0 = the whole split).
    #[arg(long, default_value_t = 0)]
    pub batches: usize,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pruned checkpoint (carries its mask).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch budget; defaults to the fine-tuning profile.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Unpruned checkpoint, evaluated for the report's pre-prune column.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Per-epoch loss curve (CSV).
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServiceArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Frozen reference distribution; fitted on the training split without it.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub service: ServiceArgs,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub max_batch: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub service: ServiceArgs,
    #[arg(long)]
    pub head: String,
    #[arg(long)]
    pub relation: String,
    #[arg(long)]
    pub tail: String,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[command(flatten)]
    pub service: ServiceArgs,
    #[arg(long, required_unless_present = "tail", conflicts_with = "tail")]
    pub head: Option<String>,
    #[arg(long)]
    pub relation: String,
    #[arg(long)]
    pub tail: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

/// Runs one parsed invocation; returns the process exit status.
pub fn run(cli: Cli) -> CliResult<u8> {
    let mut settings = Settings::load(cli.config.as_deref(), &cli.overrides, cli.profile)?;
    if let Some(seed) = cli.seed {
        settings.train.seed = seed;
        settings.synth.seed = seed;
    }
    if cli.deterministic {
        settings.train.threads = 1;
    }
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Synth(a) => {
            let store = synth::generate(&settings.synth)?;
            store.save_dataset(&a.out)?;
            println!(
                "triples = {}\nentities = {}\nrelations = {}\nexpected_triples = {:.1}",
                store.len(),
                store.num_entities(),
                store.num_relations(),
                synth::expected_triples(&settings.synth) * (1.0 + settings.synth.noise_rate)
            );
            Ok(0)
        }
        Command::Split(a) => {
            let store = TripleStore::open(&a.data)?.split(a.fractions, settings.train.seed)?;
            store.save_dataset(&a.out)?;
            for s in Split::ALL {
                println!("{} = {}", s.name(), store.split_len(s));
            }
            Ok(0)
        }
        Command::Train(a) => train(&a, &settings),
        Command::Eval(a) => evaluate(&a),
        Command::Pdqa(a) => check(&a, &settings),
        Command::Prune(a) => prune_model(&a, &settings),
        Command::Finetune(a) => finetune(&a, &settings),
        Command::Export(a) => {
            TripleStore::open(&a.data)?.export_graph(&a.nodes, &a.edges)?;
            println!("nodes = {}\nedges = {}", a.nodes.display(), a.edges.display());
            Ok(0)
        }
        Command::Serve(a) => serve(&a, settings),
        Command::Score(a) => {
            let service = load_service(&a.service, settings)?;
            let r = service.score(&ScoreRequest {
                head: a.head,
                relation: a.relation,
                tail: a.tail,
            });
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(0)
        }
        Command::Complete(a) => {
            let service = load_service(&a.service, settings)?;
            let r = service
                .complete(&CompleteRequest {
                    head: a.head,
                    relation: a.relation,
                    tail: a.tail,
                    k: a.k,
                })
                .map_err(|e| e.message)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(0)
        }
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()).into())
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?))
}

fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()).into())
}

fn ingest(a: &IngestArgs) -> CliResult<u8> {
    let format = TripleFormat {
        delimiter: a.delimiter,
        ..TripleFormat::default()
    };
    let mut store = TripleStore::ingest(&a.input, format)?;
    if let (Some(key), Some(attrs)) = (&a.fuse_key, &a.attributes) {
        let table = AttributeTable::read_csv(open(attrs)?)?;
        let before = store.num_entities();
        store = store.fuse_entities(&FusionKey::new(key.split(',').map(str::trim))?, &table)?;
        println!("fused_entities = {}", before - store.num_entities());
    }
    store.save_dataset(&a.out)?;
    println!(
        "triples = {}\nentities = {}\nrelations = {}",
        store.len(),
        store.num_entities(),
        store.num_relations()
    );
    Ok(0)
}

fn train(a: &TrainArgs, settings: &Settings) -> CliResult<u8> {
    let store = TripleStore::open(&a.data)?;
    let (model, report) = edgekg_core::train(&store, &settings.train)?;
    let bytes = checkpoint::save(&a.out, &model, None, Encoding::Dense)?;
    if let Some(p) = &a.report {
        write(p, &report.to_key_value())?;
    }
    if let Some(p) = &a.loss_curve {
        write(p, &report.loss_curve_csv())?;
    }
    print!("{}", report.to_key_value());
    println!("checkpoint_bytes = {bytes}");
    Ok(0)
}

fn evaluate(a: &EvalArgs) -> CliResult<u8> {
    let store = TripleStore::open(&a.data)?;
    let model = checkpoint::load(&a.model)?.model;
    let report = eval::evaluate(&model, &store, a.split, a.ranking.options())?;
    print!("{}", report.to_key_value());
    if a.baseline {
        let freq = RelationFrequencyScorer::fit(&store);
        let b = eval::evaluate(&freq, &store, a.split, a.ranking.options())?;
        println!("baseline_hits@10 = {}", b.hits_at(10));
    }
    if let Some(p) = &a.out {
        write(p, &report.to_key_value())?;
    }
    if let Some(p) = &a.csv {
        write(p, &report.to_csv())?;
    }
    if let Some(p) = &a.ranks {
        write(p, &report.ranks_csv())?;
    }
    Ok(0)
}

fn check(a: &PdqaArgs, settings: &Settings) -> CliResult<u8> {
    let store = TripleStore::open(&a.data)?;
    let model = checkpoint::load(&a.model)?.model;
    let threshold = a.threshold.unwrap_or(settings.runtime.pdqa_threshold);
    let (store, labels) = match (a.inject, &a.labels) {
        (Some(fraction), _) => {
            if a.split != Split::Test {
                return Err("corruptions are injected into the test split; use --split test".into());
            }
            let (corrupted, labels) = synth::inject_corruptions(&store, fraction, settings.train.seed)?;
            if let Some(p) = &a.labels_out {
                synth::write_labels(create(p)?, &corrupted, &labels)?;
            }
            if let Some(dir) = &a.corrupted_out {
                corrupted.save_dataset(dir)?;
            }
            (corrupted, Some(labels))
        }
        (None, Some(path)) => {
            let labels = synth::read_labels(open(path)?, &store)?;
            (store, Some(labels))
        }
        (None, None) => (store, None),
    };
    let indices = store.split_indices(a.split);
    let batch: Vec<_> = indices.iter().map(|&i| store.triples()[i]).collect();
    let report = match &a.reference {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            pdqa::assess_streaming(&model, &ScoreDistribution::parse(&text)?, &batch, threshold)?
        }
        None => {
            let mode = if a.per_relation { FitMode::PerRelation } else { FitMode::Global };
            pdqa::assess(&model, &batch, threshold, mode)?
        }
    };
    if let Some(p) = &a.out {
        report.write_csv(create(p)?, |r| {
            let (h, rel, t) = store.labels_of(&r.triple);
            [h.to_owned(), rel.to_owned(), t.to_owned()]
        })?;
    }
    if let (Some(p), Some(d)) = (&a.fit_out, &report.distribution) {
        write(p, &d.to_key_value())?;
    }
    print!("{}", report.summary());
    if let Some(labels) = &labels {
        let position: std::collections::HashMap<usize, usize> = indices.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let positives: Vec<usize> = labels.iter().filter_map(|l| position.get(&l.triple_index).copied()).collect();
        println!("corruptions = {}", positives.len());
        if let Some(r) = report.recall(&positives) {
            println!("recall = {r}");
        }
    }
    Ok(if report.num_flagged() > 0 { EXIT_FLAGGED } else { 0 })
}

fn hits10(model: &EmbeddingModel, store: &TripleStore, r: &Ranking) -> CliResult<f64> {
    Ok(eval::evaluate(model, store, Split::Test, r.options())?.hits_at(10))
}

fn emit(report: &PruneReport, args: &ReportArgs) -> CliResult<()> {
    print!("{}", report.to_key_value());
    if let Some(p) = &args.report {
        write(p, &report.to_key_value())?;
    }
    if let Some(p) = &args.csv {
        write(p, &format!("{}\n{}\n", PruneReport::csv_header(), report.csv_row()))?;
    }
    Ok(())
}

fn prune_model(a: &PruneArgs, settings: &Settings) -> CliResult<u8> {
    let store = TripleStore::open(&a.data)?;
    let mut model = checkpoint::load(&a.model)?.model;
    let eval = !a.report.no_eval;
    let pre = eval.then(|| hits10(&model, &store, &a.report.ranking)).transpose()?;
    let kind = match a.sensitivity {
        SensitivityArg::Gradient => SensitivityKind::Gradient,
        SensitivityArg::GradientWeight => SensitivityKind::GradientTimesWeight,
    };
    let scope = match a.scope {
        ScopeArg::Global => MaskScope::Global,
        ScopeArg::PerTable => MaskScope::PerTable,
    };
    let sens = prune::sensitivity(&model, &store, a.sensitivity_split, &settings.train, a.batches, kind)?;
    let mask = prune::build_mask(&sens, a.ratio, scope)?;
    prune::apply_mask(&mut model, &mask)?;
    let post = eval.then(|| hits10(&model, &store, &a.report.ranking)).transpose()?;
    prune::save_sparse(&model, &mask, &a.out)?;
    let mut report = PruneReport::measure(&model, &mask)?;
    report.pre_prune_hits10 = pre;
    report.post_prune_hits10 = post;
    emit(&report, &a.report)?;
    Ok(0)
}

fn finetune(a: &FinetuneArgs, settings: &Settings) -> CliResult<u8> {
    let store = TripleStore::open(&a.data)?;
    let ckpt = checkpoint::load(&a.model)?;
    let mask = ckpt
        .mask
        .ok_or("checkpoint carries no pruning mask; run `edgekg prune` first")?;
    let eval = !a.report.no_eval;
    let pre = match (&a.baseline, eval) {
        (Some(p), true) => Some(hits10(&checkpoint::load(p)?.model, &store, &a.report.ranking)?),
        _ => None,
    };
    let post = eval.then(|| hits10(&ckpt.model, &store, &a.report.ranking)).transpose()?;
    let mut config = prune::finetune_config(&settings.train);
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let (model, train_report) = prune::finetune(ckpt.model, &mask, &store, &config)?;
    if let Some(p) = &a.loss_curve {
        write(p, &train_report.loss_curve_csv())?;
    }
    prune::save_sparse(&model, &mask, &a.out)?;
    let mut report = PruneReport::measure(&model, &mask)?;
    report.pre_prune_hits10 = pre;
    report.post_prune_hits10 = post;
    report.post_finetune_hits10 = eval.then(|| hits10(&model, &store, &a.report.ranking)).transpose()?;
    print!("{}", train_report.to_key_value());
    emit(&report, &a.report)?;
    Ok(0)
}

fn load_service(a: &ServiceArgs, mut settings: Settings) -> CliResult<InferenceService> {
    let rt = &mut settings.runtime;
    if let Some(p) = &a.model {
        rt.model_checkpoint_path = Some(p.clone());
    }
    if let Some(p) = &a.data {
        rt.data_path = Some(p.clone());
    }
    if let Some(p) = &a.reference {
        rt.reference_distribution_path = Some(p.clone());
    }
    if let Some(t) = a.threshold {
        rt.pdqa_threshold = t;
    }
    Ok(InferenceService::load(rt)?)
}

fn serve(a: &ServeArgs, mut settings: Settings) -> CliResult<u8> {
    if let Some(b) = &a.bind {
        settings.runtime.bind_address = b.clone();
    }
    if let Some(m) = a.max_batch {
        settings.runtime.max_batch = m;
    }
    if let Some(k) = a.top_k {
        settings.runtime.top_k_default = k;
    }
    let address = settings.runtime.bind_address.clone();
    let service = Arc::new(load_service(&a.service, settings)?);
    let h = service.health();
    println!("serving {} (dim {}, {} entities, {} relations) on {address}", h.model, h.dim, h.entities, h.relations);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::service::serve(service, &address))?;
    Ok(0)
}
