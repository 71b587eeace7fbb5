use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use chronolink::corpus::{
    extract_mentions, load_dataset, save_dataset, stratified_split, translate_types, DatasetFormat, Document, Mention,
    SplitRatios,
};
use chronolink::eval::{
    block_accuracy, document_texts, e2e_metrics_with, ed_accuracy, pair_accuracy, permutation_importance_with,
    point_biserial, render_ed_table, CorrelationReport, E2eReport, EdReport, ImportanceReport, MatchMode, Overlap,
    Span,
};
use chronolink::features::{read_feature_dump, write_feature_dump, N_FEATURES};
use chronolink::gbt::{FeatureMatrix, GbtError, GbtModel, Hyperparams, Preset};
use chronolink::index::{ingest_embeddings, EmbeddingMatrix, EmbeddingProvider, FileProvider, HashProvider};
use chronolink::kb::{
    build_class_closure, build_lookup, default_roots, read_class_edges, read_date_facts, read_entity_dump,
    read_type_facts, ClassClosure, LookupStore,
};
use chronolink::linker::prompt::{from_jsonl, to_jsonl};
use chronolink::linker::{
    link_batch, predictions_from_jsonl, predictions_to_jsonl, train, LinkError, LinkPrediction, PipelineConfig,
    PromptRecord, ResponseRecord, Retriever,
};

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait OrExit<T> {
    /// Bad input, missing files, validation failures: exit 2.
    fn input(self, what: &str) -> CliResult<T>;
    /// Unexpected failures: exit 1.
    fn internal(self, what: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn input(self, what: &str) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into().context(what.to_string()),
        })
    }

    fn internal(self, what: &str) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into().context(what.to_string()),
        })
    }
}

fn invalid(message: String) -> Failure {
    Failure {
        code: 2,
        error: anyhow!(message),
    }
}

#[derive(Parser)]
#[command(name = "chronolink", version, about = "Temporal-aware entity linking for historical text")]
struct Cli {
    /// TOML file with default options; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Hyper-parameter and threshold preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Candidates retrieved per mention (defaults to the preset's block size).
    #[arg(long, global = true)]
    k: Option<usize>,
    /// NIL threshold (defaults to the preset's value).
    #[arg(long, global = true)]
    nil_threshold: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch linking (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PresetArg {
    Dz,
    Amd,
    All,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Dz => Preset::Dz,
            PresetArg::Amd => Preset::Amd,
            PresetArg::All => Preset::All,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Eneide,
    Mhercl,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an entity embedding file and write the index artifact.
    BuildIndex {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the entity lookup store from the knowledge-base dumps.
    BuildLookup {
        #[arg(long)]
        entities: PathBuf,
        /// child<TAB>parent subclass edges; without it no entity gets a type.
        #[arg(long)]
        class_edges: Option<PathBuf>,
        #[arg(long)]
        type_facts: Option<PathBuf>,
        #[arg(long)]
        date_facts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the re-ranker on a dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the sampled training pairs as TSV.
        #[arg(long)]
        features_out: Option<PathBuf>,
        #[command(flatten)]
        tuning: TuningArgs,
    },
    /// Link every annotated mention and write predictions as JSONL.
    Link {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the gold annotations.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        predictions: PathBuf,
        /// Measure fuzzy overlap in whitespace tokens instead of characters.
        #[arg(long)]
        token_overlap: bool,
        /// Print the accuracy table instead of JSON.
        #[arg(long)]
        table: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Permutation and gain importance of the re-ranker features.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Feature dump written by `train --features-out`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        n_reps: Option<usize>,
        /// Score permutations by block-level linking accuracy instead of pair accuracy.
        #[arg(long)]
        block_metric: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write LLM prompts for offline adjudication.
    Prompt {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn LLM replies into predictions.
    ParseResponses {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into train/dev/test by decade.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "eneide")]
    format: FormatArg,
    /// Context tokens kept on each side of a mention.
    #[arg(long)]
    window: Option<usize>,
}

/// Re-ranker hyper-parameter overrides on top of the preset.
#[derive(Args, Default)]
struct TuningArgs {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Fraction of training rows required in each leaf.
    #[arg(long)]
    min_samples_leaf: Option<f64>,
    /// Fraction of training rows required to split a node.
    #[arg(long)]
    min_samples_split: Option<f64>,
    #[arg(long)]
    n_estimators: Option<usize>,
    /// Negatives sampled per training block.
    #[arg(long)]
    c_neg_size: Option<usize>,
}

#[derive(Args)]
struct RetrievalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    lookup: PathBuf,
    /// Precomputed mention vectors keyed by mention; the hashing embedder is used otherwise.
    #[arg(long)]
    mention_embeddings: Option<PathBuf>,
}

/// Options readable from the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<PresetArg>,
    k: Option<usize>,
    nil_threshold: Option<f64>,
    seed: Option<u64>,
    threads: Option<usize>,
    window: Option<usize>,
    n_reps: Option<usize>,
    learning_rate: Option<f64>,
    max_depth: Option<usize>,
    min_samples_leaf: Option<f64>,
    min_samples_split: Option<f64>,
    n_estimators: Option<usize>,
    c_neg_size: Option<usize>,
}

impl std::fmt::Debug for PresetArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PresetArg::Dz => "dz",
            PresetArg::Amd => "amd",
            PresetArg::All => "all",
        })
    }
}

/// Effective settings after merging flags over the config file over preset defaults.
struct RunConfig {
    preset: Preset,
    k: usize,
    nil_threshold: f64,
    seed: u64,
    threads: usize,
    window: usize,
    n_reps: usize,
    file: FileConfig,
}

const DEFAULT_WINDOW: usize = 50;
const DEFAULT_N_REPS: usize = 30;

impl RunConfig {
    fn resolve(cli: &Cli) -> CliResult<Self> {
        let file: FileConfig = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).input(&format!("reading config {}", path.display()))?;
                toml::from_str(&text).input(&format!("parsing config {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let preset: Preset = cli.preset.or(file.preset).unwrap_or(PresetArg::Dz).into();
        let k = cli.k.or(file.k).unwrap_or(preset.hyperparams().block_size);
        let nil_threshold = cli.nil_threshold.or(file.nil_threshold).unwrap_or(preset.nil_threshold());
        if k == 0 {
            return Err(invalid("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&nil_threshold) {
            return Err(invalid(format!("nil threshold {nil_threshold} outside [0, 1]")));
        }
        let window = match &cli.command {
            Command::Train { data, .. }
            | Command::Link { data, .. }
            | Command::Evaluate { data, .. }
            | Command::Prompt { data, .. }
            | Command::Split { data, .. } => data.window,
            _ => None,
        };
        let n_reps = match &cli.command {
            Command::Explain { n_reps, .. } => *n_reps,
            _ => None,
        };
        Ok(RunConfig {
            preset,
            k,
            nil_threshold,
            seed: cli.seed.or(file.seed).unwrap_or(0),
            threads: cli.threads.or(file.threads).unwrap_or(0),
            window: window.or(file.window).unwrap_or(DEFAULT_WINDOW),
            n_reps: n_reps.or(file.n_reps).unwrap_or(DEFAULT_N_REPS),
            file,
        })
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).input(&format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_documents(data: &DataArgs) -> CliResult<Vec<Document>> {
    let format = match data.format {
        FormatArg::Eneide => DatasetFormat::Eneide,
        FormatArg::Mhercl => DatasetFormat::Mhercl,
    };
    let docs = load_dataset(&data.dataset, format).input(&format!("loading {}", data.dataset.display()))?;
    translate_types(docs).input("mapping fine-grained types")
}

fn load_mentions(data: &DataArgs, window: usize) -> CliResult<(Vec<Document>, Vec<Mention>)> {
    let docs = load_documents(data)?;
    let mentions = extract_mentions(&docs, window).input("extracting mentions")?;
    log::info!("{} mentions from {} documents", mentions.len(), docs.len());
    Ok((docs, mentions))
}

fn open_retriever(args: &RetrievalArgs, k: usize) -> CliResult<Retriever> {
    let index = ingest_embeddings(&args.index).input(&format!("loading index {}", args.index.display()))?;
    let lookup = LookupStore::open(&args.lookup).input(&format!("loading lookup {}", args.lookup.display()))?;
    let provider: Arc<dyn EmbeddingProvider> = match &args.mention_embeddings {
        Some(path) => Arc::new(FileProvider::open(path).input(&format!("loading mention vectors {}", path.display()))?),
        None => Arc::new(HashProvider::new(index.dim())),
    };
    Retriever::new(provider, Arc::new(index), Arc::new(lookup), k).input("configuring retrieval")
}

fn collect_predictions(results: Vec<Result<LinkPrediction, LinkError>>) -> CliResult<Vec<LinkPrediction>> {
    let mut out = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(p) => out.push(p),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if errors.is_empty() {
        return Ok(out);
    }
    for e in &errors {
        log::error!("{e}");
    }
    Err(invalid(format!("{} mention(s) failed to link; first: {}", errors.len(), errors[0])))
}

fn cmd_build_index(embeddings: &Path, out: &Path) -> CliResult<()> {
    let matrix: EmbeddingMatrix =
        ingest_embeddings(embeddings).input(&format!("reading embeddings {}", embeddings.display()))?;
    matrix.write(out).input(&format!("writing index {}", out.display()))?;
    log::info!("indexed {} vectors of dimension {}", matrix.len(), matrix.dim());
    Ok(())
}

fn cmd_build_lookup(
    entities: &Path,
    class_edges: Option<&Path>,
    type_facts: Option<&Path>,
    date_facts: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let rows = read_entity_dump(entities).input("reading entity dump")?;
    let closure = match class_edges {
        Some(path) => {
            let edges = read_class_edges(path).input("reading class edges")?;
            build_class_closure(&edges, &default_roots()).input("building class closure")?
        }
        None => ClassClosure::default(),
    };
    let types = match type_facts {
        Some(p) => read_type_facts(p).input("reading type facts")?,
        None => Default::default(),
    };
    let dates = match date_facts {
        Some(p) => read_date_facts(p).input("reading date facts")?,
        None => Default::default(),
    };
    let store = build_lookup(&rows, &closure, &types, &dates).input("building lookup store")?;
    store.write(out).input(&format!("writing {}", out.display()))?;
    log::info!("lookup store with {} entities", store.len());
    Ok(())
}

fn hyperparams(rc: &RunConfig, t: &TuningArgs) -> CliResult<Hyperparams> {
    let f = &rc.file;
    let mut hp = rc.preset.hyperparams();
    hp.block_size = rc.k;
    hp.learning_rate = t.learning_rate.or(f.learning_rate).unwrap_or(hp.learning_rate);
    hp.max_depth = t.max_depth.or(f.max_depth).unwrap_or(hp.max_depth);
    hp.min_samples_leaf = t.min_samples_leaf.or(f.min_samples_leaf).unwrap_or(hp.min_samples_leaf);
    hp.min_samples_split = t.min_samples_split.or(f.min_samples_split).unwrap_or(hp.min_samples_split);
    hp.n_estimators = t.n_estimators.or(f.n_estimators).unwrap_or(hp.n_estimators);
    hp.c_neg_size = t.c_neg_size.or(f.c_neg_size).unwrap_or(hp.c_neg_size);
    hp.validate().input("hyper-parameters")?;
    Ok(hp)
}

fn cmd_train(
    rc: &RunConfig,
    data: &DataArgs,
    retrieval: &RetrievalArgs,
    hp: &Hyperparams,
    out: &Path,
    features_out: Option<&Path>,
) -> CliResult<()> {
    let (_, mentions) = load_mentions(data, rc.window)?;
    let retriever = open_retriever(retrieval, rc.k)?;
    let (model, rows) = match train(&mentions, &retriever, hp, rc.seed) {
        Ok(v) => v,
        Err(LinkError::Training(e @ (GbtError::DegenerateTraining(_) | GbtError::TooFewRows(_)))) => {
            return Err(invalid(format!("degenerate training data: {e}")));
        }
        Err(e @ LinkError::Training(_)) => return Err(e).internal("fitting the re-ranker"),
        Err(e) => return Err(e).input("preparing training pairs"),
    };
    model.save(out).input("saving model")?;
    if let Some(path) = features_out {
        write_feature_dump(path, &rows).input("writing feature dump")?;
    }
    log::info!("trained {} trees on {} pairs", model.trees.len(), rows.len());
    Ok(())
}

fn load_model(path: &Path) -> CliResult<GbtModel> {
    GbtModel::load(path).input(&format!("loading model {}", path.display()))
}

fn cmd_link(rc: &RunConfig, data: &DataArgs, retrieval: &RetrievalArgs, model: &Path, out: &Path) -> CliResult<()> {
    let (_, mentions) = load_mentions(data, rc.window)?;
    let retriever = open_retriever(retrieval, rc.k)?;
    let config = PipelineConfig::new(retriever, Arc::new(load_model(model)?), rc.nil_threshold)
        .input("configuring the pipeline")?;
    let predictions = collect_predictions(link_batch(&mentions, &config, rc.threads))?;
    write_file(out, predictions_to_jsonl(&predictions))?;
    let nil = predictions.iter().filter(|p| p.is_nil()).count();
    log::info!("linked {} mentions ({nil} NIL)", predictions.len());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    ed: EdReport,
    exact: E2eReport,
    fuzzy: E2eReport,
    /// Score/correctness correlation over non-NIL predictions; absent when undefined.
    correlation: Option<CorrelationReport>,
}

fn cmd_evaluate(
    rc: &RunConfig,
    data: &DataArgs,
    predictions: &Path,
    token_overlap: bool,
    table: bool,
    out: Option<&Path>,
) -> CliResult<()> {
    let (docs, gold) = load_mentions(data, rc.window)?;
    let text = fs::read_to_string(predictions).input(&format!("reading {}", predictions.display()))?;
    let preds = predictions_from_jsonl(&text).input("parsing predictions")?;
    let ed = ed_accuracy(&preds, &gold).input("aligning predictions with gold")?;
    let texts = document_texts(&docs);
    let overlap = if token_overlap { Overlap::Tokens(&texts) } else { Overlap::Chars };
    let pred_spans: Vec<Span> = preds.iter().map(Span::from).collect();
    let gold_spans: Vec<Span> = gold.iter().map(Span::from).collect();
    let exact = e2e_metrics_with(&pred_spans, &gold_spans, MatchMode::Exact, overlap).input("exact matching")?;
    let fuzzy = e2e_metrics_with(&pred_spans, &gold_spans, MatchMode::Fuzzy, overlap).input("fuzzy matching")?;

    let gold_by_key: std::collections::HashMap<String, &Mention> = gold.iter().map(|m| (m.key(), m)).collect();
    let (scores, correct): (Vec<f64>, Vec<bool>) = preds
        .iter()
        .filter(|p| !p.is_nil())
        .map(|p| (p.score, gold_by_key[&p.key()].gold == p.decision))
        .unzip();
    let correlation = match point_biserial(&scores, &correct) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("score correlation not reported: {e}");
            None
        }
    };
    if table {
        let name = data
            .dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "predictions".into());
        return emit(out, render_ed_table(&[(name, ed)]).trim_end());
    }
    let report = EvaluationReport {
        ed,
        exact,
        fuzzy,
        correlation,
    };
    emit(out, &serde_json::to_string_pretty(&report).internal("serializing report")?)
}

#[derive(Serialize)]
struct GainEntry {
    feature: String,
    importance: f64,
}

#[derive(Serialize)]
struct ExplainReport {
    permutation: ImportanceReport,
    gain: Vec<GainEntry>,
}

fn cmd_explain(rc: &RunConfig, model: &Path, features: &Path, block_metric: bool, out: Option<&Path>) -> CliResult<()> {
    let model = load_model(model)?;
    let rows = read_feature_dump(features).input(&format!("reading feature dump {}", features.display()))?;
    if model.n_features() != N_FEATURES {
        return Err(invalid(format!("model has {} features, dump has {N_FEATURES}", model.n_features())));
    }
    let matrix = FeatureMatrix::from_feature_rows(&rows.iter().map(|r| r.features).collect::<Vec<_>>())
        .input("feature dump values")?;
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let groups: Vec<String> = rows.iter().map(|r| r.mention_id.clone()).collect();
    let permutation = if block_metric {
        permutation_importance_with(&model, &matrix, &labels, rc.n_reps, rc.seed, block_accuracy(&groups))
    } else {
        permutation_importance_with(&model, &matrix, &labels, rc.n_reps, rc.seed, pair_accuracy)
    }
    .input("permutation importance")?;
    let gain = model
        .feature_names
        .iter()
        .zip(model.gain_importance())
        .map(|(f, importance)| GainEntry {
            feature: f.clone(),
            importance,
        })
        .collect();
    let report = ExplainReport { permutation, gain };
    emit(out, &serde_json::to_string_pretty(&report).internal("serializing report")?)
}

fn cmd_prompt(rc: &RunConfig, data: &DataArgs, retrieval: &RetrievalArgs, out: &Path) -> CliResult<()> {
    let (_, mentions) = load_mentions(data, rc.window)?;
    let retriever = open_retriever(retrieval, rc.k)?;
    let mut records = Vec::with_capacity(mentions.len());
    for m in &mentions {
        let candidates = retriever.retrieve(m).input("retrieving candidates")?;
        records.push(PromptRecord::new(m, &candidates));
    }
    write_file(out, to_jsonl(&records))
}

fn cmd_parse_responses(prompts: &Path, responses: &Path, out: &Path) -> CliResult<()> {
    let prompt_text = fs::read_to_string(prompts).input(&format!("reading {}", prompts.display()))?;
    let records: Vec<PromptRecord> = from_jsonl(&prompt_text).input("parsing prompt dump")?;
    let response_text = fs::read_to_string(responses).input(&format!("reading {}", responses.display()))?;
    let replies: Vec<ResponseRecord> = from_jsonl(&response_text).input("parsing responses")?;
    let by_key: std::collections::HashMap<&str, &str> = replies
        .iter()
        .map(|r| (r.mention_key.as_str(), r.response_text.as_str()))
        .collect();
    let mut predictions = Vec::with_capacity(records.len());
    for rec in &records {
        let reply = by_key.get(rec.mention_key.as_str()).copied().unwrap_or_else(|| {
            log::warn!("no response for {}; treating as NIL", rec.mention_key);
            "{}"
        });
        let prediction = rec.resolve(reply).unwrap_or_else(|e| {
            log::warn!("{}: {e}; treating as NIL", rec.mention_key);
            rec.resolve("{}").expect("empty object parses")
        });
        predictions.push(prediction);
    }
    write_file(out, predictions_to_jsonl(&predictions))
}

fn cmd_split(rc: &RunConfig, data: &DataArgs, out_dir: &Path) -> CliResult<()> {
    let docs = load_documents(data)?;
    let splits = stratified_split(&docs, SplitRatios::default(), rc.seed).input("splitting dataset")?;
    fs::create_dir_all(out_dir).input(&format!("creating {}", out_dir.display()))?;
    for (name, split) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        save_dataset(out_dir.join(format!("{name}.json")), &split.documents).input("writing split")?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let rc = RunConfig::resolve(cli)?;
    match &cli.command {
        Command::BuildIndex { embeddings, out } => cmd_build_index(embeddings, out),
        Command::BuildLookup {
            entities,
            class_edges,
            type_facts,
            date_facts,
            out,
        } => cmd_build_lookup(
            entities,
            class_edges.as_deref(),
            type_facts.as_deref(),
            date_facts.as_deref(),
            out,
        ),
        Command::Train {
            data,
            retrieval,
            out,
            features_out,
            tuning,
        } => {
            let hp = hyperparams(&rc, tuning)?;
            cmd_train(&rc, data, retrieval, &hp, out, features_out.as_deref())
        }
        Command::Link {
            data,
            retrieval,
            model,
            out,
        } => cmd_link(&rc, data, retrieval, model, out),
        Command::Evaluate {
            data,
            predictions,
            token_overlap,
            table,
            out,
        } => cmd_evaluate(&rc, data, predictions, *token_overlap, *table, out.as_deref()),
        Command::Explain {
            model,
            features,
            block_metric,
            out,
            ..
        } => cmd_explain(&rc, model, features, *block_metric, out.as_deref()),
        Command::Prompt { data, retrieval, out } => cmd_prompt(&rc, data, retrieval, out),
        Command::ParseResponses {
            prompts,
            responses,
            out,
        } => cmd_parse_responses(prompts, responses, out),
        Command::Split { data, out_dir } => cmd_split(&rc, data, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
