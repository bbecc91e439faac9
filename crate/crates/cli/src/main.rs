//! `bullyscan` command-line entry point.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use bullyscan::corpus::{self, Corpus, CorpusError, Delimiter};
use bullyscan::embeddings::{
    EmbedError, Embedder, EmbeddingCache, FileProvider, ProviderConfig, ProviderKind,
};
use bullyscan::metrics::{render_table, MetricsError, MetricsReport};
use bullyscan::trainer::{
    encode_checkpoint, evaluate, load_checkpoint, save_checkpoint, split_data,
    train_with_observer, Checkpoint, CheckpointError, Classifier, TrainConfig, TrainError,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "bullyscan", version, about = "Cyberbullying detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and label a raw dataset into a canonical corpus file.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = DelimiterArg::Auto)]
        delimiter: DelimiterArg,
    },
    /// Embed every record of a corpus into the cache and report availability.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Train on the training split of a corpus and write a checkpoint.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Score a checkpoint on the held-out split of its corpus.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics JSON destination; the table is printed to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Score every record of `--input` instead of the held-out split.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Classify `--text`, or each line of stdin.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: Option<String>,
        /// Corpus whose texts the file provider may look up.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Train the baseline and both hybrids on one split and tabulate them.
    Compare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// `hash` substitutes offline hash embeddings for both hybrids.
        #[arg(long, value_enum, default_value_t = ProvidersArg::Configured)]
        providers: ProvidersArg,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DelimiterArg {
    Auto,
    Comma,
    Tab,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ProvidersArg {
    Configured,
    Hash,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Remote,
    File,
    Hash,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// TOML file with training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Learned embedding table instead of a provider.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Default)]
struct ProviderArgs {
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    /// Remote embedding model name.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    embeddings_file: Option<PathBuf>,
    /// Persistent embedding cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Usage = 1,
    Data = 2,
    Provider = 3,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Provider => "provider",
        }
    }
}

#[derive(Debug)]
struct Failure {
    kind: Kind,
    reason: String,
}

fn fail(kind: Kind, reason: impl Into<String>) -> Failure {
    Failure {
        kind,
        reason: reason.into(),
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        fail(Kind::Data, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        fail(Kind::Data, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        fail(Kind::Data, e.to_string())
    }
}

impl From<EmbedError> for Failure {
    fn from(e: EmbedError) -> Self {
        let kind = if e.is_provider_error() {
            Kind::Provider
        } else if matches!(e, EmbedError::Config(_)) {
            Kind::Usage
        } else {
            Kind::Data
        };
        fail(kind, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let reason = e.to_string();
        let kind = match e {
            TrainError::Embed(inner) => Failure::from(inner).kind,
            TrainError::Record { source, .. } => Failure::from(*source).kind,
            TrainError::Config(_) | TrainError::ProviderMismatch { .. } => Kind::Usage,
            _ => Kind::Data,
        };
        fail(kind, reason)
    }
}

fn io_fail(path: &Path, e: io::Error) -> Failure {
    fail(Kind::Data, format!("{}: {e}", path.display()))
}

fn load_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| fail(Kind::Usage, format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| {
                let msg = e.to_string().replace('\n', " ");
                fail(Kind::Usage, format!("{}: {}", p.display(), msg.trim()))
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.epochs {
        cfg.epochs = n;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(h) = args.hidden {
        cfg.hidden_size = h;
    }
    cfg.baseline_mode |= args.baseline;
    Ok(cfg)
}

fn apply_provider_args(cfg: &mut ProviderConfig, args: &ProviderArgs) {
    if let Some(p) = args.provider {
        cfg.kind = match p {
            ProviderArg::Remote => ProviderKind::Remote,
            ProviderArg::File => ProviderKind::File,
            ProviderArg::Hash => ProviderKind::Hash,
        };
        if cfg.kind == ProviderKind::Hash {
            cfg.dim.get_or_insert(64);
            cfg.seed.get_or_insert(0);
        }
    }
    if let Some(m) = &args.model {
        cfg.model_name = Some(m.clone());
    }
    if let Some(u) = &args.endpoint {
        cfg.endpoint_url = Some(u.clone());
    }
    if let Some(f) = &args.embeddings_file {
        cfg.file_path = Some(f.clone());
    }
}

/// The file provider additionally learns the texts of `corpus`, so free-text
/// lookups of corpus records succeed.
fn build_embedder(cfg: &ProviderConfig, cache: Option<&Path>, corpus: Option<&Corpus>) -> Result<Embedder, Failure> {
    if cfg.kind != ProviderKind::File {
        return Ok(Embedder::from_config(cfg, cache)?);
    }
    cfg.validate()?;
    let mut provider = FileProvider::open(cfg.file_path.as_deref().unwrap())?;
    if let Some(c) = corpus {
        provider.register_texts(c);
    }
    let cache = match cache {
        Some(p) => EmbeddingCache::open(p)?,
        None => EmbeddingCache::in_memory(),
    };
    Ok(Embedder::new(Arc::new(provider), cache).with_parallelism(cfg.max_parallel_requests, cfg.batch_size))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn print_line(value: &serde_json::Value) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{value}");
}

/// Epoch logs go to stdout as JSON lines when `echo` is set.
fn run_train(cfg: &TrainConfig, train_set: &Corpus, embedder: Option<&Embedder>, echo: bool) -> Result<Checkpoint, Failure> {
    Ok(train_with_observer(cfg, train_set, embedder, |log| {
        log::info!(
            "epoch {} loss {:.4} finished in {:.2}s",
            log.epoch,
            log.mean_loss,
            log.wall_time_secs
        );
        if echo {
            print_line(&serde_json::to_value(log).expect("log serializes"));
        }
    })?)
}

fn cmd_preprocess(input: &Path, output: &Path, delimiter: DelimiterArg) -> Result<(), Failure> {
    let delimiter = match delimiter {
        DelimiterArg::Auto => Delimiter::Auto,
        DelimiterArg::Comma => Delimiter::Comma,
        DelimiterArg::Tab => Delimiter::Tab,
    };
    let pre = corpus::preprocess(input, delimiter)?;
    for e in &pre.row_errors {
        log::warn!("row {}: {}", e.row, e.reason);
    }
    pre.corpus.write(output)?;
    print_line(&json!({
        "summary": pre.summary,
        "input_sha256": pre.corpus.provenance,
        "output_sha256": sha256_hex(&pre.corpus.to_canonical_bytes()),
    }));
    Ok(())
}

fn cmd_embed(input: &Path, train: &TrainArgs, provider: &ProviderArgs) -> Result<(), Failure> {
    let mut cfg = load_config(train)?;
    apply_provider_args(&mut cfg.provider, provider);
    let corpus = Corpus::read(input)?;
    let embedder = build_embedder(&cfg.provider, provider.cache.as_deref(), Some(&corpus))?;
    let map = embedder.embed_corpus(&corpus)?;
    let vectors: usize = map.values().map(|s| s.len()).sum();
    print_line(&json!({
        "records": corpus.len(),
        "embedded": map.len(),
        "vectors": vectors,
        "dim": map.values().next().map(|s| s.dim()),
        "provider_tag": embedder.provider_tag(),
        "model_tag": embedder.model_tag(),
        "provider_calls": embedder.provider_calls(),
        "cache_entries": embedder.cache().len(),
    }));
    Ok(())
}

fn cmd_train(input: &Path, output: &Path, train: &TrainArgs, provider: &ProviderArgs) -> Result<(), Failure> {
    let mut cfg = load_config(train)?;
    apply_provider_args(&mut cfg.provider, provider);
    cfg.validate()?;
    let corpus = Corpus::read(input)?;
    let (train_set, _) = split_data(&corpus, cfg.split_fraction, cfg.seed)?;
    let embedder = if cfg.baseline_mode {
        None
    } else {
        Some(build_embedder(&cfg.provider, provider.cache.as_deref(), Some(&corpus))?)
    };
    let ckpt = run_train(&cfg, &train_set, embedder.as_ref(), true)?;
    save_checkpoint(&ckpt, output)?;
    Ok(())
}

fn checkpoint_embedder(
    ckpt: &Checkpoint,
    provider: &ProviderArgs,
    corpus: Option<&Corpus>,
) -> Result<Option<Embedder>, Failure> {
    if ckpt.model.table.is_some() {
        return Ok(None);
    }
    let mut cfg = ckpt.config.provider.clone();
    apply_provider_args(&mut cfg, provider);
    Ok(Some(build_embedder(&cfg, provider.cache.as_deref(), corpus)?))
}

fn cmd_evaluate(
    input: &Path,
    ckpt_path: &Path,
    output: Option<&Path>,
    all: bool,
    provider: &ProviderArgs,
) -> Result<(), Failure> {
    let ckpt_bytes = fs::read(ckpt_path).map_err(|e| io_fail(ckpt_path, e))?;
    let ckpt = bullyscan::trainer::decode_checkpoint(&ckpt_bytes)?;
    let corpus = Corpus::read(input)?;
    let test = if all {
        corpus.clone()
    } else {
        if corpus.provenance != ckpt.corpus_provenance {
            return Err(fail(
                Kind::Data,
                format!(
                    "corpus digest {} differs from the checkpoint's {}; pass --all to score it in full",
                    corpus.provenance, ckpt.corpus_provenance
                ),
            ));
        }
        split_data(&corpus, ckpt.config.split_fraction, ckpt.config.seed)?.1
    };
    let embedder = checkpoint_embedder(&ckpt, provider, Some(&corpus))?;
    let report = evaluate(&ckpt, embedder.as_ref(), &test)?;
    let doc = json!({
        "config": ckpt.config,
        "provider_tag": ckpt.provider_tag,
        "model_tag": ckpt.model_tag,
        "checkpoint_sha256": sha256_hex(&ckpt_bytes),
        "corpus_sha256": corpus.provenance,
        "scope": if all { "all" } else { "test" },
        "metrics": report,
    });
    if let Some(p) = output {
        write_json(p, &doc)?;
    }
    print!("{}", render_table(&[(row_name(&ckpt), &report)]));
    Ok(())
}

fn row_name(ckpt: &Checkpoint) -> String {
    if ckpt.model.table.is_some() {
        "Baseline RNN".to_string()
    } else {
        format!("{} + RNN", ckpt.model_tag)
    }
}

fn cmd_predict(
    ckpt_path: &Path,
    text: Option<&str>,
    input: Option<&Path>,
    provider: &ProviderArgs,
) -> Result<(), Failure> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let corpus = input.map(Corpus::read).transpose()?;
    let embedder = checkpoint_embedder(&ckpt, provider, corpus.as_ref())?;
    let classifier = Classifier::new(&ckpt, embedder.as_ref())?;
    let emit = |t: &str| -> Result<(), Failure> {
        let p = classifier.predict(t)?;
        print_line(&json!({"text": t, "label": p.label, "p_bully": p.p_bully}));
        Ok(())
    };
    match text {
        Some(t) => emit(t),
        None => {
            for line in io::stdin().lock().lines() {
                let line = line.map_err(|e| fail(Kind::Data, format!("stdin: {e}")))?;
                if !line.trim().is_empty() {
                    emit(&line)?;
                }
            }
            Ok(())
        }
    }
}

fn cmd_compare(
    input: &Path,
    output: Option<&Path>,
    providers: ProvidersArg,
    train: &TrainArgs,
    provider: &ProviderArgs,
) -> Result<(), Failure> {
    let base = load_config(train)?;
    let corpus = Corpus::read(input)?;
    let (train_set, test_set) = split_data(&corpus, base.split_fraction, base.seed)?;

    let mut file_cfg = base.provider.clone();
    let mut remote_cfg = base.provider.clone();
    match providers {
        ProvidersArg::Hash => {
            let dim = base.provider.dim.unwrap_or(64);
            let seed = base.provider.seed.unwrap_or(0);
            file_cfg = ProviderConfig::hash(dim, seed);
            remote_cfg = ProviderConfig::hash(dim, seed + 1);
        }
        ProvidersArg::Configured => {
            file_cfg.kind = ProviderKind::File;
            remote_cfg.kind = ProviderKind::Remote;
            apply_provider_args(&mut file_cfg, provider);
            apply_provider_args(&mut remote_cfg, provider);
            file_cfg.kind = ProviderKind::File;
            remote_cfg.kind = ProviderKind::Remote;
        }
    }
    let suffix = if providers == ProvidersArg::Hash { " [hash]" } else { "" };

    let mut rows: Vec<(String, TrainConfig, Option<Embedder>)> = Vec::new();
    rows.push((
        "Baseline RNN".into(),
        TrainConfig {
            baseline_mode: true,
            ..base.clone()
        },
        None,
    ));
    for (name, pcfg) in [("File embeddings + RNN", file_cfg), ("Remote embeddings + RNN", remote_cfg)] {
        let cfg = TrainConfig {
            baseline_mode: false,
            provider: pcfg,
            ..base.clone()
        };
        cfg.validate()?;
        let emb = build_embedder(&cfg.provider, provider.cache.as_deref(), Some(&corpus))?;
        rows.push((format!("{name}{suffix}"), cfg, Some(emb)));
    }

    let mut reports = Vec::new();
    let mut doc_rows = Vec::new();
    for (name, cfg, emb) in &rows {
        log::info!("training {name}");
        let ckpt = run_train(cfg, &train_set, emb.as_ref(), false)?;
        let report = evaluate(&ckpt, emb.as_ref(), &test_set)?;
        doc_rows.push(json!({
            "name": name,
            "config": cfg,
            "provider_tag": ckpt.provider_tag,
            "model_tag": ckpt.model_tag,
            "checkpoint_sha256": sha256_hex(&encode_checkpoint(&ckpt)),
            "metrics": report,
        }));
        reports.push((name.clone(), report));
    }
    let table_rows: Vec<(String, &MetricsReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    let table = render_table(&table_rows);
    if let Some(p) = output {
        write_json(
            p,
            &json!({
                "corpus_sha256": corpus.provenance,
                "split_fraction": base.split_fraction,
                "seed": base.seed,
                "rows": doc_rows,
            }),
        )?;
    }
    print!("{table}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Preprocess {
            input,
            output,
            delimiter,
        } => cmd_preprocess(input, output, *delimiter),
        Command::Embed { input, train, provider } => cmd_embed(input, train, provider),
        Command::Train {
            input,
            output,
            train,
            provider,
        } => cmd_train(input, output, train, provider),
        Command::Evaluate {
            input,
            checkpoint,
            output,
            all,
            provider,
        } => cmd_evaluate(input, checkpoint, output.as_deref(), *all, provider),
        Command::Predict {
            checkpoint,
            text,
            input,
            provider,
        } => cmd_predict(checkpoint, text.as_deref(), input.as_deref(), provider),
        Command::Compare {
            input,
            output,
            providers,
            train,
            provider,
        } => cmd_compare(input, output.as_deref(), *providers, train, provider),
    }
}

fn report(f: &Failure) -> ExitCode {
    let line = json!({"error": f.kind.name(), "code": f.kind as u8, "reason": f.reason});
    eprintln!("{line}");
    ExitCode::from(f.kind as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid invocation");
            return report(&fail(Kind::Usage, first.trim_start_matches("error: ")));
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}
