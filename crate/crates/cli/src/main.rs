//! `dr`: prepare data, train, evaluate, query and benchmark path-indexed
//! retrieval models. Every result is printed as one JSON object per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use deep_retrieval::bench::{self, BenchConfig};
use deep_retrieval::checkpoint::{self, Checkpoint, FORMAT_VERSION};
use deep_retrieval::config::RunConfig;
use deep_retrieval::data::{self, InteractionRecord, ItemVocab};
use deep_retrieval::pipeline::{self, RetrievalMode};
use deep_retrieval::structure::{expected_structure_param_count, UserContext};
use deep_retrieval::DrError;
use serde::Serialize;
use serde_json::Value;

#[derive(Parser)]
#[command(
    name = "dr",
    version,
    about = "Learnable path index for candidate retrieval"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration layered on a profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base profile: movielens, amazon or synthetic.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Filter raw ratings into implicit-feedback interactions.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        min_rating: Option<f64>,
        #[arg(long)]
        min_reviews: Option<usize>,
    },
    /// Generate a planted-cluster interaction corpus.
    Synth {
        #[arg(long)]
        output: PathBuf,
        /// Also write `item_id<TAB>cluster` lines here.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        items_per_cluster: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        interactions_per_user: Option<usize>,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Precision, recall and F-measure on held-out users.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        mode: ModeArgs,
        /// Evaluate the validation users instead of the test users.
        #[arg(long)]
        validation: bool,
    },
    /// Top-k items for one behavior sequence of raw item ids.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated raw item ids, oldest first.
        #[arg(long)]
        user_seq: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        mode: ModeArgs,
        /// Exact top-k over all items instead of beam search.
        #[arg(long, conflicts_with_all = ["beam", "adaptive"])]
        brute_force: bool,
    },
    /// Per-query latency of beam retrieval against exhaustive top-k.
    Bench {
        #[arg(long, required_unless_present = "corpus_size")]
        checkpoint: Option<PathBuf>,
        /// Benchmark a random model of this many items instead.
        #[arg(long, conflicts_with = "checkpoint")]
        corpus_size: Option<usize>,
        #[arg(long, default_value_t = bench::MIN_QUERIES)]
        queries: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        beam: Option<usize>,
        /// Worker count; `DR_THREADS` caps it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarize a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "nodes", short = 'K')]
    k: Option<usize>,
    #[arg(long = "depth", short = 'D')]
    d: Option<usize>,
    #[arg(long = "paths-per-item", short = 'J')]
    j: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    test_users: Option<usize>,
    #[arg(long)]
    validation_users: Option<usize>,
}

#[derive(Args)]
struct ModeArgs {
    #[arg(long)]
    beam: Option<usize>,
    /// Size the beam for `lo·k..hi·k` candidates, e.g. `5,10`.
    #[arg(long, conflicts_with = "beam", value_parser = parse_range)]
    adaptive: Option<(f64, f64)>,
}

impl ModeArgs {
    fn mode(&self, config: &RunConfig) -> RetrievalMode {
        match (self.beam, self.adaptive) {
            (Some(b), _) => RetrievalMode::Beam(b),
            (None, Some((lo, hi))) => RetrievalMode::Adaptive(lo, hi),
            (None, None) => RetrievalMode::from_config(config),
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo > 0.0 && lo <= hi) {
        return Err("need 0 < lo <= hi".into());
    }
    Ok((lo, hi))
}

/// A problem with how the command was invoked (exit status 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<DrError>() {
        Some(DrError::Input(_) | DrError::Config(_)) => 2,
        _ => 1,
    }
}

/// Print `value` as one JSON line tagged with `record`.
fn emit(out: &mut impl Write, record: &str, value: &impl Serialize) -> anyhow::Result<()> {
    let mut v = serde_json::to_value(value)?;
    let mut line = serde_json::Map::new();
    line.insert("record".into(), Value::String(record.into()));
    match v.take() {
        Value::Object(fields) => line.extend(fields),
        other => {
            line.insert("value".into(), other);
        }
    }
    writeln!(out, "{}", Value::Object(line))?;
    Ok(())
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut table: toml::Table = text
                .parse()
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if let Some(p) = &global.profile {
                match table.get("profile") {
                    Some(toml::Value::String(existing)) if existing != p => {
                        bail!(usage(format!(
                            "--profile {p} conflicts with profile {existing:?} in the config file"
                        )))
                    }
                    _ => {
                        table.insert("profile".into(), toml::Value::String(p.clone()));
                    }
                }
            }
            RunConfig::from_toml(&table.to_string())?
        }
        None => RunConfig::profile(global.profile.as_deref().unwrap_or("movielens"))?,
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
        config.synth.seed = seed;
    }
    Ok(config)
}

fn read_records(path: &Path) -> anyhow::Result<Vec<InteractionRecord>> {
    let report = data::read_interactions_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    if report.skipped > 0 {
        log::warn!(
            "{}: skipped {} malformed rows",
            path.display(),
            report.skipped
        );
    }
    Ok(report.records)
}

fn load(path: &Path) -> anyhow::Result<Checkpoint> {
    checkpoint::load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

fn run(cli: Cli, out: &mut impl Write) -> anyhow::Result<()> {
    let config = load_config(&cli.global)?;
    match cli.command {
        Command::Preprocess {
            input,
            output,
            min_rating,
            min_reviews,
        } => {
            let mut cfg = config.data.preprocess;
            cfg.min_rating = min_rating.unwrap_or(cfg.min_rating);
            cfg.min_reviews = min_reviews.unwrap_or(cfg.min_reviews);
            let raw = read_records(&input)?;
            emit(out, "input", &data::corpus_stats(&raw))?;
            let (kept, stats) = data::preprocess(&raw, &cfg);
            let file = fs::File::create(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            data::write_interactions(&kept, BufWriter::new(file))?;
            emit(out, "preprocessed", &stats)?;
        }
        Command::Synth {
            output,
            labels,
            clusters,
            items_per_cluster,
            users,
            interactions_per_user,
        } => {
            let mut cfg = config.synth.clone();
            cfg.clusters = clusters.unwrap_or(cfg.clusters);
            cfg.items_per_cluster = items_per_cluster.unwrap_or(cfg.items_per_cluster);
            cfg.users = users.unwrap_or(cfg.users);
            cfg.interactions_per_user = interactions_per_user.unwrap_or(cfg.interactions_per_user);
            let corpus = data::synth_clusters(&cfg)?;
            let file = fs::File::create(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            data::write_interactions(&corpus.records, BufWriter::new(file))?;
            if let Some(path) = labels {
                let mut w = BufWriter::new(fs::File::create(&path)?);
                for (item, cluster) in corpus.item_cluster.iter().enumerate() {
                    writeln!(w, "{item}\t{cluster}")?;
                }
                w.flush()?;
            }
            emit(out, "synth", &data::corpus_stats(&corpus.records))?;
        }
        Command::Train {
            data,
            out: dir,
            overrides,
        } => {
            let config = apply_overrides(config, &overrides)?;
            let records = read_records(&data)?;
            let prepared = pipeline::prepare(&records, &config)?;
            log::info!(
                "{} items, {} training samples, {} test users",
                prepared.vocab.len(),
                prepared.training.len(),
                prepared.split.test.len()
            );
            let mut lines = Vec::new();
            let ckpt = pipeline::train(&config, &prepared, |stats| {
                lines.push(serde_json::to_value(stats))
            })?;
            for line in lines {
                emit(out, "epoch", &line?)?;
            }
            checkpoint::save_checkpoint(&ckpt, &dir)
                .with_context(|| format!("writing {}", dir.display()))?;
            emit(
                out,
                "saved",
                &serde_json::json!({ "checkpoint": dir.display().to_string(), "items": ckpt.item_ids.len() }),
            )?;
        }
        Command::Evaluate {
            checkpoint,
            data,
            k,
            mode,
            validation,
        } => {
            let ckpt = load(&checkpoint)?;
            let mut config = ckpt.config.clone();
            if let Some(seed) = cli.global.seed {
                config.seed = seed;
            }
            let k = k.unwrap_or(config.eval.k);
            check_k(k, ckpt.model.num_items())?;
            let records = read_records(&data)?;
            let vocab = ItemVocab::from_ids(ckpt.item_ids.clone())?;
            let prepared = pipeline::prepare_with_vocab(&records, vocab, &config)?;
            let users = if validation {
                &prepared.split.validation
            } else {
                &prepared.split.test
            };
            if users.is_empty() {
                bail!(usage("the selected split holds no users"));
            }
            for m in [mode.mode(&config), RetrievalMode::BruteForce] {
                emit(
                    out,
                    "metrics",
                    &pipeline::evaluate_model(&ckpt.model, users, k, m)?,
                )?;
            }
        }
        Command::Retrieve {
            checkpoint,
            user_seq,
            k,
            mode,
            brute_force,
        } => {
            let ckpt = load(&checkpoint)?;
            check_k(k, ckpt.model.num_items())?;
            let vocab = ItemVocab::from_ids(ckpt.item_ids.clone())?;
            let behavior = parse_user_seq(&user_seq, &vocab)?;
            let ctx = UserContext::new(behavior, ckpt.model.config.max_seq_len);
            let retriever = ckpt.model.retriever();
            let items = if brute_force {
                retriever.brute_force(&ctx, k)?
            } else {
                match mode.mode(&ckpt.config) {
                    RetrievalMode::Beam(b) => retriever.retrieve(&ctx, k, b)?.items,
                    RetrievalMode::Adaptive(lo, hi) => {
                        retriever.retrieve_adaptive(&ctx, k, (lo, hi))?.items
                    }
                    RetrievalMode::BruteForce => retriever.brute_force(&ctx, k)?,
                }
            };
            for (rank, r) in items.iter().enumerate() {
                emit(
                    out,
                    "item",
                    &serde_json::json!({ "rank": rank + 1, "item": vocab.raw_id(r.item), "score": r.score }),
                )?;
            }
        }
        Command::Bench {
            checkpoint,
            corpus_size,
            queries,
            warmup,
            k,
            beam,
            threads,
        } => {
            let model = match (checkpoint, corpus_size) {
                (Some(path), _) => load(&path)?.model,
                (None, Some(n)) => bench::random_model(&config.structure, n, config.seed)?,
                (None, None) => bail!(usage("pass --checkpoint or --corpus-size")),
            };
            check_k(k, model.num_items())?;
            let cfg = BenchConfig {
                queries,
                warmup,
                k,
                beam,
                threads,
                seed: config.seed,
                ..BenchConfig::default()
            };
            emit(out, "bench", &bench::bench(&model, &cfg)?)?;
        }
        Command::Inspect { checkpoint } => {
            let ckpt = load(&checkpoint)?;
            let m = &ckpt.model;
            emit(
                out,
                "inspect",
                &serde_json::json!({
                    "format_version": FORMAT_VERSION,
                    "profile": ckpt.config.profile,
                    "seed": ckpt.config.seed,
                    "items": m.num_items(),
                    "structure": m.config,
                    "structure_params": expected_structure_param_count(&m.config),
                    "top_path_size": m.mapping.top_path_size(),
                    "nonempty_paths": m.mapping.nonempty_paths(),
                    "path_size_histogram": m.mapping.size_histogram(),
                }),
            )?;
        }
    }
    Ok(())
}

fn apply_overrides(mut config: RunConfig, o: &TrainOverrides) -> anyhow::Result<RunConfig> {
    let s = &mut config.structure;
    s.k = o.k.unwrap_or(s.k);
    s.d = o.d.unwrap_or(s.d);
    s.j = o.j.unwrap_or(s.j);
    s.beam = o.beam.unwrap_or(s.beam);
    s.alpha = o.alpha.unwrap_or(s.alpha);
    let t = &mut config.training;
    t.epochs = o.epochs.unwrap_or(t.epochs);
    t.batch_size = o.batch_size.unwrap_or(t.batch_size);
    config.data.test_users = o.test_users.unwrap_or(config.data.test_users);
    config.data.validation_users = o.validation_users.unwrap_or(config.data.validation_users);
    config.validate()?;
    Ok(config)
}

fn check_k(k: usize, items: usize) -> anyhow::Result<()> {
    if k == 0 || k > items {
        bail!(usage(format!(
            "--k {k} must be between 1 and the corpus size {items}"
        )));
    }
    Ok(())
}

fn parse_user_seq(text: &str, vocab: &ItemVocab) -> anyhow::Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let raw: u64 = s
                .parse()
                .map_err(|_| usage(format!("bad item id {s:?} in --user-seq")))?;
            vocab
                .index_of(raw)
                .ok_or_else(|| usage(format!("item {raw} is not in the checkpoint vocabulary")))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out).and_then(|()| Ok(out.flush()?)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}
