use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use topicseg::corpus::{
    build_documents, corpus_stats, load_conversations, load_documents, load_wiki, save_conversations, save_documents,
    synth_generate, SegDocument, SynthConfig,
};
use topicseg::evaluation::{evaluate_corpus, DEFAULT_THRESHOLD};
use topicseg::harness::{self, load_config, load_grid, CorpusFormat, CorpusRef, RunConfig};
use topicseg::par::Execution;
use topicseg::training::{finetune, load_checkpoint, save_checkpoint, train};

#[derive(Parser)]
#[command(
    name = "seg",
    version,
    about = "Topic segmentation: corpora, training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Chat,
    Wiki,
    Docs,
}

impl From<Format> for CorpusFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Chat => CorpusFormat::Chat,
            Format::Wiki => CorpusFormat::Wiki,
            Format::Docs => CorpusFormat::Docs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    All,
    Train,
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw corpus and write it in canonical form: wiki text becomes
    /// labeled documents, chat JSONL is validated and rewritten.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        output: PathBuf,
    },
    /// Chunk conversations into labeled documents of K segments.
    BuildDocs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = harness::DEFAULT_SEGMENTS)]
        segments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic conversational corpus.
    Synth {
        #[arg(long, default_value_t = SynthConfig::default().topics)]
        topics: usize,
        #[arg(long, default_value_t = SynthConfig::default().conversations)]
        conversations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability that a word comes from the shared pool.
        #[arg(long, default_value_t = SynthConfig::default().shared_fraction)]
        shared_fraction: f64,
        #[arg(long, default_value_t = SynthConfig::default().mean_len)]
        mean_len: f64,
        #[arg(long, default_value_t = SynthConfig::default().std_len)]
        std_len: f64,
        #[arg(long, default_value_t = SynthConfig::default().min_len)]
        min_len: usize,
        #[arg(long, default_value_t = SynthConfig::default().max_len)]
        max_len: usize,
        #[arg(long, default_value_t = SynthConfig::default().min_turns)]
        min_turns: usize,
        #[arg(long, default_value_t = SynthConfig::default().max_turns)]
        max_turns: usize,
        /// Words per topic pool.
        #[arg(long, default_value_t = SynthConfig::default().topic_vocab)]
        topic_vocab: usize,
        #[arg(long, default_value_t = SynthConfig::default().shared_vocab)]
        shared_vocab: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the dataset profile of a corpus as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "docs")]
        format: Format,
        #[arg(long, default_value_t = harness::DEFAULT_SEGMENTS)]
        segments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from scratch on the train split of the configured corpus.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Continue training a checkpoint on the train split of the configured
    /// corpus; the config's model must match the checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to start from.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a checkpoint on a corpus and print the report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "docs")]
        format: Format,
        /// Which split of the corpus to score.
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = harness::DEFAULT_SEGMENTS)]
        segments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment grid and write one CSV row per cell.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score once per segment count K and write the CSV.
    SweepSegments {
        /// Run config whose corpus holds the conversations.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = harness::MIN_SEGMENTS)]
        min: usize,
        #[arg(long, default_value_t = harness::MAX_SEGMENTS)]
        max: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_any(path: &Path, format: Format, segments: usize, seed: u64) -> Result<Vec<SegDocument>> {
    Ok(CorpusRef::new(path, format.into()).load(segments, seed)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_config(path: &Path) -> Result<RunConfig> {
    load_config(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, format, output } => match format {
            Format::Chat => {
                let convs = load_conversations(&input)?;
                save_conversations(&output, &convs)?;
                eprintln!("{} conversations", convs.len());
            }
            Format::Wiki | Format::Docs => {
                let docs = match format {
                    Format::Wiki => load_wiki(&input)?,
                    _ => load_documents(&input)?,
                };
                save_documents(&output, &docs)?;
                eprintln!("{} documents", docs.len());
            }
        },
        Command::BuildDocs {
            input,
            segments,
            seed,
            output,
        } => {
            let convs = load_conversations(&input)?;
            let docs = build_documents(&convs, segments, seed)?;
            save_documents(&output, &docs)?;
            eprintln!("{} documents from {} conversations", docs.len(), convs.len());
        }
        Command::Synth {
            topics,
            conversations,
            seed,
            shared_fraction,
            mean_len,
            std_len,
            min_len,
            max_len,
            min_turns,
            max_turns,
            topic_vocab,
            shared_vocab,
            output,
        } => {
            let cfg = SynthConfig {
                topics,
                conversations,
                mean_len,
                std_len,
                min_len,
                max_len,
                min_turns,
                max_turns,
                shared_fraction,
                topic_vocab,
                shared_vocab,
                seed,
            };
            let convs = synth_generate(&cfg)?;
            save_conversations(&output, &convs)?;
        }
        Command::Stats {
            input,
            format,
            segments,
            seed,
        } => {
            let docs = load_any(&input, format, segments, seed)?;
            print_json(&corpus_stats(&docs)?)?;
        }
        Command::Train { config, checkpoint } => {
            let cfg = run_config(&config)?;
            let splits = cfg.corpus.load_splits(cfg.segments, cfg.seed)?;
            let (model, _) = train(&cfg.model, &splits.train, &splits.dev, &cfg.train_config())?;
            save_checkpoint(&model, &checkpoint)?;
            print_json(&evaluate_corpus(&model, &splits.test, cfg.threshold, cfg.execution)?)?;
        }
        Command::Finetune {
            config,
            checkpoint,
            output,
        } => {
            let cfg = run_config(&config)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let splits = cfg.corpus.load_splits(cfg.segments, cfg.seed)?;
            let (model, _) = finetune(&ckpt, &cfg.model, &splits.train, &splits.dev, &cfg.train_config())?;
            save_checkpoint(&model, &output)?;
            print_json(&evaluate_corpus(&model, &splits.test, cfg.threshold, cfg.execution)?)?;
        }
        Command::Eval {
            checkpoint,
            input,
            format,
            split,
            threshold,
            segments,
            seed,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let corpus = CorpusRef::new(&input, format.into());
            let docs = match split {
                Split::All => corpus.load(segments, seed)?,
                Split::Train => corpus.load_splits(segments, seed)?.train,
                Split::Dev => corpus.load_splits(segments, seed)?.dev,
                Split::Test => corpus.load_splits(segments, seed)?.test,
            };
            print_json(&evaluate_corpus(&model, &docs, threshold, Execution::Parallel)?)?;
        }
        Command::Grid { config, out } => {
            let spec = load_grid(&config).with_context(|| format!("loading {}", config.display()))?;
            let rows = harness::run_grid(&spec, &out)?;
            eprintln!("{} rows written to {}", rows.len(), out.display());
        }
        Command::SweepSegments { config, min, max, out } => {
            let cfg = run_config(&config)?;
            if cfg.corpus.format != CorpusFormat::Chat {
                bail!("sweep-segments needs a chat corpus, got {:?}", cfg.corpus.format);
            }
            let convs = load_conversations(&cfg.corpus.path)?;
            let rows = harness::sweep_segments(&convs, min..=max, &cfg.model, &cfg.train_config())?;
            let f = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            harness::write_sweep_csv(std::io::BufWriter::new(f), &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seg: {e:#}");
            ExitCode::FAILURE
        }
    }
}
