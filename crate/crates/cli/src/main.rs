//! Pipeline driver: wires the library stages into subcommands.
//!
//! Exit codes: 0 on success, 1 on any fatal error, 2 when a stage finished
//! but produced an empty result (for example no mined pairs).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use paragen::pipeline::{
    render_report_file, run_adapt, run_eval, run_generate, run_mine, run_pretrain, run_sample,
    run_train_nlu, PipelineConfig,
};
use paragen::seq2seq::Scheme;

#[derive(Parser)]
#[command(
    name = "paragen",
    version,
    about = "Paraphrase-based data augmentation for small skill grammars"
)]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured working directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    NoSlotCopy,
    FixedEncoder,
    FineTune,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::NoSlotCopy => Scheme::NoSlotCopy,
            SchemeArg::FixedEncoder => Scheme::FixedEncoder,
            SchemeArg::FineTune => Scheme::FineTune,
        }
    }
}

#[derive(Args)]
struct DecodeOverrides {
    /// Beam width.
    #[arg(long)]
    beam: Option<usize>,
    /// Hypotheses kept per input.
    #[arg(long)]
    nbest: Option<usize>,
    /// Maximum generated length.
    #[arg(long = "max-len")]
    max_len: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train and held-out datasets from the grammar's template split.
    Sample,
    /// Mine paraphrase pairs and build the surrogate map.
    Mine {
        /// Utterance dataset to mine (defaults to the sampled train data).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Stage one: translation pretraining on the parallel corpora.
    Pretrain,
    /// Stage two: retrain the decoder on mined pairs under a scheme.
    Adapt {
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        /// Stage-one checkpoint (defaults to the workdir one).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Mined pairs file (defaults to the workdir one).
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Generate paraphrases and write the augmented dataset.
    Generate {
        /// Stage-two checkpoint to decode with.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input utterances (defaults to the sampled train data).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Augmented dataset destination (defaults into the workdir).
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeOverrides,
    },
    /// Train the intent classifier and slot tagger on a dataset.
    TrainNlu {
        #[arg(long)]
        data: PathBuf,
        /// Where to write the two model files (defaults to the workdir).
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
    /// Train baselines on each dataset, evaluate on the held-out set, and
    /// write the report.
    Eval {
        #[arg(long)]
        baseline: PathBuf,
        /// Augmented datasets as name=path, repeatable.
        #[arg(long = "augmented", value_parser = parse_named_path)]
        augmented: Vec<(String, PathBuf)>,
        #[arg(long)]
        test: PathBuf,
    },
    /// Re-render a saved JSON report as the plain-text table.
    Report {
        /// Report file (defaults to the workdir report.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got {s:?}")),
    }
}

fn load_config(cli: &Cli) -> paragen::Result<PipelineConfig> {
    let path = cli
        .config
        .clone()
        .unwrap_or_else(|| PathBuf::from("paragen.json"));
    let mut config = PipelineConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workdir) = &cli.workdir {
        config.workdir = workdir.clone();
    }
    Ok(config)
}

/// 2 when the stage ran fine but produced nothing useful.
const EMPTY_RESULT: u8 = 2;

fn run(cli: &Cli) -> paragen::Result<u8> {
    match &cli.command {
        Command::Sample => {
            let config = load_config(cli)?;
            let outcome = run_sample(&config)?;
            println!(
                "sampled {} training and {} held-out utterances into {}",
                outcome.train_rows,
                outcome.test_rows,
                config.workdir.display()
            );
            Ok(if outcome.train_rows == 0 { EMPTY_RESULT } else { 0 })
        }
        Command::Mine { input } => {
            let config = load_config(cli)?;
            let outcome = run_mine(&config, input.as_deref())?;
            println!(
                "mined {} utterances into {} groups and {} pairs",
                outcome.utterances, outcome.groups, outcome.pairs
            );
            if outcome.pairs == 0 {
                eprintln!(
                    "no pairs: utterances need shared skill, intent and slot types, \
                     at least one slot, and enough word overlap"
                );
                return Ok(EMPTY_RESULT);
            }
            Ok(0)
        }
        Command::Pretrain => {
            let config = load_config(cli)?;
            let outcome = run_pretrain(&config)?;
            println!(
                "pretrained on {} pairs over {} corpora ({} skipped as over-long)",
                outcome.pairs, outcome.corpora, outcome.skipped_long
            );
            println!(
                "trainable parameters: {} | final loss {:.4} | checkpoint {}",
                outcome.trainable_parameters,
                outcome.final_loss,
                outcome.checkpoint.display()
            );
            Ok(0)
        }
        Command::Adapt {
            scheme,
            checkpoint,
            pairs,
        } => {
            let config = load_config(cli)?;
            let outcome = run_adapt(
                &config,
                Scheme::from(*scheme),
                checkpoint.as_deref(),
                pairs.as_deref(),
            )?;
            println!(
                "adapted on {} pairs ({} skipped, {} slot tokens) | final loss {:.4}",
                outcome.pairs_used, outcome.skipped_long, outcome.slot_token_count, outcome.final_loss
            );
            println!("checkpoint {}", outcome.checkpoint.display());
            Ok(0)
        }
        Command::Generate {
            checkpoint,
            input,
            output,
            decode,
        } => {
            let mut config = load_config(cli)?;
            if let Some(beam) = decode.beam {
                config.decode.beam_width = beam;
            }
            if let Some(nbest) = decode.nbest {
                config.decode.n_best = nbest;
            }
            if let Some(max_len) = decode.max_len {
                config.decode.max_len = max_len;
            }
            let outcome = run_generate(&config, checkpoint, input.as_deref(), output.as_deref())?;
            println!(
                "generated {} paraphrases for {} inputs ({} inputs had everything rejected, {} slotless skipped)",
                outcome.generated, outcome.inputs, outcome.all_rejected_inputs, outcome.skipped_slotless
            );
            let stats = &outcome.stats;
            println!(
                "hypotheses {} | accepted {} | rejected {} (missing {}, extra {}, wrong type {}, duplicate {}) | identity {} | deduplicated {}",
                stats.hypotheses,
                stats.accepted,
                stats.rejected(),
                stats.missing_slot,
                stats.extra_slot,
                stats.wrong_type,
                stats.duplicate_index,
                stats.identity_dropped,
                stats.deduplicated
            );
            Ok(if outcome.generated == 0 { EMPTY_RESULT } else { 0 })
        }
        Command::TrainNlu { data, out_dir } => {
            let config = load_config(cli)?;
            let (ic, ner) = run_train_nlu(&config, data, out_dir.as_deref())?;
            println!("wrote {} and {}", ic.display(), ner.display());
            Ok(0)
        }
        Command::Eval {
            baseline,
            augmented,
            test,
        } => {
            let config = load_config(cli)?;
            let report = run_eval(&config, baseline, augmented, test)?;
            print!("{}", report.render_text());
            println!(
                "report written to {} and {}",
                config.report_text_path().display(),
                config.report_json_path().display()
            );
            Ok(0)
        }
        Command::Report { report } => {
            let path = match report {
                Some(path) => path.clone(),
                None => load_config(cli)?.report_json_path(),
            };
            print!("{}", render_report_file(&path)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(1)
        }
    }
}
