//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! checkpoint error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    build_vocab, class_counts, load_glove, parse_corpus, parse_corpus_str, truncate_example, Batch, Example, Polarity,
};
use crate::error::{AenError, Result};
use crate::harness::{evaluate, load_checkpoint, save_checkpoint, train, TrainConfig};
use crate::loss::argmax;
use crate::model::{forward, init_params, AenParams};

#[derive(Debug, Parser)]
#[command(name = "aen", version, about = "Attentional encoder network for targeted sentiment")]
struct Cli {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on one split, select on another, and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Pretrained vectors, `token v1 ... vd` per line.
        #[arg(long)]
        glove: Option<PathBuf>,
        /// Checkpoint destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch metrics as tab-separated lines.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Accuracy and macro-F1 of a checkpoint on a corpus file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Class probabilities for one sentence and target.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Sentence, either containing `$T$` or containing the target verbatim.
        #[arg(long)]
        context: String,
        #[arg(long)]
        target: String,
    },
    /// Class counts of a corpus file.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Trainable parameter counts per block.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Maps an error to its exit code.
pub fn exit_code(err: &AenError) -> i32 {
    match err {
        AenError::Config(_) | AenError::Contract(_) => 1,
        AenError::Parse { .. }
        | AenError::Format(_)
        | AenError::Integrity(_)
        | AenError::Io(_)
        | AenError::Lookup { .. } => 2,
        AenError::NonFiniteLoss { .. } | AenError::Degenerate(_) | AenError::Shape { .. } => 3,
    }
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| AenError::Config(format!("no {what} given (flag or config key)")))
}

fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train { config, train: train_path, eval, glove, out, results } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let train_path = required(train_path.or(cfg.train_path.clone()), "training corpus")?;
            let eval_path = required(eval.or(cfg.eval_path.clone()), "evaluation corpus")?;
            let out = required(out.or(cfg.checkpoint_path.clone()), "checkpoint path")?;
            let glove = glove.or(cfg.glove_path.clone());
            run_train(&cfg, &train_path, &eval_path, glove.as_deref(), &out, results.as_deref())
        }
        Command::Eval { ckpt, data } => {
            let ck = load_checkpoint(ckpt)?;
            let vocab = ck.vocab.ok_or_else(|| AenError::Integrity("checkpoint carries no vocabulary".into()))?;
            let examples = parse_corpus(data)?;
            let e = evaluate(&ck.params, &ck.config, &vocab, &examples)?;
            Ok(format!("accuracy {:.4}\nmacro_f1 {:.4}\n", e.accuracy, e.macro_f1))
        }
        Command::Predict { ckpt, context, target } => {
            let ck = load_checkpoint(ckpt)?;
            let vocab = ck.vocab.ok_or_else(|| AenError::Integrity("checkpoint carries no vocabulary".into()))?;
            let example = if context.contains("$T$") {
                parse_corpus_str(&format!("{context}\n{target}\n0\n"), "<args>")?.remove(0)
            } else {
                Example::from_text(&context, &target, Polarity::Neutral)?
            };
            let example = truncate_example(&example, ck.config.max_context_len, ck.config.max_target_len)
                .ok_or_else(|| AenError::contract("target does not survive truncation"))?;
            let batch = Batch::encode(&[&example], &vocab)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let trace = forward(&ck.params, &ck.config, batch.inputs(0), false, &mut rng)?;
            let probs = trace.probs.data();
            let mut s = String::new();
            for (p, v) in Polarity::ALL.iter().zip(probs) {
                let _ = writeln!(s, "{:<8} {:.4}", p.name(), v);
            }
            let label = Polarity::from_index(argmax(probs)).expect("three classes");
            let _ = writeln!(s, "label {label}");
            Ok(s)
        }
        Command::Stats { data } => {
            let c = class_counts(&parse_corpus(data)?);
            Ok(format!("positive {}, neutral {}, negative {}\n", c.positive, c.neutral, c.negative))
        }
        Command::Params { config } => {
            let cfg = match config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let params: AenParams<f32> = init_params(&cfg.model, 2, &mut rng)?;
            let mut s = String::new();
            for (name, n) in params.block_counts() {
                let _ = writeln!(s, "{name:<20} {n}");
            }
            let _ = writeln!(s, "{:<20} {}", "total", params.param_count());
            Ok(s)
        }
    }
}

fn run_train(
    cfg: &TrainConfig,
    train_path: &Path,
    eval_path: &Path,
    glove: Option<&Path>,
    out: &Path,
    results: Option<&Path>,
) -> Result<String> {
    let train_examples = parse_corpus(train_path)?;
    let eval_examples = parse_corpus(eval_path)?;
    let all: Vec<Example> = train_examples.iter().chain(&eval_examples).cloned().collect();
    let vocab = build_vocab(&all);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let embedding = match glove {
        Some(p) => {
            let g = load_glove(p, &vocab, cfg.model.d_emb, &mut rng)?;
            log::info!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * g.coverage(&vocab));
            g.matrix
        }
        None => {
            log::warn!("no pretrained vectors given, every row is random");
            crate::data::load_glove_from(std::io::empty(), &vocab, cfg.model.d_emb, &mut rng)?.matrix
        }
    };

    let outcome = train(cfg, &vocab, embedding, &train_examples, &eval_examples)?;
    save_checkpoint(&outcome.best, &cfg.model, Some(&vocab), out)?;

    let mut table = String::new();
    for m in &outcome.history {
        let _ = writeln!(table, "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}", m.epoch, m.train_loss, m.accuracy, m.macro_f1, m.seconds);
    }
    let b = outcome.best_metrics();
    let _ = writeln!(table, "best\t{}\t{:.6}\t{:.6}", b.epoch, b.accuracy, b.macro_f1);
    if let Some(p) = results {
        fs::write(p, &table)?;
    }
    let last = outcome.history.last().expect("at least one epoch");
    Ok(format!(
        "best epoch {} accuracy {:.4} macro_f1 {:.4}\nfinal epoch {} accuracy {:.4} macro_f1 {:.4}\n",
        b.epoch, b.accuracy, b.macro_f1, last.epoch, last.accuracy, last.macro_f1
    ))
}
