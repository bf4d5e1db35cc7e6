use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pin_cli::{cmd_evaluate, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, format_gradcheck, RunConfig};
use pin_core::config::Ablation;
use pin_core::data::{Split, SynthSpec};
use pin_core::Result;

/// Parallel interactive network for joint intent detection and slot filling.
#[derive(Parser)]
#[command(name = "pin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, valid (or dev), or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Report file; defaults to `<split>_eval.txt` beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tag one whitespace-tokenised utterance.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// The utterance; several arguments are joined with spaces.
        #[arg(required = true)]
        text: Vec<String>,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    no_slot2intent: bool,
    #[arg(long)]
    no_intent2slot: bool,
    #[arg(long)]
    no_gaussian_attention: bool,
    #[arg(long)]
    no_cooperation: bool,
}

impl AblationArgs {
    fn flags(&self) -> Ablation {
        Ablation {
            no_slot2intent: self.no_slot2intent,
            no_intent2slot: self.no_intent2slot,
            no_gaussian_attention: self.no_gaussian_attention,
            no_cooperation: self.no_cooperation,
        }
    }

    fn overrides(&self, out: &mut Vec<(String, String)>) {
        let flags = [
            ("no_slot2intent", self.no_slot2intent),
            ("no_intent2slot", self.no_intent2slot),
            ("no_gaussian_attention", self.no_gaussian_attention),
            ("no_cooperation", self.no_cooperation),
        ];
        for (key, on) in flags {
            if on {
                out.push((key.into(), "true".into()));
            }
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    teacher_forcing_rate: Option<f64>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[command(flatten)]
    ablation: AblationArgs,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        };
        put("data", self.data.as_ref().map(|p| p.display().to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("l2_decay", self.l2_decay.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("teacher_forcing_rate", self.teacher_forcing_rate.map(|v| v.to_string()));
        put("dropout_rate", self.dropout_rate.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("max_epochs", self.max_epochs.map(|v| v.to_string()));
        put("patience", self.patience.map(|v| v.to_string()));
        put("emb_dim", self.emb_dim.map(|v| v.to_string()));
        put("hidden", self.hidden.map(|v| v.to_string()));
        self.ablation.overrides(&mut out);
        out
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_intents: Option<usize>,
    #[arg(long)]
    slot_types: Option<usize>,
    #[arg(long)]
    lexicon_size: Option<usize>,
    #[arg(long)]
    filler_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_spans: Option<usize>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    dev: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    purity: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        let d = SynthSpec::default();
        SynthSpec {
            n_intents: self.n_intents.unwrap_or(d.n_intents),
            slot_types: self.slot_types.unwrap_or(d.slot_types),
            lexicon_size: self.lexicon_size.unwrap_or(d.lexicon_size),
            filler_size: self.filler_size.unwrap_or(d.filler_size),
            min_len: self.min_len.unwrap_or(d.min_len),
            max_len: self.max_len.unwrap_or(d.max_len),
            max_spans: self.max_spans.unwrap_or(d.max_spans),
            train: self.train.unwrap_or(d.train),
            dev: self.dev.unwrap_or(d.dev),
            test: self.test.unwrap_or(d.test),
            purity: self.purity.unwrap_or(d.purity),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides())?;
            let summary = cmd_train(&cfg, |r| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  dev intent err {:.4}  slot f1 {:.4}  sent acc {:.4}",
                    r.epoch, r.train_loss, r.dev.intent_error_rate, r.dev.slot_f1, r.dev.sentence_accuracy
                );
            })?;
            println!("best epoch: {}", summary.outcome.best_epoch);
            println!("[dev]\n{}", summary.outcome.best_dev.to_kv());
            println!("[test]\n{}", summary.test.to_kv());
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
        } => {
            let split = Split::parse(&split)?;
            let out = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or_else(|| ".".as_ref())
                    .join(format!("{}_eval.txt", split.dir_name()))
            });
            print!("{}", cmd_evaluate(&checkpoint, &data, split, &out)?.to_kv());
        }
        Command::Predict { checkpoint, text } => {
            let tagged = cmd_predict(&checkpoint, &text.join(" "))?;
            println!("intent\t{}", tagged.intent);
            for (word, tag) in &tagged.tokens {
                println!("{}\t{}", word, tag);
            }
        }
        Command::Gradcheck { seed, ablation } => {
            let (text, ok) = format_gradcheck(&cmd_gradcheck(ablation.flags(), seed)?);
            print!("{}", text);
            return Ok(ok);
        }
        Command::Synth(args) => cmd_synth(&args.spec(), &args.out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
