//! Commands behind the `pin` binary. Each returns its results so that tests
//! can drive them without spawning a process.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pin_core::checkpoint::Checkpoint;
use pin_core::config::{parse_kv, Ablation, ModelDims, TrainConfig};
use pin_core::data::{build_vocabs, generate_synthetic, load_corpus, load_split, pad_batch, write_corpus, Split, SynthSpec};
use pin_core::metrics::MetricsReport;
use pin_core::model::{check_gradients, GroupCheck, GroupStatus, PinModel, Sizes};
use pin_core::tensor::DEFAULT_EPSILON;
use pin_core::training::{evaluate, train, EpochRecord, TrainOutcome};
use pin_core::{Error, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss_history.txt";
pub const DEV_HISTORY_FILE: &str = "dev_metrics.txt";
pub const DEV_REPORT_FILE: &str = "dev_report.txt";
pub const TEST_REPORT_FILE: &str = "test_report.txt";
pub const SYNTH_SPEC_FILE: &str = "synth_spec.txt";

/// Worst relative error any parameter group may show in `gradcheck`.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// Everything `train` needs, resolved from defaults, a config file and the
/// command line, in that order of precedence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => {
                if !(self.train.set(key, value)? || self.dims.set(key, value)?) {
                    return Err(Error::Config(format!("unknown key `{}`", key)));
                }
            }
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_kv(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        cfg.dims.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        if let Some(d) = &self.data {
            let _ = writeln!(out, "data = {}", d.display());
        }
        if let Some(o) = &self.out {
            let _ = writeln!(out, "out = {}", o.display());
        }
        self.train.write_kv(&mut out);
        self.dims.write_kv(&mut out);
        out
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{}` is required", key)))
}

pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub test: MetricsReport,
}

/// Trains on `data`, writing the resolved config, checkpoint, loss history,
/// per-epoch dev metrics and final dev/test reports into `out`.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    let data = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_FILE), cfg.to_kv())?;

    let corpus = load_corpus(data)?;
    let vocab = build_vocabs(&corpus)?;
    let train_set = vocab.encode_all(&corpus.train)?;
    let dev_set = vocab.encode_all(&corpus.dev)?;
    let test_set = vocab.encode_all(&corpus.test)?;
    let sizes = Sizes {
        vocab: vocab.words.len(),
        slots: vocab.slots.len(),
        intents: vocab.intents.len(),
    };
    let mut model = PinModel::new(sizes, cfg.dims, cfg.train.ablation, cfg.train.seed)?;
    let outcome = train(&mut model, &train_set, &dev_set, &vocab, &cfg.train, on_epoch)?;

    let mut losses = String::new();
    let mut dev_history = String::new();
    for r in &outcome.history {
        let _ = writeln!(losses, "{}\t{}", r.epoch, r.train_loss);
        let _ = writeln!(dev_history, "# epoch {}\n{}", r.epoch, r.dev.to_kv());
    }
    write(&out.join(LOSS_FILE), losses)?;
    write(&out.join(DEV_HISTORY_FILE), dev_history)?;

    let test = evaluate(&model, &test_set, &vocab, cfg.train.batch_size)?;
    write(&out.join(DEV_REPORT_FILE), outcome.best_dev.to_kv())?;
    write(&out.join(TEST_REPORT_FILE), test.to_kv())?;
    Checkpoint::new(cfg.train.clone(), vocab, model)?.save(&out.join(CHECKPOINT_FILE))?;
    Ok(TrainSummary { outcome, test })
}

/// Evaluation-mode metrics of a checkpoint on one split, also written to `out`.
pub fn cmd_evaluate(checkpoint: &Path, data: &Path, split: Split, out: &Path) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let samples = load_split(&data.join(split.dir_name()))?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("split `{}` is empty", split.dir_name())));
    }
    let encoded = ckpt.encode(&samples)?;
    let report = evaluate(&ckpt.model, &encoded, &ckpt.vocab, ckpt.config.batch_size)?;
    write(out, report.to_kv())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tagged {
    pub intent: String,
    /// `(token, tag)` per input token.
    pub tokens: Vec<(String, String)>,
}

/// Labels one whitespace-tokenised utterance.
pub fn cmd_predict(checkpoint: &Path, text: &str) -> Result<Tagged> {
    let ckpt = Checkpoint::load(checkpoint)?;
    predict_with(&ckpt, text)
}

pub fn predict_with(ckpt: &Checkpoint, text: &str) -> Result<Tagged> {
    let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty utterance".into()));
    }
    let sample = ckpt.vocab.encode_tokens(&tokens);
    let prediction = ckpt.model.predict(&pad_batch(&[&sample]))?.remove(0);
    Ok(Tagged {
        intent: ckpt.vocab.intents.name(prediction.intent).to_string(),
        tokens: tokens
            .into_iter()
            .zip(&prediction.slots)
            .map(|(w, &s)| (w, ckpt.vocab.slots.name(s).to_string()))
            .collect(),
    })
}

/// Gradient check of a tiny model (embedding and hidden width 8) on two
/// synthetic utterances of at most five tokens.
pub fn cmd_gradcheck(ablation: Ablation, seed: u64) -> Result<Vec<GroupCheck>> {
    let spec = SynthSpec {
        n_intents: 2,
        slot_types: 2,
        lexicon_size: 2,
        filler_size: 3,
        min_len: 3,
        max_len: 5,
        max_spans: 2,
        train: 2,
        dev: 1,
        test: 1,
        purity: 1.0,
        seed,
    };
    let corpus = generate_synthetic(&spec)?;
    let vocab = build_vocabs(&corpus)?;
    let samples = vocab.encode_all(&corpus.train)?;
    let batch = pad_batch(&samples.iter().collect::<Vec<_>>());
    let sizes = Sizes {
        vocab: vocab.words.len(),
        slots: vocab.slots.len(),
        intents: vocab.intents.len(),
    };
    let model = PinModel::new(sizes, ModelDims { emb_dim: 8, hidden: 8 }, ablation, seed)?;
    let cfg = TrainConfig {
        teacher_forcing_rate: 0.5,
        seed,
        ablation,
        ..TrainConfig::default()
    };
    check_gradients(&model, &batch, &cfg, DEFAULT_EPSILON)
}

/// One line per group; the flag is false if any group fails.
pub fn format_gradcheck(checks: &[GroupCheck]) -> (String, bool) {
    let mut text = String::new();
    let mut ok = true;
    for c in checks {
        let line = match c.status {
            GroupStatus::Checked(e) => {
                let pass = e <= GRADCHECK_THRESHOLD;
                ok &= pass;
                format!("{:.3e}{}", e, if pass { "" } else { "  FAIL" })
            }
            GroupStatus::Unused { all_zero: true } => "unused (zero grad)".to_string(),
            GroupStatus::Unused { all_zero: false } => {
                ok = false;
                "unused but received gradient  FAIL".to_string()
            }
        };
        let _ = writeln!(text, "{:<30} {}", c.name, line);
    }
    (text, ok)
}

/// Writes a synthetic corpus and the spec that produced it.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<()> {
    let corpus = generate_synthetic(spec)?;
    write_corpus(&corpus, out)?;
    write(&out.join(SYNTH_SPEC_FILE), spec.to_kv())
}
