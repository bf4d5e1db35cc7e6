//! Joint loss, Adam with L2 decay, early stopping and the epoch loop.

use crate::config::TrainConfig;
use crate::data::{pad_batch, EncodedSample, UtteranceBatch, Vocab};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Mode, PinModel, Prediction, TrainMode};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

// Independent generator streams derived from the run seed. Stream 0 is
// parameter initialisation (see `PinModel::new`).
const SHUFFLE_STREAM: u64 = 1;
const FORCING_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// `−Σ_t Σ_b ln y^S_t[b, gold]` over real tokens. `slot_dist[t]` is `[B × K]`.
pub fn slot_loss(tape: &mut Tape, slot_dist: &[Var], batch: &UtteranceBatch) -> Result<Var> {
    if slot_dist.len() != batch.max_len() {
        return Err(Error::shape(
            "slot_loss",
            format!("{} steps for a batch of length {}", slot_dist.len(), batch.max_len()),
        ));
    }
    let mut total = tape.scalar(0.0, false);
    for (t, &y) in slot_dist.iter().enumerate() {
        let step = tape.nll(y, &batch.step_slots(t))?;
        total = tape.add(total, step)?;
    }
    Ok(total)
}

/// `−Σ_b ln y^I[b, gold]`.
pub fn intent_loss(tape: &mut Tape, intent_dist: Var, batch: &UtteranceBatch) -> Result<Var> {
    tape.nll(intent_dist, &batch.gold_intents())
}

/// `λ·L_slot + (1 − λ)·L_intent`.
pub fn joint_loss(tape: &mut Tape, slot: Var, intent: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {} not in [0, 1]", lambda)));
    }
    let s = tape.scale(slot, lambda);
    let i = tape.scale(intent, 1.0 - lambda);
    tape.add(s, i)
}

/// First and second moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.values.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of the parameters in `ids` from their
/// stored gradients, with `l2_decay·θ` added to each gradient first. Padding
/// rows are re-zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, ids: &[ParamId], state: &mut AdamState, lr: f64, l2_decay: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::shape(
            "adam_step",
            format!("state for {} parameters, store has {}", state.m.len(), store.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for &id in ids {
        let k = id.0;
        let p = store.get_mut(id);
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        if m.len() != p.values.len() {
            return Err(Error::shape("adam_step", format!("moment buffer mismatch for {}", p.name)));
        }
        for j in 0..p.values.len() {
            let g = p.grad[j] + l2_decay * p.values[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p.values[j] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        p.zero_frozen_row();
    }
    Ok(())
}

/// Tracks the best dev score and the parameters that achieved it.
#[derive(Clone, Debug, Default)]
pub struct EarlyStopState {
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub since_improvement: usize,
    pub snapshot: Option<ParamStore>,
}

impl EarlyStopState {
    /// Records an epoch's score; returns whether it improved strictly.
    pub fn observe(&mut self, epoch: usize, score: f64, store: &ParamStore) -> bool {
        if self.best.map_or(true, |b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.since_improvement = 0;
            self.snapshot = Some(store.clone());
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    /// Stop once more than `patience` consecutive epochs failed to improve.
    pub fn should_stop(&self, patience: usize) -> bool {
        self.since_improvement > patience
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Joint loss summed over the epoch's batches, in training mode.
    pub train_loss: f64,
    pub dev: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev: MetricsReport,
    pub stopped_early: bool,
}

/// Sizes of consecutive batches over `n` items.
fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Evaluation-mode predictions for `samples`, batched in order.
pub fn predict_all(model: &PinModel, samples: &[EncodedSample], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedSample> = chunk.iter().collect();
        out.extend(model.predict(&pad_batch(&refs))?);
    }
    Ok(out)
}

/// Metrics of `model` on `samples`, with labels mapped back to strings.
pub fn evaluate(model: &PinModel, samples: &[EncodedSample], vocab: &Vocab, batch_size: usize) -> Result<MetricsReport> {
    let predictions = predict_all(model, samples, batch_size)?;
    let tags = |ids: &[usize]| ids.iter().map(|&s| vocab.slots.name(s).to_string()).collect::<Vec<_>>();
    let gold_tags: Vec<Vec<String>> = samples.iter().map(|s| tags(&s.slots)).collect();
    let gold_intents: Vec<String> = samples.iter().map(|s| vocab.intents.name(s.intent).to_string()).collect();
    let pred_tags: Vec<Vec<String>> = predictions.iter().map(|p| tags(&p.slots)).collect();
    let pred_intents: Vec<String> = predictions
        .iter()
        .map(|p| vocab.intents.name(p.intent).to_string())
        .collect();
    MetricsReport::compute(&gold_intents, &gold_tags, &pred_intents, &pred_tags)
}

/// Runs one training-mode step on `batch`; returns the joint loss.
pub fn train_step(
    model: &mut PinModel,
    batch: &UtteranceBatch,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    active: &[ParamId],
    dropout_rng: &mut Rng,
    forcing_rng: &mut Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mode = Mode::Train(TrainMode {
        dropout_rate: cfg.dropout_rate,
        dropout_rng,
        teacher_forcing_rate: cfg.teacher_forcing_rate,
        forcing_rng,
    });
    let losses = model.losses(&mut tape, batch, mode, cfg.lambda)?;
    let loss = tape.item(losses.joint);
    if !loss.is_finite() {
        return Err(tape.first_non_finite().unwrap_or_else(|| {
            Error::InvalidArgument(format!("non-finite loss {}", loss))
        }));
    }
    tape.backward(losses.joint)?;
    model.store.zero_grad();
    model.store.accumulate_grads(&tape);
    if let Some(name) = model.store.first_non_finite_grad() {
        return Err(Error::InvalidArgument(format!("non-finite gradient in parameter `{}`", name)));
    }
    adam_step(&mut model.store, active, adam, cfg.learning_rate, cfg.l2_decay)?;
    Ok(loss)
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the best dev sentence accuracy. `on_epoch` sees each record as it is
/// produced.
pub fn train(
    model: &mut PinModel,
    train_set: &[EncodedSample],
    dev_set: &[EncodedSample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::InvalidArgument("training needs non-empty train and dev splits".into()));
    }
    if model.ablation != cfg.ablation {
        return Err(Error::Config("model and config disagree on ablation flags".into()));
    }
    let active = model.active_ids();
    let mut adam = AdamState::new(&model.store);
    let mut shuffle_rng = Rng::stream(cfg.seed, SHUFFLE_STREAM);
    let mut forcing_rng = Rng::stream(cfg.seed, FORCING_STREAM);
    let mut dropout_rng = Rng::stream(cfg.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = EarlyStopState::default();
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for idx in batches(&order, cfg.batch_size) {
            let refs: Vec<&EncodedSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = pad_batch(&refs);
            epoch_loss += train_step(model, &batch, cfg, &mut adam, &active, &mut dropout_rng, &mut forcing_rng)?;
        }
        let dev = evaluate(model, dev_set, vocab, cfg.batch_size)?;
        stop.observe(epoch, dev.sentence_accuracy, &model.store);
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            dev,
        };
        on_epoch(&record);
        history.push(record);
        if stop.should_stop(cfg.patience) {
            stopped_early = true;
            break;
        }
    }

    if let Some(best) = stop.snapshot.take() {
        model.store = best;
    }
    let best_dev = history
        .iter()
        .find(|r| r.epoch == stop.best_epoch)
        .map(|r| r.dev.clone())
        .ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    Ok(TrainOutcome {
        history,
        best_epoch: stop.best_epoch,
        best_dev,
        stopped_early,
    })
}
