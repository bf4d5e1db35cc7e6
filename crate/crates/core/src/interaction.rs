//! Slot2Intent and Intent2Slot decoders.
//!
//! Each module pairs an intuitive decoder, which reads only the utterance
//! representation, with a rational decoder that also reads the intuitive
//! decoder's label distribution for the opposite task. All four are
//! unidirectional LSTMs whose step input starts with the previous step's own
//! label distribution (zero at the first step).

use crate::data::{UtteranceBatch, PAD_LABEL};
use crate::encoder::{lstm_step, uniform_init, BoundLstm, EncodedBatch, LstmParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Which label set a decoder predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Slot,
    Intent,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub lstm: LstmParams,
    /// Output projection `[n_labels × hidden]`.
    pub proj: ParamId,
    pub task: Task,
    pub n_labels: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDecoder {
    pub lstm: BoundLstm,
    pub proj: Var,
    pub task: Task,
    pub n_labels: usize,
}

impl DecoderParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        task: Task,
        input: usize,
        hidden: usize,
        n_labels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let lstm = LstmParams::new(store, &format!("{}.lstm", prefix), input, hidden, rng)?;
        let bound = 1.0 / (hidden as f64).sqrt();
        let proj = store.add(
            format!("{}.proj", prefix),
            &[n_labels, hidden],
            uniform_init(rng, n_labels * hidden, bound),
        )?;
        Ok(DecoderParams {
            lstm,
            proj,
            task,
            n_labels,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.lstm.ids().to_vec();
        ids.push(self.proj);
        ids
    }

    pub fn bind(&self, store: &ParamStore, tape: &mut Tape) -> BoundDecoder {
        BoundDecoder {
            lstm: self.lstm.bind(store, tape),
            proj: store.bind(tape, self.proj),
            task: self.task,
            n_labels: self.n_labels,
        }
    }
}

/// Hidden features and label distributions per step, each `[B × ·]`.
#[derive(Clone, Debug, Default)]
pub struct DecoderTrace {
    pub hidden: Vec<Var>,
    pub dist: Vec<Var>,
}

/// All four decoder traces; a module switched off by an ablation leaves its
/// two traces empty.
#[derive(Clone, Debug, Default)]
pub struct InteractionTraces {
    pub intuitive_slot: Option<DecoderTrace>,
    pub rational_intent: Option<DecoderTrace>,
    pub intuitive_intent: Option<DecoderTrace>,
    pub rational_slot: Option<DecoderTrace>,
}

/// Substitutes gold one-hot labels for a decoder's previous-step
/// distribution, independently per row and step with probability `rate`.
pub struct TeacherForcing<'a> {
    rate: f64,
    rng: Option<&'a mut Rng>,
    gold_slots: &'a [Vec<usize>],
    gold_intents: &'a [usize],
}

impl<'a> TeacherForcing<'a> {
    pub fn new(rate: f64, rng: &'a mut Rng, batch: &'a UtteranceBatch) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("teacher forcing rate {} not in [0, 1]", rate)));
        }
        Ok(TeacherForcing {
            rate,
            rng: (rate > 0.0).then_some(rng),
            gold_slots: &batch.slots,
            gold_intents: &batch.intents,
        })
    }

    /// Evaluation mode: never forces.
    pub fn disabled() -> Self {
        TeacherForcing {
            rate: 0.0,
            rng: None,
            gold_slots: &[],
            gold_intents: &[],
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Gold label of row `b` to force at step `t` (the label of step `t − 1`),
    /// or `None` when this row is not forced.
    fn draw(&mut self, task: Task, b: usize, t: usize) -> Option<usize> {
        let rng = self.rng.as_mut()?;
        let forced = rng.bernoulli(self.rate);
        let gold = match task {
            Task::Slot => self.gold_slots.get(b).map(|row| row[t - 1]),
            Task::Intent => self.gold_intents.get(b).copied(),
        }?;
        (forced && gold != PAD_LABEL).then_some(gold)
    }
}

/// Distribution input for step `t ≥ 1`: the previous prediction, with forced
/// rows replaced by gold one-hots.
fn previous_distribution(tape: &mut Tape, prev: Var, task: Task, t: usize, tf: &mut TeacherForcing) -> Result<Var> {
    let (rows, k) = (tape.shape(prev)[0], tape.shape(prev)[1]);
    let forced: Vec<Option<usize>> = (0..rows).map(|b| tf.draw(task, b, t)).collect();
    if forced.iter().all(Option::is_none) {
        return Ok(prev);
    }
    let mut keep = vec![1.0; rows * k];
    let mut gold = vec![0.0; rows * k];
    for (b, f) in forced.iter().enumerate() {
        if let Some(label) = f {
            keep[b * k..(b + 1) * k].iter_mut().for_each(|v| *v = 0.0);
            gold[b * k + label] = 1.0;
        }
    }
    let gold = tape.constant(gold, &[rows, k])?;
    if forced.iter().all(Option::is_some) {
        return Ok(gold);
    }
    let kept = tape.mul_const(prev, keep)?;
    tape.add(kept, gold)
}

/// Shared decoding loop. Step `t` reads `prev_dist ⊕ extra_t ⊕ e_t`.
fn decode(tape: &mut Tape, enc: &EncodedBatch, extra: Option<&[Var]>, p: &BoundDecoder, tf: &mut TeacherForcing) -> Result<DecoderTrace> {
    let steps = enc.steps.len();
    let rows = enc.lengths.len();
    let hidden = p.lstm.hidden;
    if let Some(extra) = extra {
        if extra.len() != steps {
            return Err(Error::shape(
                "decode",
                format!("{} conditioning steps for {} encoder steps", extra.len(), steps),
            ));
        }
    }
    let mut h = tape.zeros(&[rows, hidden]);
    let mut c = tape.zeros(&[rows, hidden]);
    let mut trace = DecoderTrace {
        hidden: Vec::with_capacity(steps),
        dist: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let prev = match trace.dist.last() {
            None => tape.zeros(&[rows, p.n_labels]),
            Some(&y) => previous_distribution(tape, y, p.task, t, tf)?,
        };
        let input = match extra {
            Some(extra) => tape.concat(&[prev, extra[t], enc.steps[t]], 1)?,
            None => tape.concat(&[prev, enc.steps[t]], 1)?,
        };
        let (h_new, c_new) = lstm_step(tape, input, h, c, &p.lstm)?;
        h = h_new;
        c = c_new;
        let logits = tape.matmul_t(h, p.proj)?;
        let y = tape.softmax(logits, 1)?;
        trace.hidden.push(h);
        trace.dist.push(y);
    }
    Ok(trace)
}

fn expect_task(p: &BoundDecoder, task: Task, what: &str) -> Result<()> {
    if p.task != task {
        return Err(Error::InvalidArgument(format!("{} decoder must predict {:?} labels", what, task)));
    }
    Ok(())
}

/// `h^IS_t = LSTM(h^IS_{t−1}, y^IS_{t−1} ⊕ e_t)`, `y^IS_t = softmax(W^IS h^IS_t)`.
pub fn intuitive_slot_decode(tape: &mut Tape, enc: &EncodedBatch, p: &BoundDecoder, tf: &mut TeacherForcing) -> Result<DecoderTrace> {
    expect_task(p, Task::Slot, "intuitive slot")?;
    decode(tape, enc, None, p, tf)
}

/// `h^RI_t = LSTM(h^RI_{t−1}, y^RI_{t−1} ⊕ y^IS_t ⊕ e_t)`, yielding a
/// token-level intent distribution.
pub fn rational_intent_decode(tape: &mut Tape, enc: &EncodedBatch, slot_dist: &[Var], p: &BoundDecoder, tf: &mut TeacherForcing) -> Result<DecoderTrace> {
    expect_task(p, Task::Intent, "rational intent")?;
    decode(tape, enc, Some(slot_dist), p, tf)
}

/// Intent counterpart of [`intuitive_slot_decode`].
pub fn intuitive_intent_decode(tape: &mut Tape, enc: &EncodedBatch, p: &BoundDecoder, tf: &mut TeacherForcing) -> Result<DecoderTrace> {
    expect_task(p, Task::Intent, "intuitive intent")?;
    decode(tape, enc, None, p, tf)
}

/// Slot counterpart of [`rational_intent_decode`], conditioned on `y^II`.
pub fn rational_slot_decode(tape: &mut Tape, enc: &EncodedBatch, intent_dist: &[Var], p: &BoundDecoder, tf: &mut TeacherForcing) -> Result<DecoderTrace> {
    expect_task(p, Task::Slot, "rational slot")?;
    decode(tape, enc, Some(intent_dist), p, tf)
}

/// The four decoders of both modules.
#[derive(Clone, Debug)]
pub struct InteractionParams {
    pub intuitive_slot: DecoderParams,
    pub rational_intent: DecoderParams,
    pub intuitive_intent: DecoderParams,
    pub rational_slot: DecoderParams,
}

impl InteractionParams {
    pub fn new(store: &mut ParamStore, enc_width: usize, hidden: usize, n_slots: usize, n_intents: usize, rng: &mut Rng) -> Result<Self> {
        Ok(InteractionParams {
            intuitive_slot: DecoderParams::new(store, "slot2intent.intuitive_slot", Task::Slot, n_slots + enc_width, hidden, n_slots, rng)?,
            rational_intent: DecoderParams::new(
                store,
                "slot2intent.rational_intent",
                Task::Intent,
                n_intents + n_slots + enc_width,
                hidden,
                n_intents,
                rng,
            )?,
            intuitive_intent: DecoderParams::new(store, "intent2slot.intuitive_intent", Task::Intent, n_intents + enc_width, hidden, n_intents, rng)?,
            rational_slot: DecoderParams::new(
                store,
                "intent2slot.rational_slot",
                Task::Slot,
                n_slots + n_intents + enc_width,
                hidden,
                n_slots,
                rng,
            )?,
        })
    }
}
