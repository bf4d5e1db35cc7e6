//! The assembled network: encoder, both interaction modules, cooperation and
//! output layers, with ablations applied by leaving components out of the
//! forward pass.

use crate::config::{Ablation, ModelDims};
use crate::cooperation::{classify, fuse_intent, fuse_slot, gate, masked_sum, predict_labels, CooperationParams};
use crate::data::UtteranceBatch;
use crate::encoder::{encode_batch, EncodedBatch, EncoderParams};
use crate::error::{Error, Result};
use crate::interaction::{
    intuitive_intent_decode, intuitive_slot_decode, rational_intent_decode, rational_slot_decode, InteractionParams,
    InteractionTraces, TeacherForcing,
};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::training::{joint_loss, intent_loss, slot_loss};

/// Label-set and vocabulary sizes a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sizes {
    pub vocab: usize,
    pub slots: usize,
    pub intents: usize,
}

/// A named set of parameters and whether the current ablation uses it.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: &'static str,
    pub ids: Vec<ParamId>,
    pub active: bool,
}

/// Stochastic components of a training-mode forward pass.
pub struct TrainMode<'a> {
    pub dropout_rate: f64,
    pub dropout_rng: &'a mut Rng,
    pub teacher_forcing_rate: f64,
    pub forcing_rng: &'a mut Rng,
}

pub enum Mode<'a> {
    Train(TrainMode<'a>),
    Eval,
}

pub struct ForwardOutput {
    pub encoded: EncodedBatch,
    pub traces: InteractionTraces,
    /// Final slot distributions `y^S_t`, each `[B × n_slots]`.
    pub slot_dist: Vec<Var>,
    /// Final intent distribution `y^I`, `[B × n_intents]`.
    pub intent_dist: Var,
}

pub struct Losses {
    pub slot: Var,
    pub intent: Var,
    pub joint: Var,
}

/// Predicted label ids for one utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub slots: Vec<usize>,
    pub intent: usize,
}

#[derive(Clone, Debug)]
pub struct PinModel {
    pub dims: ModelDims,
    pub sizes: Sizes,
    pub ablation: Ablation,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub interaction: InteractionParams,
    pub cooperation: CooperationParams,
}

impl PinModel {
    /// Builds every parameter, including those an ablation leaves unused, from
    /// stream 0 of `seed`.
    pub fn new(sizes: Sizes, dims: ModelDims, ablation: Ablation, seed: u64) -> Result<Self> {
        dims.validate()?;
        ablation.validate()?;
        if sizes.vocab < 2 || sizes.slots == 0 || sizes.intents == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model sizes {:?}", sizes)));
        }
        let mut rng = Rng::stream(seed, 0);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, sizes.vocab, crate::data::PAD_ID, dims, &mut rng)?;
        let enc_width = 2 * dims.hidden + dims.emb_dim * usize::from(!ablation.no_gaussian_attention);
        let interaction = InteractionParams::new(&mut store, enc_width, dims.hidden, sizes.slots, sizes.intents, &mut rng)?;
        let cooperation = CooperationParams::new(&mut store, dims.hidden, sizes.slots, sizes.intents, &mut rng)?;
        Ok(PinModel {
            dims,
            sizes,
            ablation,
            store,
            encoder,
            interaction,
            cooperation,
        })
    }

    /// Width of `e_t` under this model's ablation.
    pub fn encoder_width(&self) -> usize {
        2 * self.dims.hidden + if self.ablation.no_gaussian_attention { 0 } else { self.dims.emb_dim }
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let a = &self.ablation;
        let enc = &self.encoder;
        let int = &self.interaction;
        let coop = &self.cooperation;
        vec![
            ParamGroup { name: "encoder.embedding", ids: vec![enc.embedding.table], active: true },
            ParamGroup { name: "encoder.lstm_fwd", ids: enc.forward.ids().to_vec(), active: true },
            ParamGroup { name: "encoder.lstm_bwd", ids: enc.backward.ids().to_vec(), active: true },
            ParamGroup { name: "encoder.attention", ids: enc.attention.ids().to_vec(), active: !a.no_gaussian_attention },
            ParamGroup { name: "slot2intent.intuitive_slot", ids: int.intuitive_slot.ids(), active: a.slot2intent() },
            ParamGroup { name: "slot2intent.rational_intent", ids: int.rational_intent.ids(), active: a.slot2intent() },
            ParamGroup { name: "intent2slot.intuitive_intent", ids: int.intuitive_intent.ids(), active: a.intent2slot() },
            ParamGroup { name: "intent2slot.rational_slot", ids: int.rational_slot.ids(), active: a.intent2slot() },
            ParamGroup { name: "cooperation.slot_gate", ids: coop.slot_gate.ids().to_vec(), active: a.cooperation() },
            ParamGroup { name: "cooperation.intent_gate", ids: coop.intent_gate.ids().to_vec(), active: a.cooperation() },
            ParamGroup { name: "output.slot", ids: vec![coop.slot_out], active: true },
            ParamGroup { name: "output.intent", ids: vec![coop.intent_out], active: true },
        ]
    }

    pub fn active_ids(&self) -> Vec<ParamId> {
        self.groups().into_iter().filter(|g| g.active).flat_map(|g| g.ids).collect()
    }

    pub fn inactive_ids(&self) -> Vec<ParamId> {
        self.groups().into_iter().filter(|g| !g.active).flat_map(|g| g.ids).collect()
    }

    fn check_batch(&self, batch: &UtteranceBatch) -> Result<()> {
        let oov = batch.tokens.iter().flatten().find(|&&id| id >= self.sizes.vocab);
        if let Some(id) = oov {
            return Err(Error::InvalidArgument(format!("token id {} beyond vocabulary of {}", id, self.sizes.vocab)));
        }
        Ok(())
    }

    /// Forward pass over `store`, which must share this model's layout (a
    /// clone of [`PinModel::store`], possibly perturbed).
    pub fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &UtteranceBatch, mode: Mode) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let a = self.ablation;
        let mut eval_rng = Rng::new(0);
        let (dropout_rate, dropout_rng, training, mut tf) = match mode {
            Mode::Train(m) => {
                let tf = TeacherForcing::new(m.teacher_forcing_rate, m.forcing_rng, batch)?;
                (m.dropout_rate, m.dropout_rng, true, tf)
            }
            Mode::Eval => (0.0, &mut eval_rng, false, TeacherForcing::disabled()),
        };

        let bound = self.encoder.bind(store, tape, !a.no_gaussian_attention);
        let encoded = encode_batch(tape, &self.encoder, &bound, batch, dropout_rate, dropout_rng, training)?;
        let steps = encoded.steps.len();
        let masks: Vec<Vec<bool>> = (0..steps).map(|t| encoded.mask(t)).collect();

        let mut traces = InteractionTraces::default();
        if a.slot2intent() {
            let is = self.interaction.intuitive_slot.bind(store, tape);
            let ri = self.interaction.rational_intent.bind(store, tape);
            let is_trace = intuitive_slot_decode(tape, &encoded, &is, &mut tf)?;
            let ri_trace = rational_intent_decode(tape, &encoded, &is_trace.dist, &ri, &mut tf)?;
            traces.intuitive_slot = Some(is_trace);
            traces.rational_intent = Some(ri_trace);
        }
        if a.intent2slot() {
            let ii = self.interaction.intuitive_intent.bind(store, tape);
            let rs = self.interaction.rational_slot.bind(store, tape);
            let ii_trace = intuitive_intent_decode(tape, &encoded, &ii, &mut tf)?;
            let rs_trace = rational_slot_decode(tape, &encoded, &ii_trace.dist, &rs, &mut tf)?;
            traces.intuitive_intent = Some(ii_trace);
            traces.rational_slot = Some(rs_trace);
        }

        let hidden = |t: &Option<crate::interaction::DecoderTrace>| t.as_ref().map(|t| t.hidden.clone());
        let (is_h, ri_h, ii_h, rs_h) = (
            hidden(&traces.intuitive_slot),
            hidden(&traces.rational_intent),
            hidden(&traces.intuitive_intent),
            hidden(&traces.rational_slot),
        );

        let (slot_features, intent_feature) = if a.cooperation() {
            let (is_h, ri_h, ii_h, rs_h) = (is_h.unwrap(), ri_h.unwrap(), ii_h.unwrap(), rs_h.unwrap());
            let slot_gate = self.cooperation.slot_gate.bind(store, tape);
            let intent_gate = self.cooperation.intent_gate.bind(store, tape);
            let mut slot = Vec::with_capacity(steps);
            let mut gates = Vec::with_capacity(steps);
            for t in 0..steps {
                let r = gate(tape, rs_h[t], &slot_gate)?;
                slot.push(fuse_slot(tape, rs_h[t], is_h[t], r)?);
                gates.push(gate(tape, ri_h[t], &intent_gate)?);
            }
            let intent = fuse_intent(tape, &ri_h, &ii_h, &gates, &masks)?;
            (slot, intent)
        } else {
            // Rational features where present, else the surviving intuitive one.
            let slot = rs_h.or(is_h).expect("at least one slot decoder");
            let intent_steps = ri_h.or(ii_h).expect("at least one intent decoder");
            let intent = masked_sum(tape, &intent_steps, &masks)?;
            (slot, intent)
        };

        let w_slot = store.bind(tape, self.cooperation.slot_out);
        let w_intent = store.bind(tape, self.cooperation.intent_out);
        let slot_dist = slot_features
            .iter()
            .map(|&h| classify(tape, h, w_slot))
            .collect::<Result<Vec<_>>>()?;
        let intent_dist = classify(tape, intent_feature, w_intent)?;
        Ok(ForwardOutput {
            encoded,
            traces,
            slot_dist,
            intent_dist,
        })
    }

    pub fn forward(&self, tape: &mut Tape, batch: &UtteranceBatch, mode: Mode) -> Result<ForwardOutput> {
        self.forward_with(&self.store, tape, batch, mode)
    }

    /// Slot, intent and joint losses of a batch.
    pub fn losses_with(&self, store: &ParamStore, tape: &mut Tape, batch: &UtteranceBatch, mode: Mode, lambda: f64) -> Result<Losses> {
        let out = self.forward_with(store, tape, batch, mode)?;
        let slot = slot_loss(tape, &out.slot_dist, batch)?;
        let intent = intent_loss(tape, out.intent_dist, batch)?;
        let joint = joint_loss(tape, slot, intent, lambda)?;
        Ok(Losses { slot, intent, joint })
    }

    pub fn losses(&self, tape: &mut Tape, batch: &UtteranceBatch, mode: Mode, lambda: f64) -> Result<Losses> {
        self.losses_with(&self.store, tape, batch, mode, lambda)
    }

    /// Evaluation-mode argmax labels for every utterance in `batch`.
    pub fn predict(&self, batch: &UtteranceBatch) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch, Mode::Eval)?;
        let per_step: Vec<Vec<usize>> = out.slot_dist.iter().map(|&y| predict_labels(&tape, y)).collect();
        let intents = predict_labels(&tape, out.intent_dist);
        Ok((0..batch.batch_size())
            .map(|b| Prediction {
                slots: (0..batch.lengths[b]).map(|t| per_step[t][b]).collect(),
                intent: intents[b],
            })
            .collect())
    }
}

/// Outcome of a gradient check for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub enum GroupStatus {
    /// Worst relative error against finite differences.
    Checked(f64),
    /// Disabled by the ablation; `all_zero` records whether every gradient
    /// entry was exactly zero.
    Unused { all_zero: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub name: &'static str,
    pub status: GroupStatus,
}

/// Checks the joint-loss gradient of every active group against finite
/// differences, and that inactive groups receive exactly zero gradient.
///
/// The loss is taken in training mode with dropout and teacher forcing drawn
/// from generators re-seeded on every evaluation, so those paths are covered
/// while the function stays deterministic.
pub fn check_gradients(model: &PinModel, batch: &UtteranceBatch, cfg: &crate::config::TrainConfig, epsilon: f64) -> Result<Vec<GroupCheck>> {
    let mut store = model.store.clone();
    let active = model.active_ids();
    let report = crate::tensor::grad_check(&mut store, &active, epsilon, |store, tape| {
        let mut dropout_rng = Rng::new(cfg.seed);
        let mut forcing_rng = Rng::stream(cfg.seed, 1);
        let mode = Mode::Train(TrainMode {
            dropout_rate: cfg.dropout_rate,
            dropout_rng: &mut dropout_rng,
            teacher_forcing_rate: cfg.teacher_forcing_rate,
            forcing_rng: &mut forcing_rng,
        });
        Ok(model.losses_with(store, tape, batch, mode, cfg.lambda)?.joint)
    })?;

    // Analytic gradients of every parameter, active or not.
    let mut tape = Tape::new();
    let mut dropout_rng = Rng::new(cfg.seed);
    let mut forcing_rng = Rng::stream(cfg.seed, 1);
    let mode = Mode::Train(TrainMode {
        dropout_rate: cfg.dropout_rate,
        dropout_rng: &mut dropout_rng,
        teacher_forcing_rate: cfg.teacher_forcing_rate,
        forcing_rng: &mut forcing_rng,
    });
    let loss = model.losses_with(&store, &mut tape, batch, mode, cfg.lambda)?.joint;
    tape.backward(loss)?;
    store.zero_grad();
    store.accumulate_grads(&tape);

    Ok(model
        .groups()
        .into_iter()
        .map(|g| {
            let status = if g.active {
                let worst = report
                    .per_param
                    .iter()
                    .filter(|(id, _, _)| g.ids.contains(id))
                    .map(|&(_, _, e)| e)
                    .fold(0.0, f64::max);
                GroupStatus::Checked(worst)
            } else {
                let all_zero = g.ids.iter().all(|&id| store.get(id).grad.iter().all(|&x| x == 0.0));
                GroupStatus::Unused { all_zero }
            };
            GroupCheck { name: g.name, status }
        })
        .collect())
}
