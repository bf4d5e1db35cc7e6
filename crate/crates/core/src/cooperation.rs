//! Cooperation mechanism: softmax gates that blend intuitive and rational
//! decoder features, and the final slot and intent classifiers.

use crate::encoder::{row_mask, uniform_init};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// One-hidden-layer MLP with tanh, `h → h → h`, followed by a softmax over
/// the feature dimension.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub width: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGate {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (width as f64).sqrt();
        let mut layer = |store: &mut ParamStore, name: &str| {
            store.add(
                format!("{}.{}", prefix, name),
                &[width, width],
                uniform_init(rng, width * width, bound),
            )
        };
        let w1 = layer(store, "w1")?;
        let w2 = layer(store, "w2")?;
        let b1 = store.add(format!("{}.b1", prefix), &[width], vec![0.0; width])?;
        let b2 = store.add(format!("{}.b2", prefix), &[width], vec![0.0; width])?;
        Ok(GateParams { w1, b1, w2, b2, width })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn bind(&self, store: &ParamStore, tape: &mut Tape) -> BoundGate {
        BoundGate {
            w1: store.bind(tape, self.w1),
            b1: store.bind(tape, self.b1),
            w2: store.bind(tape, self.w2),
            b2: store.bind(tape, self.b2),
        }
    }
}

/// `r = softmax(W2 tanh(W1 h + b1) + b2)` per row of `h_rational [B × h]`.
pub fn gate(tape: &mut Tape, h_rational: Var, p: &BoundGate) -> Result<Var> {
    let z = tape.matmul_t(h_rational, p.w1)?;
    let z = tape.add_row(z, p.b1)?;
    let z = tape.tanh(z);
    let z = tape.matmul_t(z, p.w2)?;
    let z = tape.add_row(z, p.b2)?;
    tape.softmax(z, 1)
}

/// `h^S = h^RS ⊙ r + h^IS ⊙ (1 − r)`.
pub fn fuse_slot(tape: &mut Tape, h_rational: Var, h_intuitive: Var, r: Var) -> Result<Var> {
    let shape = tape.shape(h_rational).to_vec();
    if tape.shape(h_intuitive) != shape.as_slice() || tape.shape(r) != shape.as_slice() {
        return Err(Error::shape(
            "fuse",
            format!(
                "rational {:?}, intuitive {:?}, gate {:?}",
                shape,
                tape.shape(h_intuitive),
                tape.shape(r)
            ),
        ));
    }
    let ones = tape.constant(vec![1.0; shape.iter().product()], &shape)?;
    let complement = tape.sub(ones, r)?;
    let rational = tape.mul(h_rational, r)?;
    let intuitive = tape.mul(h_intuitive, complement)?;
    tape.add(rational, intuitive)
}

/// `h^I = Σ_t h^RI_t ⊙ r_t + h^II_t ⊙ (1 − r_t)` over unmasked steps, each
/// input `[B × h]`; `masks[t][b]` marks real tokens.
pub fn fuse_intent(tape: &mut Tape, h_rational: &[Var], h_intuitive: &[Var], gates: &[Var], masks: &[Vec<bool>]) -> Result<Var> {
    let steps = h_rational.len();
    if steps == 0 || h_intuitive.len() != steps || gates.len() != steps || masks.len() != steps {
        return Err(Error::shape(
            "fuse_intent",
            format!(
                "{} rational, {} intuitive, {} gate, {} mask steps",
                steps,
                h_intuitive.len(),
                gates.len(),
                masks.len()
            ),
        ));
    }
    let fused = (0..steps)
        .map(|t| fuse_slot(tape, h_rational[t], h_intuitive[t], gates[t]))
        .collect::<Result<Vec<_>>>()?;
    masked_sum(tape, &fused, masks)
}

/// `Σ_t mask_t ⊙ x_t` for time-major `[B × h]` steps.
pub fn masked_sum(tape: &mut Tape, steps: &[Var], masks: &[Vec<bool>]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&x, mask) in steps.iter().zip(masks) {
        let width = tape.shape(x)[1];
        let x = if mask.iter().all(|&m| m) {
            x
        } else {
            tape.mul_const(x, row_mask(mask, width))?
        };
        total = Some(match total {
            None => x,
            Some(acc) => tape.add(acc, x)?,
        });
    }
    total.ok_or_else(|| Error::shape("masked_sum", "no steps"))
}

/// Row softmax of `h Wᵀ`.
pub fn classify(tape: &mut Tape, h: Var, w: Var) -> Result<Var> {
    let logits = tape.matmul_t(h, w)?;
    tape.softmax(logits, 1)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Predicted label per row of a `[B × K]` distribution.
pub fn predict_labels(tape: &Tape, dist: Var) -> Vec<usize> {
    let rows = tape.shape(dist)[0];
    (0..rows).map(|b| argmax(tape.row(dist, b))).collect()
}

#[derive(Clone, Debug)]
pub struct CooperationParams {
    pub slot_gate: GateParams,
    pub intent_gate: GateParams,
    /// `W^S [n_slots × h]`.
    pub slot_out: ParamId,
    /// `W^I [n_intents × h]`.
    pub intent_out: ParamId,
}

impl CooperationParams {
    pub fn new(store: &mut ParamStore, hidden: usize, n_slots: usize, n_intents: usize, rng: &mut Rng) -> Result<Self> {
        let slot_gate = GateParams::new(store, "cooperation.slot_gate", hidden, rng)?;
        let intent_gate = GateParams::new(store, "cooperation.intent_gate", hidden, rng)?;
        let bound = 1.0 / (hidden as f64).sqrt();
        let slot_out = store.add("output.slot", &[n_slots, hidden], uniform_init(rng, n_slots * hidden, bound))?;
        let intent_out = store.add(
            "output.intent",
            &[n_intents, hidden],
            uniform_init(rng, n_intents * hidden, bound),
        )?;
        Ok(CooperationParams {
            slot_gate,
            intent_gate,
            slot_out,
            intent_out,
        })
    }
}
