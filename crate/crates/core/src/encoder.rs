//! Utterance representation: word embeddings, a BiLSTM, and Gaussian
//! self-attention, concatenated per token.
//!
//! Sequences are processed time-major: a batch of `B` utterances padded to
//! `T` steps is a `Vec` of `T` tensors of shape `[B × d]`.

use crate::config::ModelDims;
use crate::data::UtteranceBatch;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

pub(crate) fn uniform_init(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
}

/// Factor buffer for `[rows × width]` that keeps rows where `keep[r]`.
pub(crate) fn row_mask(keep: &[bool], width: usize) -> Vec<f64> {
    keep.iter()
        .flat_map(|&k| std::iter::repeat(if k { 1.0 } else { 0.0 }).take(width))
        .collect()
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub pad_id: usize,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, pad_id: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (dim as f64).sqrt();
        let table = store.add(name, &[vocab_size, dim], uniform_init(rng, vocab_size * dim, bound))?;
        store.freeze_row(table, pad_id);
        Ok(EmbeddingTable {
            table,
            pad_id,
            vocab_size,
            dim,
        })
    }

    /// Looks up one embedding row per id: `[ids.len() × dim]`.
    pub fn embed(&self, tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Var> {
        tape.embed(table, ids, self.pad_id)
    }
}

/// Gate order in the stacked weights is input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(
            format!("{}.w_ih", prefix),
            &[4 * hidden, input],
            uniform_init(rng, 4 * hidden * input, bound),
        )?;
        let w_hh = store.add(
            format!("{}.w_hh", prefix),
            &[4 * hidden, hidden],
            uniform_init(rng, 4 * hidden * hidden, bound),
        )?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{}.bias", prefix), &[4 * hidden], b)?;
        Ok(LstmParams {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }

    pub fn bind(&self, store: &ParamStore, tape: &mut Tape) -> BoundLstm {
        BoundLstm {
            w_ih: store.bind(tape, self.w_ih),
            w_hh: store.bind(tape, self.w_hh),
            bias: store.bind(tape, self.bias),
            input: self.input,
            hidden: self.hidden,
        }
    }
}

/// One LSTM step over a batch of rows: `x [B × in]`, `h_prev`, `c_prev [B × h]`.
///
/// `c = f ⊙ c_prev + i ⊙ g`, `h = o ⊙ tanh(c)`.
pub fn lstm_step(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, p: &BoundLstm) -> Result<(Var, Var)> {
    let h = p.hidden;
    if tape.shape(x).len() != 2 || tape.shape(x)[1] != p.input {
        return Err(Error::shape(
            "lstm_step",
            format!("input {:?} for LSTM with input width {}", tape.shape(x), p.input),
        ));
    }
    let rows = tape.shape(x)[0];
    for (what, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
        if tape.shape(v) != [rows, h] {
            return Err(Error::shape(
                "lstm_step",
                format!("{} {:?}, expected [{}, {}]", what, tape.shape(v), rows, h),
            ));
        }
    }
    let from_x = tape.matmul_t(x, p.w_ih)?;
    let from_h = tape.matmul_t(h_prev, p.w_hh)?;
    let gates = tape.add(from_x, from_h)?;
    let gates = tape.add_row(gates, p.bias)?;
    let i = tape.slice_cols(gates, 0, h)?;
    let f = tape.slice_cols(gates, h, h)?;
    let g = tape.slice_cols(gates, 2 * h, h)?;
    let o = tape.slice_cols(gates, 3 * h, h)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c))
}

fn step_mask(lengths: &[usize], t: usize) -> Vec<bool> {
    lengths.iter().map(|&l| t < l).collect()
}

/// Runs the forward LSTM left to right and the backward LSTM right to left,
/// both from zero state, and concatenates their outputs per step:
/// `H_t [B × 2h]`. Steps at or beyond a row's length are zero and carry no
/// gradient; the backward direction starts at each row's own last token.
pub fn bilstm_forward(tape: &mut Tape, emb: &[Var], lengths: &[usize], fwd: &BoundLstm, bwd: &BoundLstm) -> Result<Vec<Var>> {
    if emb.is_empty() || lengths.iter().all(|&l| l == 0) {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    let rows = lengths.len();
    let steps = emb.len();

    let mut forward = Vec::with_capacity(steps);
    let mut h = tape.zeros(&[rows, fwd.hidden]);
    let mut c = tape.zeros(&[rows, fwd.hidden]);
    for (t, &x) in emb.iter().enumerate() {
        let (h_new, c_new) = lstm_step(tape, x, h, c, fwd)?;
        h = h_new;
        c = c_new;
        let mask = row_mask(&step_mask(lengths, t), fwd.hidden);
        forward.push(tape.mul_const(h, mask)?);
    }

    let mut backward = vec![None; steps];
    let mut h = tape.zeros(&[rows, bwd.hidden]);
    let mut c = tape.zeros(&[rows, bwd.hidden]);
    for t in (0..steps).rev() {
        let (h_new, c_new) = lstm_step(tape, emb[t], h, c, bwd)?;
        // padded steps keep the state at zero until the row's last token
        let mask = row_mask(&step_mask(lengths, t), bwd.hidden);
        h = tape.mul_const(h_new, mask.clone())?;
        c = tape.mul_const(c_new, mask)?;
        backward[t] = Some(h);
    }

    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f, b.expect("every step visited")], 1))
        .collect()
}

/// Scalars of the Gaussian prior, stored unconstrained: the effective
/// `w = exp(w_raw) > 0` and `b = −exp(b_raw) < 0`.
#[derive(Clone, Debug)]
pub struct GaussianAttentionParams {
    pub w_raw: ParamId,
    pub b_raw: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAttention {
    pub w_raw: Var,
    pub b_raw: Var,
}

impl GaussianAttentionParams {
    /// Starts at `w = 1`, `b = −0.5` so that `w·d² + b` is never zero at
    /// integer distances.
    pub fn new(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        Ok(GaussianAttentionParams {
            w_raw: store.add(format!("{}.w_raw", prefix), &[], vec![0.0])?,
            b_raw: store.add(format!("{}.b_raw", prefix), &[], vec![0.5f64.ln()])?,
        })
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w_raw, self.b_raw]
    }

    pub fn effective(&self, store: &ParamStore) -> (f64, f64) {
        (
            store.get(self.w_raw).values[0].exp(),
            -store.get(self.b_raw).values[0].exp(),
        )
    }

    pub fn bind(&self, store: &ParamStore, tape: &mut Tape) -> BoundAttention {
        BoundAttention {
            w_raw: store.bind(tape, self.w_raw),
            b_raw: store.bind(tape, self.b_raw),
        }
    }
}

/// `c_i = Σ_j softmax_j(−|w·d²_ij + b| + x_i·x_j) x_j` over unmasked `j`,
/// with `d_ij = |i − j|`. `x` is `[T × d]`; masked rows of the output are zero.
pub fn gaussian_self_attention(tape: &mut Tape, x: Var, mask: &[bool], p: &BoundAttention) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != mask.len() || shape[0] == 0 {
        return Err(Error::shape(
            "gaussian_self_attention",
            format!("input {:?} with mask of {}", shape, mask.len()),
        ));
    }
    let steps = shape[0];
    let mut dist2 = Vec::with_capacity(steps * steps);
    let mut allowed = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            let d = i as f64 - j as f64;
            dist2.push(d * d);
            allowed.push(mask[i] && mask[j]);
        }
    }
    let dots = tape.matmul_t(x, x)?;
    let dist2 = tape.constant(dist2, &[steps, steps])?;
    let w = tape.exp(p.w_raw);
    let b = tape.exp(p.b_raw);
    let b = tape.scale(b, -1.0);
    let penalty = tape.scale_by(dist2, w)?;
    let penalty = tape.add_scalar(penalty, b)?;
    let penalty = tape.abs(penalty);
    let scores = tape.sub(dots, penalty)?;
    let weights = tape.masked_softmax(scores, allowed)?;
    tape.matmul(weights, x)
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embedding: EmbeddingTable,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub attention: GaussianAttentionParams,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundEncoder {
    pub table: Var,
    pub forward: BoundLstm,
    pub backward: BoundLstm,
    pub attention: Option<BoundAttention>,
}

impl EncoderParams {
    pub fn new(store: &mut ParamStore, vocab_size: usize, pad_id: usize, dims: ModelDims, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderParams {
            embedding: EmbeddingTable::new(store, "encoder.embedding", vocab_size, dims.emb_dim, pad_id, rng)?,
            forward: LstmParams::new(store, "encoder.lstm_fwd", dims.emb_dim, dims.hidden, rng)?,
            backward: LstmParams::new(store, "encoder.lstm_bwd", dims.emb_dim, dims.hidden, rng)?,
            attention: GaussianAttentionParams::new(store, "encoder.attention")?,
        })
    }

    pub fn bind(&self, store: &ParamStore, tape: &mut Tape, with_attention: bool) -> BoundEncoder {
        BoundEncoder {
            table: store.bind(tape, self.embedding.table),
            forward: self.forward.bind(store, tape),
            backward: self.backward.bind(store, tape),
            attention: with_attention.then(|| self.attention.bind(store, tape)),
        }
    }
}

/// Encoder output for a batch, time-major.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    /// `E_t = H_t ⊕ C_t`, each `[B × width]`.
    pub steps: Vec<Var>,
    pub hidden: Vec<Var>,
    pub context: Option<Vec<Var>>,
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl EncodedBatch {
    pub fn mask(&self, t: usize) -> Vec<bool> {
        step_mask(&self.lengths, t)
    }

    /// Rows of utterance `b` stacked into `[T × width]`.
    pub fn utterance(&self, tape: &mut Tape, b: usize) -> Result<Var> {
        let sources = self.steps.iter().map(|&e| Some((e, b))).collect();
        tape.gather_rows(sources, self.width)
    }
}

/// Per-utterance view of the encoder output.
#[derive(Clone, Debug)]
pub struct EncodedUtterance {
    pub e: Var,
    pub h: Var,
    pub c: Option<Var>,
    pub mask: Vec<bool>,
}

/// Embeds and encodes a padded batch. Dropout (training only) is applied to
/// the embeddings, which then feed both the BiLSTM and the attention branch.
pub fn encode_batch(
    tape: &mut Tape,
    enc: &EncoderParams,
    bound: &BoundEncoder,
    batch: &UtteranceBatch,
    dropout_rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<EncodedBatch> {
    let steps = batch.max_len();
    if steps == 0 {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    let rows = batch.batch_size();
    let dim = enc.embedding.dim;
    let mut emb = Vec::with_capacity(steps);
    for t in 0..steps {
        let ids = batch.step_ids(t);
        let x = enc.embedding.embed(tape, bound.table, &ids)?;
        emb.push(tape.dropout(x, dropout_rate, rng, training)?);
    }
    let hidden = bilstm_forward(tape, &emb, &batch.lengths, &bound.forward, &bound.backward)?;
    let hidden_width = 2 * bound.forward.hidden;

    let Some(attention) = bound.attention else {
        return Ok(EncodedBatch {
            steps: hidden.clone(),
            hidden,
            context: None,
            lengths: batch.lengths.clone(),
            width: hidden_width,
        });
    };

    let mut per_utterance = Vec::with_capacity(rows);
    for b in 0..rows {
        let x = tape.gather_rows(emb.iter().map(|&e| Some((e, b))).collect(), dim)?;
        let mask: Vec<bool> = (0..steps).map(|t| t < batch.lengths[b]).collect();
        per_utterance.push(gaussian_self_attention(tape, x, &mask, &attention)?);
    }
    let mut context = Vec::with_capacity(steps);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let c_t = tape.gather_rows(per_utterance.iter().map(|&c| Some((c, t))).collect(), dim)?;
        out.push(tape.concat(&[hidden[t], c_t], 1)?);
        context.push(c_t);
    }
    Ok(EncodedBatch {
        steps: out,
        hidden,
        context: Some(context),
        lengths: batch.lengths.clone(),
        width: hidden_width + dim,
    })
}

/// Encodes a single utterance (a batch of one) and returns `[T × width]` views.
pub fn encode_utterance(
    tape: &mut Tape,
    enc: &EncoderParams,
    bound: &BoundEncoder,
    batch: &UtteranceBatch,
    dropout_rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<EncodedUtterance> {
    if batch.batch_size() != 1 {
        return Err(Error::InvalidArgument("encode_utterance takes a batch of one".into()));
    }
    let encoded = encode_batch(tape, enc, bound, batch, dropout_rate, rng, training)?;
    let e = encoded.utterance(tape, 0)?;
    let stack = |tape: &mut Tape, parts: &[Var]| {
        let w = tape.shape(parts[0])[1];
        tape.gather_rows(parts.iter().map(|&p| Some((p, 0))).collect(), w)
    };
    let h = stack(tape, &encoded.hidden)?;
    let c = match &encoded.context {
        Some(ctx) => Some(stack(tape, ctx)?),
        None => None,
    };
    Ok(EncodedUtterance {
        e,
        h,
        c,
        mask: encoded.mask_matrix_row(0),
    })
}

impl EncodedBatch {
    fn mask_matrix_row(&self, b: usize) -> Vec<bool> {
        (0..self.steps.len()).map(|t| t < self.lengths[b]).collect()
    }
}
