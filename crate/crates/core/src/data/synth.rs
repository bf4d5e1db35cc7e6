use std::fmt::Write as _;

use super::{Corpus, Sample};
use crate::config::parse;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shape of a synthetic corpus in which slot types co-occur with intents.
///
/// Each intent owns `slot_types` slot types and each slot type owns a lexicon
/// of `lexicon_size` words. With probability `purity` a slot span is drawn
/// from the utterance's own intent, otherwise from a different intent.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_intents: usize,
    pub slot_types: usize,
    pub lexicon_size: usize,
    pub filler_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_spans: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub purity: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_intents: 5,
            slot_types: 3,
            lexicon_size: 20,
            filler_size: 40,
            min_len: 4,
            max_len: 12,
            max_spans: 3,
            train: 2000,
            dev: 200,
            test: 200,
            purity: 1.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {}", m)));
        if !(0.0..=1.0).contains(&self.purity) {
            return bad("purity must lie in [0, 1]");
        }
        if self.n_intents == 0 || self.slot_types == 0 || self.lexicon_size == 0 || self.filler_size == 0 {
            return bad("counts must be positive");
        }
        if self.purity < 1.0 && self.n_intents < 2 {
            return bad("purity below 1 needs at least two intents");
        }
        if self.max_spans == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len and max_spans >= 1");
        }
        Ok(())
    }

    pub fn intent_name(intent: usize) -> String {
        format!("intent{}", intent)
    }

    pub fn slot_type_name(intent: usize, slot: usize) -> String {
        format!("i{}_s{}", intent, slot)
    }

    pub fn slot_word(intent: usize, slot: usize, k: usize) -> String {
        format!("w{}_{}_{}", intent, slot, k)
    }

    pub fn filler_word(k: usize) -> String {
        format!("f{}", k)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_intents = {}", self.n_intents);
        let _ = writeln!(out, "slot_types = {}", self.slot_types);
        let _ = writeln!(out, "lexicon_size = {}", self.lexicon_size);
        let _ = writeln!(out, "filler_size = {}", self.filler_size);
        let _ = writeln!(out, "min_len = {}", self.min_len);
        let _ = writeln!(out, "max_len = {}", self.max_len);
        let _ = writeln!(out, "max_spans = {}", self.max_spans);
        let _ = writeln!(out, "train = {}", self.train);
        let _ = writeln!(out, "dev = {}", self.dev);
        let _ = writeln!(out, "test = {}", self.test);
        let _ = writeln!(out, "purity = {}", self.purity);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n_intents" => self.n_intents = parse(key, value)?,
            "slot_types" => self.slot_types = parse(key, value)?,
            "lexicon_size" => self.lexicon_size = parse(key, value)?,
            "filler_size" => self.filler_size = parse(key, value)?,
            "min_len" => self.min_len = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "max_spans" => self.max_spans = parse(key, value)?,
            "train" => self.train = parse(key, value)?,
            "dev" => self.dev = parse(key, value)?,
            "test" => self.test = parse(key, value)?,
            "purity" => self.purity = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn sample(spec: &SynthSpec, rng: &mut Rng) -> Sample {
    let intent = rng.below(spec.n_intents);
    let target_len = rng.inclusive(spec.min_len, spec.max_len);

    // Spans of one or two tokens, separated by at least one filler so that
    // adjacent spans never merge into one chunk.
    let n_spans = rng.inclusive(1, spec.max_spans);
    let mut spans = Vec::with_capacity(n_spans);
    for _ in 0..n_spans {
        let own = rng.bernoulli(spec.purity);
        let source = if own {
            intent
        } else {
            let other = rng.below(spec.n_intents - 1);
            if other >= intent {
                other + 1
            } else {
                other
            }
        };
        let slot = rng.below(spec.slot_types);
        let len = rng.inclusive(1, 2);
        let words: Vec<usize> = (0..len).map(|_| rng.below(spec.lexicon_size)).collect();
        spans.push((source, slot, words));
    }
    let span_tokens: usize = spans.iter().map(|s| s.2.len()).sum();
    let minimum = span_tokens + n_spans - 1;
    let extra = target_len.saturating_sub(minimum);

    // gaps[0] leads, gaps[n_spans] trails, inner gaps start at one
    let mut gaps = vec![0usize; n_spans + 1];
    for g in gaps.iter_mut().take(n_spans).skip(1) {
        *g = 1;
    }
    for _ in 0..extra {
        gaps[rng.below(n_spans + 1)] += 1;
    }

    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let filler = |n: usize, tokens: &mut Vec<String>, tags: &mut Vec<String>, rng: &mut Rng| {
        for _ in 0..n {
            tokens.push(SynthSpec::filler_word(rng.below(spec.filler_size)));
            tags.push("O".to_string());
        }
    };
    for (k, (source, slot, words)) in spans.iter().enumerate() {
        filler(gaps[k], &mut tokens, &mut tags, rng);
        let ty = SynthSpec::slot_type_name(*source, *slot);
        for (j, &w) in words.iter().enumerate() {
            tokens.push(SynthSpec::slot_word(*source, *slot, w));
            tags.push(format!("{}-{}", if j == 0 { "B" } else { "I" }, ty));
        }
    }
    filler(gaps[n_spans], &mut tokens, &mut tags, rng);

    Sample {
        tokens,
        tags,
        intent: SynthSpec::intent_name(intent),
    }
}

/// Draws train, dev and test splits deterministically from `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut draw = |n: usize| (0..n).map(|_| sample(spec, &mut rng)).collect::<Vec<_>>();
    let train = draw(spec.train);
    let dev = draw(spec.dev);
    let test = draw(spec.test);
    Ok(Corpus { train, dev, test })
}
