//! Intent error rate, chunk-level slot F1 and sentence accuracy.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::config::{parse, parse_kv};
use crate::error::{Error, Result};

/// A labelled span with inclusive token bounds.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chunk {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

fn split_tag(tag: &str) -> (char, &str) {
    match tag.split_once('-') {
        Some((p, kind)) if p == "B" || p == "I" => (p.chars().next().unwrap_or('O'), kind),
        _ => ('O', ""),
    }
}

/// Chunks in conlleval style: `B-X` opens a chunk, `I-X` extends an open `X`
/// chunk or else opens one, and anything else closes the open chunk.
pub fn extract_chunks<S: AsRef<str>>(tags: &[S]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, kind) = split_tag(tag.as_ref());
        let continues = prefix == 'I' && open.as_ref().is_some_and(|(k, _)| k == kind);
        if continues {
            continue;
        }
        if let Some((k, start)) = open.take() {
            chunks.push(Chunk { kind: k, start, end: i - 1 });
        }
        if prefix != 'O' {
            open = Some((kind.to_string(), i));
        }
    }
    if let Some((kind, start)) = open {
        chunks.push(Chunk {
            kind,
            start,
            end: tags.len() - 1,
        });
    }
    chunks
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_chunks: usize,
    pub predicted_chunks: usize,
    pub matched_chunks: usize,
}

impl SlotScores {
    fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SlotScores {
            precision,
            recall,
            f1,
            gold_chunks: gold,
            predicted_chunks: predicted,
            matched_chunks: matched,
        }
    }
}

fn check_aligned<A, B>(gold: &[A], predicted: &[B], what: &str) -> Result<()> {
    if gold.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: {} gold vs {} predicted utterances",
            what,
            gold.len(),
            predicted.len()
        )));
    }
    Ok(())
}

/// Micro-averaged chunk precision, recall and F1; a predicted chunk counts
/// only if type and both bounds match a gold chunk.
pub fn slot_f1<S: AsRef<str>>(gold: &[Vec<S>], predicted: &[Vec<S>]) -> Result<SlotScores> {
    check_aligned(gold, predicted, "slot_f1")?;
    let (mut n_gold, mut n_pred, mut matched) = (0, 0, 0);
    for (n, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "slot_f1: utterance {} has {} gold and {} predicted tags",
                n,
                g.len(),
                p.len()
            )));
        }
        let g: HashSet<Chunk> = extract_chunks(g).into_iter().collect();
        let p = extract_chunks(p);
        n_gold += g.len();
        n_pred += p.len();
        matched += p.iter().filter(|c| g.contains(c)).count();
    }
    Ok(SlotScores::from_counts(n_gold, n_pred, matched))
}

/// Fraction of utterances whose predicted intent differs from gold.
pub fn intent_error_rate<T: PartialEq>(gold: &[T], predicted: &[T]) -> Result<f64> {
    check_aligned(gold, predicted, "intent_error_rate")?;
    if gold.is_empty() {
        return Err(Error::InvalidArgument("intent_error_rate of no utterances".into()));
    }
    let wrong = gold.iter().zip(predicted).filter(|(g, p)| g != p).count();
    Ok(wrong as f64 / gold.len() as f64)
}

/// Fraction of utterances with the right intent and every slot tag right.
pub fn sentence_accuracy<T: PartialEq, S: PartialEq>(
    gold_intents: &[T],
    gold_tags: &[Vec<S>],
    predicted_intents: &[T],
    predicted_tags: &[Vec<S>],
) -> Result<f64> {
    check_aligned(gold_intents, predicted_intents, "sentence_accuracy")?;
    check_aligned(gold_tags, predicted_tags, "sentence_accuracy")?;
    check_aligned(gold_intents, gold_tags, "sentence_accuracy")?;
    if gold_intents.is_empty() {
        return Err(Error::InvalidArgument("sentence_accuracy of no utterances".into()));
    }
    let correct = (0..gold_intents.len())
        .filter(|&i| gold_intents[i] == predicted_intents[i] && gold_tags[i] == predicted_tags[i])
        .count();
    Ok(correct as f64 / gold_intents.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub intent_error_rate: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub sentence_accuracy: f64,
    pub utterances: usize,
    pub gold_chunks: usize,
    pub predicted_chunks: usize,
    pub matched_chunks: usize,
}

impl MetricsReport {
    pub fn compute<S: AsRef<str> + PartialEq>(
        gold_intents: &[S],
        gold_tags: &[Vec<S>],
        predicted_intents: &[S],
        predicted_tags: &[Vec<S>],
    ) -> Result<Self> {
        let slots = slot_f1(gold_tags, predicted_tags)?;
        Ok(MetricsReport {
            intent_error_rate: intent_error_rate(gold_intents, predicted_intents)?,
            slot_precision: slots.precision,
            slot_recall: slots.recall,
            slot_f1: slots.f1,
            sentence_accuracy: sentence_accuracy(gold_intents, gold_tags, predicted_intents, predicted_tags)?,
            utterances: gold_intents.len(),
            gold_chunks: slots.gold_chunks,
            predicted_chunks: slots.predicted_chunks,
            matched_chunks: slots.matched_chunks,
        })
    }

    /// One `metric = value` line per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "intent_error_rate = {}", self.intent_error_rate);
        let _ = writeln!(out, "slot_precision = {}", self.slot_precision);
        let _ = writeln!(out, "slot_recall = {}", self.slot_recall);
        let _ = writeln!(out, "slot_f1 = {}", self.slot_f1);
        let _ = writeln!(out, "sentence_accuracy = {}", self.sentence_accuracy);
        let _ = writeln!(out, "utterances = {}", self.utterances);
        let _ = writeln!(out, "gold_chunks = {}", self.gold_chunks);
        let _ = writeln!(out, "predicted_chunks = {}", self.predicted_chunks);
        let _ = writeln!(out, "matched_chunks = {}", self.matched_chunks);
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = parse_kv(text)?;
        let get = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("metrics report lacks `{}`", key)))
        };
        Ok(MetricsReport {
            intent_error_rate: parse("intent_error_rate", get("intent_error_rate")?)?,
            slot_precision: parse("slot_precision", get("slot_precision")?)?,
            slot_recall: parse("slot_recall", get("slot_recall")?)?,
            slot_f1: parse("slot_f1", get("slot_f1")?)?,
            sentence_accuracy: parse("sentence_accuracy", get("sentence_accuracy")?)?,
            utterances: parse("utterances", get("utterances")?)?,
            gold_chunks: parse("gold_chunks", get("gold_chunks")?)?,
            predicted_chunks: parse("predicted_chunks", get("predicted_chunks")?)?,
            matched_chunks: parse("matched_chunks", get("matched_chunks")?)?,
        })
    }
}
