//! Corpora in the three-file layout (`seq.in`, `seq.out`, `label` per split
//! directory), vocabularies, and padded batches.

mod synth;

pub use synth::{generate_synthetic, SynthSpec};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_WORD: &str = "<pad>";
pub const UNK_WORD: &str = "<unk>";
/// Slot id at padded positions; never a valid label.
pub const PAD_LABEL: usize = usize::MAX;

/// Split directory names, in the order train, dev, test.
pub const SPLIT_DIRS: [&str; 3] = ["train", "valid", "test"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub intent: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(name: &str) -> Result<Split> {
        match name {
            "train" => Ok(Split::Train),
            "valid" | "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{}`", other))),
        }
    }
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn splits(&self) -> [&[Sample]; 3] {
        [&self.train, &self.dev, &self.test]
    }
}

/// Whether `tag` is `O`, `B-X` or `I-X` with a non-empty type.
pub fn is_valid_tag(tag: &str) -> bool {
    tag == "O"
        || tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .is_some_and(|t| !t.is_empty())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).collect())
}

/// Reads one split directory.
pub fn load_split(dir: &Path) -> Result<Vec<Sample>> {
    let seq_in = read_lines(&dir.join("seq.in"))?;
    let seq_out = read_lines(&dir.join("seq.out"))?;
    let labels = read_lines(&dir.join("label"))?;
    for (file, lines) in [("seq.out", &seq_out), ("label", &labels)] {
        if lines.len() != seq_in.len() {
            return Err(Error::LineCount {
                dir: dir.to_path_buf(),
                file,
                expected: seq_in.len(),
                found: lines.len(),
            });
        }
    }
    let mut samples = Vec::with_capacity(seq_in.len());
    for (n, ((words, tags), intent)) in seq_in.iter().zip(&seq_out).zip(&labels).enumerate() {
        let line = n + 1;
        let tokens: Vec<String> = words.split_whitespace().map(str::to_string).collect();
        let tags: Vec<String> = tags.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::Parse {
                file: dir.join("seq.in"),
                line,
                message: "empty utterance".into(),
            });
        }
        if tokens.len() != tags.len() {
            return Err(Error::Parse {
                file: dir.join("seq.out"),
                line,
                message: format!("{} tags for {} tokens", tags.len(), tokens.len()),
            });
        }
        if let Some(bad) = tags.iter().find(|t| !is_valid_tag(t)) {
            return Err(Error::Parse {
                file: dir.join("seq.out"),
                line,
                message: format!("malformed tag `{}`", bad),
            });
        }
        if intent.is_empty() {
            return Err(Error::Parse {
                file: dir.join("label"),
                line,
                message: "empty intent label".into(),
            });
        }
        samples.push(Sample {
            tokens,
            tags,
            intent: intent.clone(),
        });
    }
    Ok(samples)
}

/// Loads `train/`, `valid/` and (if present) `test/` under `dir`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let train = load_split(&dir.join("train"))?;
    let dev = load_split(&dir.join("valid"))?;
    let test_dir = dir.join("test");
    let test = if test_dir.exists() {
        load_split(&test_dir)?
    } else {
        Vec::new()
    };
    Ok(Corpus { train, dev, test })
}

/// Writes one split in the three-file layout.
pub fn write_split(samples: &[Sample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seq_in = String::new();
    let mut seq_out = String::new();
    let mut label = String::new();
    for s in samples {
        seq_in.push_str(&s.tokens.join(" "));
        seq_in.push('\n');
        seq_out.push_str(&s.tags.join(" "));
        seq_out.push('\n');
        label.push_str(&s.intent);
        label.push('\n');
    }
    for (name, text) in [("seq.in", seq_in), ("seq.out", seq_out), ("label", label)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    for (split, name) in corpus.splits().into_iter().zip(SPLIT_DIRS) {
        write_split(split, &dir.join(name))?;
    }
    Ok(())
}

/// Bidirectional string ↔ id map with ids assigned by first insertion.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Index {
    items: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Index {
    pub fn from_items(items: impl IntoIterator<Item = String>) -> Self {
        let mut index = Index::default();
        for item in items {
            index.insert(&item);
        }
        index
    }

    pub fn insert(&mut self, item: &str) -> usize {
        if let Some(&id) = self.ids.get(item) {
            return id;
        }
        let id = self.items.len();
        self.items.push(item.to_string());
        self.ids.insert(item.to_string(), id);
        id
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.ids.get(item).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Word, slot-tag and intent vocabularies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub words: Index,
    pub slots: Index,
    pub intents: Index,
}

impl Vocab {
    /// Case-folded word id; unseen words map to [`UNK_ID`].
    pub fn word_id(&self, word: &str) -> usize {
        self.words.get(&word.to_lowercase()).unwrap_or(UNK_ID)
    }

    pub fn encode(&self, sample: &Sample) -> Result<EncodedSample> {
        let slots = sample
            .tags
            .iter()
            .map(|t| {
                self.slots
                    .get(t)
                    .ok_or_else(|| Error::InvalidArgument(format!("slot tag `{}` not in vocabulary", t)))
            })
            .collect::<Result<Vec<_>>>()?;
        let intent = self
            .intents
            .get(&sample.intent)
            .ok_or_else(|| Error::InvalidArgument(format!("intent `{}` not in vocabulary", sample.intent)))?;
        Ok(EncodedSample {
            tokens: sample.tokens.iter().map(|w| self.word_id(w)).collect(),
            slots,
            intent,
        })
    }

    pub fn encode_all(&self, samples: &[Sample]) -> Result<Vec<EncodedSample>> {
        samples.iter().map(|s| self.encode(s)).collect()
    }

    /// Unlabelled input for prediction.
    pub fn encode_tokens(&self, tokens: &[String]) -> EncodedSample {
        EncodedSample {
            tokens: tokens.iter().map(|w| self.word_id(w)).collect(),
            slots: vec![PAD_LABEL; tokens.len()],
            intent: PAD_LABEL,
        }
    }
}

/// Words come from the training split only (case-folded, after the reserved
/// `<pad>` and `<unk>`); slot tags and intents come from every split.
pub fn build_vocabs(corpus: &Corpus) -> Result<Vocab> {
    if corpus.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut words = Index::from_items([PAD_WORD.to_string(), UNK_WORD.to_string()]);
    for s in &corpus.train {
        for w in &s.tokens {
            words.insert(&w.to_lowercase());
        }
    }
    let mut slots = Index::default();
    let mut intents = Index::default();
    for split in corpus.splits() {
        for s in split {
            for t in &s.tags {
                slots.insert(t);
            }
            intents.insert(&s.intent);
        }
    }
    Ok(Vocab { words, slots, intents })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSample {
    pub tokens: Vec<usize>,
    pub slots: Vec<usize>,
    pub intent: usize,
}

/// Token ids `[B × T]` padded to the longest utterance in the batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceBatch {
    pub tokens: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub slots: Vec<Vec<usize>>,
    pub intents: Vec<usize>,
    pub mask: Vec<Vec<bool>>,
}

impl UtteranceBatch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    /// Token ids at step `t` for every row.
    pub fn step_ids(&self, t: usize) -> Vec<usize> {
        self.tokens.iter().map(|row| row[t]).collect()
    }

    pub fn step_mask(&self, t: usize) -> Vec<bool> {
        self.mask.iter().map(|row| row[t]).collect()
    }

    /// Gold slot ids at step `t`, `None` where padded.
    pub fn step_slots(&self, t: usize) -> Vec<Option<usize>> {
        self.slots
            .iter()
            .map(|row| Some(row[t]).filter(|&s| s != PAD_LABEL))
            .collect()
    }

    pub fn gold_intents(&self) -> Vec<Option<usize>> {
        self.intents
            .iter()
            .map(|&i| Some(i).filter(|&i| i != PAD_LABEL))
            .collect()
    }
}

/// Pads `samples` to the batch maximum length.
///
/// # Panics
/// If `samples` is empty.
pub fn pad_batch(samples: &[&EncodedSample]) -> UtteranceBatch {
    assert!(!samples.is_empty(), "cannot pad an empty batch");
    let max_len = samples.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
    let mut batch = UtteranceBatch {
        tokens: Vec::with_capacity(samples.len()),
        lengths: Vec::with_capacity(samples.len()),
        slots: Vec::with_capacity(samples.len()),
        intents: Vec::with_capacity(samples.len()),
        mask: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let len = s.tokens.len();
        let mut tokens = s.tokens.clone();
        tokens.resize(max_len, PAD_ID);
        let mut slots = s.slots.clone();
        slots.resize(max_len, PAD_LABEL);
        batch.tokens.push(tokens);
        batch.slots.push(slots);
        batch.lengths.push(len);
        batch.intents.push(s.intent);
        batch.mask.push((0..max_len).map(|t| t < len).collect());
    }
    batch
}
