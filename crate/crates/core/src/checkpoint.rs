//! Binary checkpoints: a text header with the resolved configuration, the
//! three vocabularies, and every tensor the model's ablation uses.
//!
//! Layout (all integers little-endian `u64`, strings length-prefixed UTF-8):
//! magic, header text, word list, slot list, intent list, tensor count, then
//! per tensor its name, rank, shape and raw `f64` bits.

use std::fs;
use std::path::Path;

use crate::config::{parse_kv, ModelDims, TrainConfig};
use crate::data::{EncodedSample, Index, Sample, Vocab};
use crate::error::{Error, Result};
use crate::model::{PinModel, Sizes};

const MAGIC: &[u8; 8] = b"PINCKPT1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub model: PinModel,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, vocab: Vocab, model: PinModel) -> Result<Self> {
        let sizes = Sizes {
            vocab: vocab.words.len(),
            slots: vocab.slots.len(),
            intents: vocab.intents.len(),
        };
        if sizes != model.sizes {
            return Err(Error::InvalidArgument(format!(
                "model sizes {:?} do not match vocabulary sizes {:?}",
                model.sizes, sizes
            )));
        }
        if config.ablation != model.ablation {
            return Err(Error::InvalidArgument("config and model disagree on ablation flags".into()));
        }
        Ok(Checkpoint { config, vocab, model })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let mut header = String::new();
        self.config.write_kv(&mut header);
        self.model.dims.write_kv(&mut header);
        put_str(&mut out, &header);
        for index in [&self.vocab.words, &self.vocab.slots, &self.vocab.intents] {
            put_u64(&mut out, index.len() as u64);
            for item in index.items() {
                put_str(&mut out, item);
            }
        }
        let active = self.model.active_ids();
        put_u64(&mut out, active.len() as u64);
        for id in active {
            let p = self.model.store.get(id);
            put_str(&mut out, &p.name);
            put_u64(&mut out, p.shape.len() as u64);
            for &d in &p.shape {
                put_u64(&mut out, d as u64);
            }
            for &v in &p.values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let header = r.string()?;
        let mut config = TrainConfig::default();
        let mut dims = ModelDims::default();
        for (key, value) in parse_kv(&header)? {
            if !(config.set(&key, &value)? || dims.set(&key, &value)?) {
                return Err(Error::Checkpoint(format!("unknown header key `{}`", key)));
            }
        }
        let mut lists = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = r.len()?;
            let items = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
            let index = Index::from_items(items);
            if index.len() != n {
                return Err(Error::Checkpoint("duplicate vocabulary entry".into()));
            }
            lists.push(index);
        }
        let intents = lists.pop().unwrap();
        let slots = lists.pop().unwrap();
        let words = lists.pop().unwrap();
        let vocab = Vocab { words, slots, intents };
        let sizes = Sizes {
            vocab: vocab.words.len(),
            slots: vocab.slots.len(),
            intents: vocab.intents.len(),
        };

        // Rebuilding from the seed restores tensors the ablation left out.
        let mut model = PinModel::new(sizes, dims, config.ablation, config.seed)?;
        let mut expected = model.active_ids();
        let count = r.len()?;
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", name)))?;
            let param = model.store.get_mut(id);
            if param.shape != shape {
                return Err(Error::Mismatch {
                    dimension: tensor_dimension(&name),
                    checkpoint: format!("{} {:?}", name, shape),
                    data: format!("{:?}", param.shape),
                });
            }
            for v in param.values.iter_mut() {
                *v = f64::from_bits(r.u64()?);
            }
            expected.retain(|&e| e != id);
        }
        if let Some(&missing) = expected.first() {
            return Err(Error::Checkpoint(format!("missing tensor `{}`", model.store.get(missing).name)));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, vocab, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Encodes labelled samples with this checkpoint's vocabularies. A slot
    /// tag or intent the model was not built for is a mismatch.
    pub fn encode(&self, samples: &[Sample]) -> Result<Vec<EncodedSample>> {
        for s in samples {
            if let Some(tag) = s.tags.iter().find(|t| self.vocab.slots.get(t).is_none()) {
                return Err(Error::Mismatch {
                    dimension: "slot label set",
                    checkpoint: format!("{} tags", self.vocab.slots.len()),
                    data: format!("unknown tag `{}`", tag),
                });
            }
            if self.vocab.intents.get(&s.intent).is_none() {
                return Err(Error::Mismatch {
                    dimension: "intent label set",
                    checkpoint: format!("{} intents", self.vocab.intents.len()),
                    data: format!("unknown intent `{}`", s.intent),
                });
            }
        }
        self.vocab.encode_all(samples)
    }
}

fn tensor_dimension(name: &str) -> &'static str {
    match name {
        "encoder.embedding" => "vocabulary size",
        "output.slot" => "slot label count",
        "output.intent" => "intent label count",
        _ => "tensor shape",
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::data::{build_vocabs, Corpus};

    fn sample(tokens: &str, tags: &str, intent: &str) -> Sample {
        Sample {
            tokens: tokens.split_whitespace().map(String::from).collect(),
            tags: tags.split_whitespace().map(String::from).collect(),
            intent: intent.into(),
        }
    }

    fn fixture(ablation: Ablation) -> Checkpoint {
        let corpus = Corpus {
            train: vec![sample("play some jazz", "O O B-genre", "PlayMusic"), sample("book a table", "O O O", "Book")],
            dev: vec![sample("play rock", "O B-genre", "PlayMusic")],
            test: vec![sample("book now", "O O", "Book")],
        };
        let vocab = build_vocabs(&corpus).unwrap();
        let config = TrainConfig {
            seed: 7,
            ablation,
            learning_rate: 0.0123,
            ..TrainConfig::default()
        };
        let sizes = Sizes {
            vocab: vocab.words.len(),
            slots: vocab.slots.len(),
            intents: vocab.intents.len(),
        };
        let mut model = PinModel::new(sizes, ModelDims { emb_dim: 4, hidden: 3 }, ablation, 7).unwrap();
        // Perturb active tensors so a reload from the seed alone would differ.
        for id in model.active_ids() {
            for (k, v) in model.store.get_mut(id).values.iter_mut().enumerate() {
                *v += (k as f64).sin() * 1e-3;
            }
            model.store.get_mut(id).zero_frozen_row();
        }
        Checkpoint::new(config, vocab, model).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for ablation in [Ablation::default(), Ablation { no_intent2slot: true, ..Ablation::default() }] {
            let ckpt = fixture(ablation);
            let bytes = ckpt.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.config, ckpt.config);
            assert_eq!(back.vocab, ckpt.vocab);
            assert_eq!(back.model.dims, ckpt.model.dims);
            for ((_, a), (_, b)) in back.model.store.iter().zip(ckpt.model.store.iter()) {
                let bits = |p: &crate::tensor::Param| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b), "{}", a.name);
            }
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn disabled_tensors_are_not_written() {
        let bytes = fixture(Ablation { no_intent2slot: true, ..Ablation::default() }).to_bytes();
        let has = |needle: &str| bytes.windows(needle.len()).any(|w| w == needle.as_bytes());
        assert!(!has("intent2slot.rational_slot"));
        assert!(has("slot2intent.rational_intent"));
        assert!(has("no_intent2slot = true"));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = fixture(Ablation::default()).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"garbage!"), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn unknown_labels_name_the_dimension() {
        let ckpt = fixture(Ablation::default());
        let err = ckpt.encode(&[sample("play", "B-artist", "PlayMusic")]).unwrap_err();
        assert!(err.to_string().contains("slot label set"), "{}", err);
        let err = ckpt.encode(&[sample("play", "O", "GetWeather")]).unwrap_err();
        assert!(err.to_string().contains("intent label set"), "{}", err);
        assert_eq!(ckpt.encode(&[sample("PLAY unseen", "O O", "Book")]).unwrap()[0].tokens, vec![2, 1]);
    }

    #[test]
    fn shape_conflicts_are_mismatches() {
        let ckpt = fixture(Ablation::default());
        let mut bytes = ckpt.to_bytes();
        // Rewrite the first shape entry of the embedding table (its row count).
        let name = b"encoder.embedding";
        let at = bytes.windows(name.len()).position(|w| w == name).unwrap() + name.len() + 8;
        let rows = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        bytes[at..at + 8].copy_from_slice(&(rows + 1).to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Mismatch { dimension: "vocabulary size", .. }), "{}", err);
    }
}
