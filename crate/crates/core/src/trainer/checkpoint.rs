//! Binary model checkpoints.
//!
//! Layout: magic "RQRF", version u32 = 1, tensor count u32, then per tensor
//! a length-prefixed UTF-8 name, rank u32, dims u32[], and a row-major
//! little-endian f32 payload; followed by the serialized vocabulary and a
//! JSON config echo. Every u32 is little-endian. Round trips are bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tower::{
    AttentionParams, ConvBlockParams, FcParams, ModelConfig, ModelParams, TowerParams,
};
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 4] = b"RQRF";
const VERSION: u32 = 1;

/// Provenance carried alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub universe_fingerprint: u64,
    pub trained_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams<f32>,
    pub meta: CheckpointMeta,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format("checkpoint string not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, VERSION);
        let tensors = self.model.visit();
        push_u32(&mut out, tensors.len() as u32);
        for (name, tensor, _) in &tensors {
            push_str(&mut out, name);
            push_u32(&mut out, tensor.rank() as u32);
            for dim in tensor.shape() {
                push_u32(&mut out, *dim as u32);
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        // vocabulary
        push_u32(&mut out, self.model.vocab.words().len() as u32);
        for word in self.model.vocab.words() {
            push_str(&mut out, word);
        }
        push_u32(&mut out, self.model.vocab.chars().len() as u32);
        for c in self.model.vocab.chars() {
            push_u32(&mut out, *c as u32);
        }
        // config echo
        let echo = serde_json::to_string(&self.meta).expect("meta serializes");
        push_str(&mut out, &echo);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let tensor_count = r.u32()? as usize;
        let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for _ in 0..tensor_count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let b = r.take(4)?;
                data.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            }
            if tensors.insert(name.clone(), Tensor::from_vec(&dims, data)).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        let word_count = r.u32()? as usize;
        let mut words = Vec::with_capacity(word_count);
        for _ in 0..word_count {
            words.push(r.string()?);
        }
        let char_count = r.u32()? as usize;
        let mut chars = Vec::with_capacity(char_count);
        for _ in 0..char_count {
            let cp = r.u32()?;
            chars.push(
                char::from_u32(cp)
                    .ok_or_else(|| Error::Format(format!("bad char code point {cp}")))?,
            );
        }
        let vocab = Vocabulary::from_parts(words, chars);
        let echo = r.string()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let meta: CheckpointMeta = serde_json::from_str(&echo)
            .map_err(|e| Error::Format(format!("bad config echo: {e}")))?;
        meta.model_config.validate()?;

        let mut take = |name: &str| {
            tensors
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {name}")))
        };
        let cfg = meta.model_config;
        let mut tower = |prefix: &str| -> Result<TowerParams<f32>> {
            let conv = if cfg.flags.use_cnn {
                (0..cfg.n_blocks)
                    .map(|i| {
                        Ok(ConvBlockParams {
                            depthwise: take(&format!("{prefix}.conv.{i}.depthwise"))?,
                            pointwise: take(&format!("{prefix}.conv.{i}.pointwise"))?,
                            bias: take(&format!("{prefix}.conv.{i}.bias"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let attention = if cfg.flags.use_attention {
                Some(AttentionParams {
                    wq: take(&format!("{prefix}.attention.wq"))?,
                    wk: take(&format!("{prefix}.attention.wk"))?,
                    wv: take(&format!("{prefix}.attention.wv"))?,
                })
            } else {
                None
            };
            let fc = if cfg.flags.use_mlp {
                Some(FcParams {
                    weight: take(&format!("{prefix}.fc.weight"))?,
                    bias: take(&format!("{prefix}.fc.bias"))?,
                })
            } else {
                None
            };
            Ok(TowerParams {
                word_embed: take(&format!("{prefix}.word_embed"))?,
                char_embed: take(&format!("{prefix}.char_embed"))?,
                input_proj: take(&format!("{prefix}.input_proj"))?,
                conv,
                attention,
                fc,
            })
        };
        let query_tower = tower("query")?;
        let keyword_tower = tower("keyword")?;
        if !tensors.is_empty() {
            let leftover: Vec<String> = tensors.keys().cloned().collect();
            return Err(Error::Format(format!(
                "unexpected tensors in checkpoint: {leftover:?}"
            )));
        }
        let model = ModelParams {
            config: cfg,
            vocab,
            query_tower,
            keyword_tower,
        };
        Ok(Checkpoint { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
