//! Transformer encoder/decoder stacks shared by every architecture.
//!
//! Pre-norm residual blocks, sinusoidal positions that restart at zero for
//! every encoder pass, GELU feed-forward layers, one embedding table shared
//! by source, target and the output projection.

mod params;
mod session;

use std::fmt;
use std::str::FromStr;

pub use params::{ParamStore, MATCH_ENCODER_PREFIX};
pub use session::Session;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    RatCat,
    RatSep,
    RatSi,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::RatCat, Variant::RatSep, Variant::RatSi];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::RatCat => "rat-cat",
            Variant::RatSep => "rat-sep",
            Variant::RatSi => "rat-si",
        }
    }

    pub fn uses_matches(self) -> bool {
        self != Variant::Baseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("variant: unknown value {s:?} (expected baseline, rat-cat, rat-sep or rat-si)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub vocab_size: usize,
    pub variant: Variant,
    /// Number of fuzzy matches fed to the model.
    pub k: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: 2+2 layers, width 64, 4 heads, FF 256.
    pub fn desk(vocab_size: usize, variant: Variant, k: usize) -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            max_len: 256,
            vocab_size,
            variant,
            k,
        }
    }

    /// Full-size configuration: 6+6 layers, width 1024, inputs up to 1024 tokens.
    pub fn paper_scale(vocab_size: usize, variant: Variant, k: usize) -> Self {
        Self {
            enc_layers: 6,
            dec_layers: 6,
            d_model: 1024,
            n_heads: 16,
            d_ff: 4096,
            dropout: 0.1,
            max_len: 1024,
            vocab_size,
            variant,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("n_heads", format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} is outside [0, 1)", self.dropout));
        }
        if self.max_len < 2 {
            return bad("max_len", format!("{} is below 2", self.max_len));
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS {
            return bad("vocab_size", format!("{} leaves no room beyond the special tokens", self.vocab_size));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("enc_layers", "both stacks need at least one layer".into());
        }
        if self.d_ff == 0 {
            return bad("d_ff", "must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Which encoder stack runs a pass. `MatchEncoder` exists only for `rat-sep`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderChoice {
    Main,
    MatchEncoder,
}

/// Origin of a memory position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Source,
    /// Zero-based index of the fuzzy match.
    Match(usize),
}

/// Encoder states the decoder cross-attends over.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    /// `[total_len × d_model]`
    pub states: Tensor,
    pub key_mask: Vec<bool>,
    pub provenance: Vec<Provenance>,
}

impl Memory {
    pub fn len(&self) -> usize {
        self.key_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_mask.is_empty()
    }

    /// Rows belonging to one provenance label, in order.
    pub fn block(&self, label: Provenance) -> Vec<&[f64]> {
        self.provenance
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == label)
            .map(|(i, _)| self.states.row(i))
            .collect()
    }
}

/// Model parameters together with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }
}

/// Encode one sequence with the main encoder.
///
/// `pad_mask[i]` is `true` for real tokens; padded positions are never
/// attended to as keys. `self_attn_mask` further restricts connectivity.
pub fn encode(model: &Model, token_ids: &[u32], pad_mask: &[bool], self_attn_mask: Option<&crate::tensor::AttnMask>) -> Result<Tensor> {
    let mut s = Session::inference(model);
    let states = s.encode_single(EncoderChoice::Main, token_ids, pad_mask, self_attn_mask)?;
    Ok(s.tape.value(states).clone())
}

/// Next-token logits after `prefix` (which starts with BOS).
pub fn decode_step(model: &Model, memory: &Memory, prefix: &[u32]) -> Result<Vec<f64>> {
    let mut s = Session::inference(model);
    let mem = s.tape.constant(memory.states.clone());
    let logits = s.decode(mem, &memory.key_mask, prefix)?;
    let v = s.tape.value(logits);
    Ok(v.row(v.dims2().0 - 1).to_vec())
}
