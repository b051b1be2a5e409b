use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Variant};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Name prefix of the second encoder used by `rat-sep`.
pub const MATCH_ENCODER_PREFIX: &str = "menc";

#[derive(Clone, Copy)]
enum Init {
    Embedding,
    Xavier,
    Zeros,
    Ones,
}

fn specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, ff) = (cfg.d_model, cfg.d_ff);
    let mut out = vec![("embed".to_string(), vec![cfg.vocab_size, d], Init::Embedding)];
    let ln = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.g"), vec![d], Init::Ones));
        out.push((format!("{p}.b"), vec![d], Init::Zeros));
    };
    let attn = |out: &mut Vec<_>, p: &str| {
        for w in ["q", "k", "v", "o"] {
            out.push((format!("{p}.w{w}"), vec![d, d], Init::Xavier));
            out.push((format!("{p}.b{w}"), vec![d], Init::Zeros));
        }
    };
    let feed_forward = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.w1"), vec![d, ff], Init::Xavier));
        out.push((format!("{p}.b1"), vec![ff], Init::Zeros));
        out.push((format!("{p}.w2"), vec![ff, d], Init::Xavier));
        out.push((format!("{p}.b2"), vec![d], Init::Zeros));
    };
    let mut encoders = vec!["enc"];
    if cfg.variant == Variant::RatSep {
        encoders.push(MATCH_ENCODER_PREFIX);
    }
    for e in encoders {
        for l in 0..cfg.enc_layers {
            ln(&mut out, &format!("{e}.{l}.ln1"));
            attn(&mut out, &format!("{e}.{l}.attn"));
            ln(&mut out, &format!("{e}.{l}.ln2"));
            feed_forward(&mut out, &format!("{e}.{l}.ff"));
        }
        ln(&mut out, &format!("{e}.ln"));
    }
    for l in 0..cfg.dec_layers {
        ln(&mut out, &format!("dec.{l}.ln1"));
        attn(&mut out, &format!("dec.{l}.self"));
        ln(&mut out, &format!("dec.{l}.ln2"));
        attn(&mut out, &format!("dec.{l}.cross"));
        ln(&mut out, &format!("dec.{l}.ln3"));
        feed_forward(&mut out, &format!("dec.{l}.ff"));
    }
    ln(&mut out, "dec.ln");
    out
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut named = Vec::new();
        for (name, shape, init) in specs(cfg) {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::from_fn(&shape, |_| 1.0),
                Init::Embedding => {
                    // uniform with variance 1/d
                    let a = (3.0 / shape[1] as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-a..a))
                }
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-a..a))
                }
            };
            named.push((name, t));
        }
        Self::from_named(named)
    }

    pub fn from_named(named: Vec<(String, Tensor)>) -> Self {
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (n, t) in named {
            names.push(n);
            tensors.push(Arc::new(t));
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    /// Every tensor the configuration expects exists with the right shape,
    /// and nothing else.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = specs(cfg);
        if expected.len() != self.names.len() {
            return Err(Error::Model(format!("expected {} tensors, found {}", expected.len(), self.names.len())));
        }
        for ((name, shape, _), (have_name, have)) in expected.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != have_name || shape.as_slice() != have.shape() {
                return Err(Error::Model(format!(
                    "tensor {have_name} {:?} does not match expected {name} {:?}",
                    have.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| self.tensors[i].as_ref())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn set(&mut self, i: usize, value: Tensor) {
        assert_eq!(self.tensors[i].shape(), value.shape(), "shape change for {}", self.names[i]);
        self.tensors[i] = Arc::new(value);
    }

    /// Mutable access to the values of tensor `i`, copying only if shared.
    pub fn values_mut(&mut self, i: usize) -> &mut [f64] {
        Arc::make_mut(&mut self.tensors[i]).data_mut()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }
}
