use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::{EncoderChoice, Model, ModelConfig, MATCH_ENCODER_PREFIX};
use crate::tensor::{AttnMask, Gradients, Tape, Tensor, Var};
use crate::tokenizer::PAD;
use crate::{Error, Result};

struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

struct LnIdx {
    g: usize,
    b: usize,
}

struct FfIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

struct EncLayer {
    ln1: LnIdx,
    attn: AttnIdx,
    ln2: LnIdx,
    ff: FfIdx,
}

struct DecLayer {
    ln1: LnIdx,
    self_attn: AttnIdx,
    ln2: LnIdx,
    cross: AttnIdx,
    ln3: LnIdx,
    ff: FfIdx,
}

struct EncoderIdx {
    layers: Vec<EncLayer>,
    ln: LnIdx,
}

struct Layout {
    embed: usize,
    encoder: EncoderIdx,
    match_encoder: Option<EncoderIdx>,
    decoder: Vec<DecLayer>,
    dec_ln: LnIdx,
}

impl Layout {
    fn new(model: &Model) -> Result<Self> {
        let p = &model.params;
        let find = |n: String| p.position(&n).ok_or_else(|| Error::Model(format!("missing parameter {n}")));
        let ln = |pre: &str| -> Result<LnIdx> { Ok(LnIdx { g: find(format!("{pre}.g"))?, b: find(format!("{pre}.b"))? }) };
        let attn = |pre: &str| -> Result<AttnIdx> {
            Ok(AttnIdx {
                wq: find(format!("{pre}.wq"))?,
                bq: find(format!("{pre}.bq"))?,
                wk: find(format!("{pre}.wk"))?,
                bk: find(format!("{pre}.bk"))?,
                wv: find(format!("{pre}.wv"))?,
                bv: find(format!("{pre}.bv"))?,
                wo: find(format!("{pre}.wo"))?,
                bo: find(format!("{pre}.bo"))?,
            })
        };
        let ff = |pre: &str| -> Result<FfIdx> {
            Ok(FfIdx {
                w1: find(format!("{pre}.w1"))?,
                b1: find(format!("{pre}.b1"))?,
                w2: find(format!("{pre}.w2"))?,
                b2: find(format!("{pre}.b2"))?,
            })
        };
        let encoder = |e: &str| -> Result<EncoderIdx> {
            let layers = (0..model.config.enc_layers)
                .map(|l| {
                    Ok(EncLayer {
                        ln1: ln(&format!("{e}.{l}.ln1"))?,
                        attn: attn(&format!("{e}.{l}.attn"))?,
                        ln2: ln(&format!("{e}.{l}.ln2"))?,
                        ff: ff(&format!("{e}.{l}.ff"))?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(EncoderIdx { layers, ln: ln(&format!("{e}.ln"))? })
        };
        let match_encoder = if p.position(&format!("{MATCH_ENCODER_PREFIX}.ln.g")).is_some() {
            Some(encoder(MATCH_ENCODER_PREFIX)?)
        } else {
            None
        };
        let decoder = (0..model.config.dec_layers)
            .map(|l| {
                Ok(DecLayer {
                    ln1: ln(&format!("dec.{l}.ln1"))?,
                    self_attn: attn(&format!("dec.{l}.self"))?,
                    ln2: ln(&format!("dec.{l}.ln2"))?,
                    cross: attn(&format!("dec.{l}.cross"))?,
                    ln3: ln(&format!("dec.{l}.ln3"))?,
                    ff: ff(&format!("dec.{l}.ff"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { embed: find("embed".into())?, encoder: encoder("enc")?, match_encoder, decoder, dec_ln: ln("dec.ln")? })
    }
}

/// Sinusoidal encodings for positions `0..len`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[len, d], |idx| {
        let (pos, i) = (idx / d, idx % d);
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// One forward (and optionally backward) computation over a model.
///
/// A session owns its tape; parameters are registered once as shared
/// leaves. Training sessions apply dropout from their own RNG and record
/// gradients, inference sessions do neither.
pub struct Session<'m> {
    model: &'m Model,
    layout: Rc<Layout>,
    pub tape: Tape,
    params: Vec<Var>,
    rng: Option<ChaCha8Rng>,
    /// Add sinusoidal positions to embeddings (disable only for diagnostics).
    pub positional: bool,
    /// Keep cross-attention probability matrices for inspection.
    pub record_cross_attention: bool,
    cross_attention: Vec<Var>,
}

impl<'m> Session<'m> {
    pub fn inference(model: &'m Model) -> Self {
        Self::build(model, Tape::inference(), None)
    }

    /// Gradients are recorded for every parameter; dropout draws from `rng`.
    pub fn training(model: &'m Model, rng: ChaCha8Rng) -> Self {
        Self::build(model, Tape::new(), Some(rng))
    }

    fn build(model: &'m Model, mut tape: Tape, rng: Option<ChaCha8Rng>) -> Self {
        let layout = Rc::new(Layout::new(model).expect("parameter store validated against its config"));
        let grads = rng.is_some();
        let params = model.params.tensors().iter().map(|t| tape.leaf_shared(t.clone(), grads)).collect();
        Self { model, layout, tape, params, rng, positional: true, record_cross_attention: false, cross_attention: Vec::new() }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn cross_attention(&self) -> &[Var] {
        &self.cross_attention
    }

    fn p(&self, i: usize) -> Var {
        self.params[i]
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.model.config.dropout;
        match self.rng.as_mut() {
            Some(rng) if p > 0.0 => Ok(self.tape.dropout(x, p, rng)?),
            _ => Ok(x),
        }
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Result<Var> {
        let y = self.tape.matmul(x, self.p(w))?;
        Ok(self.tape.add_row(y, self.p(b))?)
    }

    fn layer_norm(&mut self, x: Var, ln: &LnIdx) -> Result<Var> {
        Ok(self.tape.layer_norm(x, self.p(ln.g), self.p(ln.b))?)
    }

    fn feed_forward(&mut self, x: Var, ff: &FfIdx) -> Result<Var> {
        let h = self.linear(x, ff.w1, ff.b1)?;
        let h = self.tape.gelu(h)?;
        self.linear(h, ff.w2, ff.b2)
    }

    /// Multi-head attention of `groups` independent blocks. Queries and keys
    /// are stacked row-wise: group `g` owns query rows `q_rows[g]` and key
    /// rows `k_rows[g]`, with `masks[g]` giving its connectivity.
    fn attention(
        &mut self,
        a: &AttnIdx,
        q_in: Var,
        kv_in: Var,
        groups: &[(std::ops::Range<usize>, std::ops::Range<usize>, &AttnMask)],
        record: bool,
    ) -> Result<Var> {
        let q = self.linear(q_in, a.wq, a.bq)?;
        let k = self.linear(kv_in, a.wk, a.bk)?;
        let v = self.linear(kv_in, a.wv, a.bv)?;
        let heads = self.model.config.n_heads;
        let dh = self.model.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outputs = Vec::with_capacity(groups.len());
        for (q_rows, k_rows, mask) in groups {
            let (qg, kg, vg) = if groups.len() == 1 && q_rows.start == 0 && k_rows.start == 0 {
                (q, k, v)
            } else {
                (
                    self.tape.slice_rows(q, q_rows.start, q_rows.end)?,
                    self.tape.slice_rows(k, k_rows.start, k_rows.end)?,
                    self.tape.slice_rows(v, k_rows.start, k_rows.end)?,
                )
            };
            let mut head_out = Vec::with_capacity(heads);
            for h in 0..heads {
                let (qh, kh, vh) = if heads == 1 {
                    (qg, kg, vg)
                } else {
                    (
                        self.tape.slice_cols(qg, h * dh, (h + 1) * dh)?,
                        self.tape.slice_cols(kg, h * dh, (h + 1) * dh)?,
                        self.tape.slice_cols(vg, h * dh, (h + 1) * dh)?,
                    )
                };
                let scores = self.tape.matmul_nt(qh, kh)?;
                let scores = self.tape.scale(scores, scale)?;
                let scores = self.tape.masked_fill(scores, mask)?;
                let probs = self.tape.softmax(scores)?;
                if record {
                    self.cross_attention.push(probs);
                }
                head_out.push(self.tape.matmul(probs, vh)?);
            }
            outputs.push(if heads == 1 { head_out[0] } else { self.tape.concat_cols(&head_out)? });
        }
        let joined = if outputs.len() == 1 { outputs[0] } else { self.tape.concat_rows(&outputs)? };
        self.linear(joined, a.wo, a.bo)
    }

    fn embed(&mut self, ids: &[u32], segment_len: usize) -> Result<Var> {
        let cfg = &self.model.config;
        let (d, vocab) = (cfg.d_model, cfg.vocab_size);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = idx.iter().find(|&&i| i >= vocab) {
            return Err(Error::Model(format!("token id {bad} out of range for vocabulary of {vocab}")));
        }
        let e = self.tape.embedding(self.p(self.layout.embed), &idx)?;
        let e = self.tape.scale(e, (d as f64).sqrt())?;
        let x = if self.positional {
            let segments = ids.len() / segment_len;
            let pe = positional_encoding(segment_len, d);
            let mut data = Vec::with_capacity(ids.len() * d);
            for _ in 0..segments {
                data.extend_from_slice(pe.data());
            }
            let pe = self.tape.constant(Tensor::new(vec![ids.len(), d], data)?);
            self.tape.add(e, pe)?
        } else {
            e
        };
        self.dropout(x)
    }

    /// Encode several passes with one encoder stack, padding them to a
    /// common length and running them as a single row-stacked batch.
    /// Returns each pass's states trimmed to its own length.
    ///
    /// `extra_masks[i]`, when present, further restricts pass `i`'s
    /// self-attention (its shape must be the pass length squared).
    pub fn encode_passes(
        &mut self,
        encoder: EncoderChoice,
        passes: &[(&[u32], &[bool])],
        extra_masks: Option<&[Option<&AttnMask>]>,
    ) -> Result<Vec<Var>> {
        if passes.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = &self.model.config;
        let max_len = cfg.max_len;
        let width = passes.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
        for (ids, mask) in passes {
            if ids.len() != mask.len() {
                return Err(Error::Model(format!("pass of {} tokens has a pad mask of {}", ids.len(), mask.len())));
            }
            if ids.is_empty() {
                return Err(Error::Model("empty encoder pass".into()));
            }
            if ids.len() > max_len {
                return Err(Error::Model(format!("input of {} tokens exceeds max_len {}", ids.len(), max_len)));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::Model("encoder pass without any real token".into()));
            }
        }
        let mut ids = Vec::with_capacity(passes.len() * width);
        let mut masks = Vec::with_capacity(passes.len());
        for (i, (p_ids, p_mask)) in passes.iter().enumerate() {
            ids.extend_from_slice(p_ids);
            ids.extend(std::iter::repeat_n(PAD, width - p_ids.len()));
            let mut valid = p_mask.to_vec();
            valid.resize(width, false);
            let mut m = AttnMask::from_key_validity(width, &valid);
            if let Some(extra) = extra_masks.and_then(|e| e.get(i).copied().flatten()) {
                if extra.rows() != p_ids.len() || extra.cols() != p_ids.len() {
                    return Err(Error::Model(format!(
                        "self-attention mask {}x{} for a pass of {} tokens",
                        extra.rows(),
                        extra.cols(),
                        p_ids.len()
                    )));
                }
                let mut padded = AttnMask::full(width, width);
                for r in 0..p_ids.len() {
                    for c in 0..p_ids.len() {
                        padded.set(r, c, extra.allows(r, c));
                    }
                }
                m = m.and(&padded)?;
            }
            masks.push(m);
        }
        let layout = Rc::clone(&self.layout);
        let enc = match encoder {
            EncoderChoice::Main => &layout.encoder,
            EncoderChoice::MatchEncoder => layout
                .match_encoder
                .as_ref()
                .ok_or_else(|| Error::Model("model has no match encoder (only rat-sep does)".into()))?,
        };
        let mut x = self.embed(&ids, width)?;
        let groups: Vec<_> = masks.iter().enumerate().map(|(i, m)| (i * width..(i + 1) * width, i * width..(i + 1) * width, m)).collect();
        for layer in &enc.layers {
            let h = self.layer_norm(x, &layer.ln1)?;
            let h = self.attention(&layer.attn, h, h, &groups, false)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
            let h = self.layer_norm(x, &layer.ln2)?;
            let h = self.feed_forward(h, &layer.ff)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
        }
        let x = self.layer_norm(x, &enc.ln)?;
        if passes.len() == 1 && width == passes[0].0.len() {
            return Ok(vec![x]);
        }
        passes
            .iter()
            .enumerate()
            .map(|(i, (p_ids, _))| Ok(self.tape.slice_rows(x, i * width, i * width + p_ids.len())?))
            .collect()
    }

    pub fn encode_single(&mut self, encoder: EncoderChoice, ids: &[u32], pad_mask: &[bool], mask: Option<&AttnMask>) -> Result<Var> {
        let extra = [mask];
        let out = self.encode_passes(encoder, &[(ids, pad_mask)], Some(&extra))?;
        Ok(out[0])
    }

    /// Decoder logits `[len(prefix) × vocab]` for every prefix position.
    pub fn decode(&mut self, memory: Var, key_mask: &[bool], prefix: &[u32]) -> Result<Var> {
        let cfg = &self.model.config;
        if prefix.is_empty() {
            return Err(Error::Model("decoder prefix is empty".into()));
        }
        if prefix.len() > cfg.max_len {
            return Err(Error::Model(format!("target prefix of {} tokens exceeds max_len {}", prefix.len(), cfg.max_len)));
        }
        let mem_rows = self.tape.value(memory).dims2().0;
        if mem_rows != key_mask.len() {
            return Err(Error::Model(format!("memory of {mem_rows} rows with a key mask of {}", key_mask.len())));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(Error::Model("memory has no valid key".into()));
        }
        let t = prefix.len();
        let causal = AttnMask::causal(t);
        let cross = AttnMask::from_key_validity(t, key_mask);
        let layout = Rc::clone(&self.layout);
        let mut x = self.embed(prefix, t)?;
        for layer in &layout.decoder {
            let h = self.layer_norm(x, &layer.ln1)?;
            let h = self.attention(&layer.self_attn, h, h, &[(0..t, 0..t, &causal)], false)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
            let h = self.layer_norm(x, &layer.ln2)?;
            let record = self.record_cross_attention;
            let h = self.attention(&layer.cross, h, memory, &[(0..t, 0..mem_rows, &cross)], record)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
            let h = self.layer_norm(x, &layer.ln3)?;
            let h = self.feed_forward(h, &layer.ff)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
        }
        let y = self.layer_norm(x, &layout.dec_ln)?;
        Ok(self.tape.matmul_nt(y, self.p(layout.embed))?)
    }

    /// Backward from `loss`; one gradient per parameter, in store order.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Tensor>> {
        let mut g: Gradients = self.tape.backward(loss)?;
        self.params
            .iter()
            .zip(self.model.params.tensors())
            .map(|(v, t)| Ok(g.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape()))))
            .collect()
    }

    /// Parameter leaves, in store order.
    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }
}
