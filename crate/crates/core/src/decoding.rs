//! Greedy and beam search, and the translate pipeline
//! (retrieve → plan → encode → decode → detokenize).

use std::time::{Duration, Instant};

use crate::arch::{assemble_memory, assemble_plan, run_passes, PassMode};
use crate::model::{Memory, Model, Session};
use crate::retriever::{TmIndex, TranslationMemory};
use crate::tokenizer::{Vocab, BOS, EOS, PAD, SEP};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Cap on generated tokens; `None` means `2 · source length + 10`.
    pub max_output_len: Option<usize>,
    pub length_penalty_alpha: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_size: 4, max_output_len: None, length_penalty_alpha: 0.6 }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self { beam_size: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size: must be at least 1".into()));
        }
        if self.max_output_len == Some(0) {
            return Err(Error::Config("max_output_len: must be at least 1".into()));
        }
        if !self.length_penalty_alpha.is_finite() || self.length_penalty_alpha < 0.0 {
            return Err(Error::Config("length_penalty_alpha: must be a non-negative number".into()));
        }
        Ok(())
    }

    pub fn output_limit(&self, src_len: usize) -> usize {
        self.max_output_len.unwrap_or(2 * src_len + 10)
    }
}

impl crate::config::Section for DecodeConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        use crate::config::parse_value;
        match key {
            "beam_size" => self.beam_size = parse_value(key, value)?,
            "max_output_len" => self.max_output_len = if value == "auto" { None } else { Some(parse_value(key, value)?) },
            "length_penalty_alpha" => self.length_penalty_alpha = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("beam_size", self.beam_size.to_string()),
            ("max_output_len", self.max_output_len.map_or("auto".into(), |m| m.to_string())),
            ("length_penalty_alpha", self.length_penalty_alpha.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        DecodeConfig::validate(self)
    }
}

/// `((5 + len) / 6)^α`
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// Tokens that may never be generated.
fn is_forbidden(id: u32) -> bool {
    id == PAD || id == BOS || id == SEP
}

/// Next-token log-probabilities given a prefix that starts with BOS.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
}

/// A model decoding over fixed memory.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub memory: &'a Memory,
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let logits = crate::model::decode_step(self.model, self.memory, prefix)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|x| x - lse).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without BOS and EOS.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// `log_prob` divided by the length penalty.
    pub score: f64,
    /// Generation hit the length cap before EOS.
    pub truncated: bool,
}

fn finish(tokens: Vec<u32>, log_prob: f64, truncated: bool, alpha: f64) -> Hypothesis {
    let len = tokens.len() + usize::from(!truncated);
    Hypothesis { score: log_prob / length_penalty(len, alpha), tokens, log_prob, truncated }
}

fn prefix_of(tokens: &[u32]) -> Vec<u32> {
    let mut p = Vec::with_capacity(tokens.len() + 1);
    p.push(BOS);
    p.extend_from_slice(tokens);
    p
}

/// Arg-max decoding; ties go to the lower token id.
pub fn greedy_decode(scorer: &mut dyn StepScorer, max_output_len: usize, alpha: f64) -> Result<Hypothesis> {
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_output_len {
        let lp = scorer.log_probs(&prefix_of(&tokens))?;
        let (best, &v) = lp
            .iter()
            .enumerate()
            .filter(|(i, _)| !is_forbidden(*i as u32))
            .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
                Some((_, bv)) if *bv >= *v => acc,
                _ => Some((i, v)),
            })
            .ok_or_else(|| Error::Model("no token may be generated".into()))?;
        log_prob += v;
        if best as u32 == EOS {
            return Ok(finish(tokens, log_prob, false, alpha));
        }
        tokens.push(best as u32);
    }
    Ok(finish(tokens, log_prob, true, alpha))
}

/// Beam search maximising `log p / ((5 + len) / 6)^α`. The greedy
/// hypothesis always competes, so the result never scores below it.
pub fn beam_decode(scorer: &mut dyn StepScorer, cfg: &DecodeConfig, src_len: usize) -> Result<Hypothesis> {
    cfg.validate()?;
    let limit = cfg.output_limit(src_len);
    let alpha = cfg.length_penalty_alpha;
    let greedy = greedy_decode(scorer, limit, alpha)?;
    if cfg.beam_size == 1 {
        return Ok(greedy);
    }
    let mut alive: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..limit {
        let mut candidates: Vec<(Vec<u32>, f64, bool)> = Vec::new();
        for (tokens, base) in &alive {
            let lp = scorer.log_probs(&prefix_of(tokens))?;
            for (id, v) in lp.iter().enumerate() {
                let id = id as u32;
                if is_forbidden(id) {
                    continue;
                }
                let mut t = tokens.clone();
                if id != EOS {
                    t.push(id);
                }
                candidates.push((t, base + v, id == EOS));
            }
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)).then(a.2.cmp(&b.2)));
        candidates.truncate(cfg.beam_size);
        alive.clear();
        for (t, lp, eos) in candidates {
            if eos {
                finished.push(finish(t, lp, false, alpha));
            } else {
                alive.push((t, lp));
            }
        }
        if alive.is_empty() || finished.len() >= cfg.beam_size {
            break;
        }
    }
    if finished.len() < cfg.beam_size {
        finished.extend(alive.into_iter().filter(|(t, _)| t.len() >= limit).map(|(t, lp)| finish(t, lp, true, alpha)));
    }
    let mut best = greedy;
    for h in finished {
        if h.score > best.score {
            best = h;
        }
    }
    Ok(best)
}

/// Everything needed to translate with one model. Without a memory every
/// variant translates as the baseline would.
pub struct Pipeline<'a> {
    pub vocab: &'a Vocab,
    pub memory: Option<(&'a TranslationMemory, &'a TmIndex)>,
    pub model: &'a Model,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timings {
    pub retrieval: Duration,
    pub plan: Duration,
    pub passes: Duration,
    /// Span extraction and concatenation into memory; zero when the
    /// memory is a single pass taken whole.
    pub assembly: Duration,
    /// Wall clock from plan assembly to finished memory, timed as one span.
    pub encode: Duration,
    pub decode: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TranslationTrace {
    /// `(entry id, score)` of every retrieved match, best first.
    pub retrieved: Vec<(usize, f64)>,
    pub src_ids: Vec<u32>,
    pub pass_lengths: Vec<usize>,
    pub memory_len: usize,
    pub output_ids: Vec<u32>,
    pub score: f64,
    pub truncated: bool,
    pub timings: Timings,
}

/// Translate one sentence. An empty source yields an empty translation;
/// sources longer than the model's `max_len` are cut, as in training.
pub fn translate(p: &Pipeline<'_>, source: &str, cfg: &DecodeConfig) -> Result<(String, TranslationTrace)> {
    let start = Instant::now();
    let mut trace = TranslationTrace::default();
    let cfg_model = &p.model.config;
    if source.trim().is_empty() {
        trace.timings.total = start.elapsed();
        return Ok((String::new(), trace));
    }
    let mut src_ids = p.vocab.encode(source);
    src_ids.truncate(cfg_model.max_len);
    let t = Instant::now();
    let k = if cfg_model.variant.uses_matches() { cfg_model.k } else { 0 };
    let found = match p.memory {
        Some((tm, index)) if k > 0 => index.retrieve(tm, source, k, None).matches,
        _ => Vec::new(),
    };
    trace.retrieved = found.iter().map(|m| (m.entry_id, m.score)).collect();
    let fuzzy: Vec<Vec<u32>> = found.iter().map(|m| p.vocab.encode(&m.target)).filter(|ids| !ids.is_empty()).collect();
    trace.timings.retrieval = t.elapsed();

    let encode_start = Instant::now();
    let t = Instant::now();
    let plan = assemble_plan(cfg_model.variant, &src_ids, &fuzzy, cfg_model.max_len)?;
    trace.timings.plan = t.elapsed();
    let t = Instant::now();
    let mut session = Session::inference(p.model);
    let states = run_passes(&mut session, &plan, PassMode::Batched)?;
    trace.timings.passes = t.elapsed();
    let t = Instant::now();
    let vars = assemble_memory(&mut session, &plan, &states)?;
    let memory = Memory { states: session.tape.value(vars.states).clone(), key_mask: vars.key_mask, provenance: vars.provenance };
    if plan.needs_assembly() {
        trace.timings.assembly = t.elapsed();
    }
    trace.timings.encode = encode_start.elapsed();

    let t = Instant::now();
    let mut cfg = cfg.clone();
    let cap = cfg_model.max_len - 1;
    cfg.max_output_len = Some(cfg.output_limit(src_ids.len()).min(cap));
    let mut scorer = ModelScorer { model: p.model, memory: &memory };
    let hyp = beam_decode(&mut scorer, &cfg, src_ids.len())?;
    trace.timings.decode = t.elapsed();
    let text = p.vocab.decode(&hyp.tokens)?;

    trace.pass_lengths = plan.passes.iter().map(|x| x.len()).collect();
    trace.memory_len = memory.len();
    trace.src_ids = src_ids;
    trace.output_ids = hyp.tokens;
    trace.score = hyp.score;
    trace.truncated = hyp.truncated;
    trace.timings.total = start.elapsed();
    Ok((text, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Provenance, Variant};
    use crate::retriever::Bm25Params;

    /// Scores from a fixed table indexed by prefix length.
    struct Table(Vec<Vec<f64>>);

    impl StepScorer for Table {
        fn vocab_size(&self) -> usize {
            self.0[0].len()
        }

        fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
            let row = &self.0[(prefix.len() - 1).min(self.0.len() - 1)];
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            Ok(row.iter().map(|x| x - lse).collect())
        }
    }

    #[test]
    fn eos_first_gives_empty_output() {
        let mut s = Table(vec![vec![9.0, 9.0, 5.0, 9.0, 0.0, 1.0]]);
        let h = beam_decode(&mut s, &DecodeConfig::default(), 3).unwrap();
        assert!(h.tokens.is_empty());
        assert!(!h.truncated);
    }

    #[test]
    fn cap_marks_truncation() {
        let mut s = Table(vec![vec![0.0, 0.0, -5.0, 0.0, 0.0, 3.0]]);
        let cfg = DecodeConfig { max_output_len: Some(4), ..DecodeConfig::default() };
        let h = beam_decode(&mut s, &cfg, 3).unwrap();
        assert_eq!(h.tokens, vec![5, 5, 5, 5]);
        assert!(h.truncated);
    }

    #[test]
    fn beam_escapes_greedy_trap() {
        // greedy takes token 5 (then only poor continuations); token 6 leads to a sure EOS
        struct Trap;
        impl StepScorer for Trap {
            fn vocab_size(&self) -> usize {
                7
            }
            fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
                let mut p = [1e-9; 7];
                match prefix {
                    [_] => {
                        p[5] = 0.55;
                        p[6] = 0.45;
                    }
                    [_, 5] => {
                        p[2] = 0.3;
                        p[4] = 0.35;
                        p[5] = 0.35;
                    }
                    [_, 6] => p[2] = 1.0,
                    _ => p[2] = 1.0,
                }
                Ok(p.iter().map(|x: &f64| x.ln()).collect())
            }
        }
        let cfg = DecodeConfig { length_penalty_alpha: 0.0, ..DecodeConfig::default() };
        let greedy = greedy_decode(&mut Trap, 10, 0.0).unwrap();
        let beam = beam_decode(&mut Trap, &cfg, 3).unwrap();
        assert_eq!(beam.tokens, vec![6]);
        assert!(beam.log_prob > greedy.log_prob);
        assert_eq!(beam_decode(&mut Trap, &DecodeConfig { beam_size: 1, ..cfg }, 3).unwrap(), greedy);
    }

    #[test]
    fn no_alpha_means_no_penalty() {
        for len in [0, 1, 7, 40] {
            assert_eq!(length_penalty(len, 0.0), 1.0);
        }
        assert!((length_penalty(1, 1.0) - 1.0).abs() < 1e-15);
    }

    fn tiny(variant: Variant) -> (Model, Memory) {
        let mut cfg = ModelConfig::desk(12, variant, 2);
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1;
        let m = Model::new(cfg, 2).unwrap();
        let states = crate::model::encode(&m, &[5, 6, 7], &[true; 3], None).unwrap();
        let mem = Memory { states, key_mask: vec![true; 3], provenance: vec![Provenance::Source; 3] };
        (m, mem)
    }

    #[test]
    fn model_beam_is_never_worse_than_greedy() {
        let (m, mem) = tiny(Variant::Baseline);
        let cfg = DecodeConfig { length_penalty_alpha: 0.0, max_output_len: Some(6), beam_size: 3 };
        let mut s = ModelScorer { model: &m, memory: &mem };
        let g = greedy_decode(&mut s, 6, 0.0).unwrap();
        let b = beam_decode(&mut s, &cfg, 3).unwrap();
        assert!(b.log_prob >= g.log_prob);
        assert!(b.tokens.iter().all(|&t| (t as usize) < 12 && !is_forbidden(t)));
    }

    #[test]
    fn empty_tm_matches_baseline_pipeline() {
        let vocab = crate::tokenizer::train_bpe(&["a b c d e f g"], 20).unwrap();
        let tm = TranslationMemory::from_pairs(vec![("zzz".into(), "q".into())]).unwrap();
        let index = TmIndex::build(&tm, Bm25Params::default()).unwrap();
        let mut cfg = ModelConfig::desk(vocab.len(), Variant::Baseline, 3);
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        let base = Model::new(cfg.clone(), 4).unwrap();
        let mut si = base.clone();
        si.config.variant = Variant::RatSi;
        let dc = DecodeConfig { max_output_len: Some(5), ..DecodeConfig::default() };
        let run = |m: &Model| translate(&Pipeline { vocab: &vocab, memory: Some((&tm, &index)), model: m }, "a b c", &dc).unwrap();
        let (a, ta) = run(&base);
        let (b, tb) = run(&si);
        assert_eq!(a, b);
        assert_eq!(ta.output_ids, tb.output_ids);
        assert!(tb.retrieved.is_empty());
        assert_eq!(run(&si).0, b);
        let none = translate(&Pipeline { vocab: &vocab, memory: None, model: &si }, "a b c", &dc).unwrap();
        assert_eq!(none.1.output_ids, ta.output_ids);
        let (empty, _) = translate(&Pipeline { vocab: &vocab, memory: Some((&tm, &index)), model: &si }, "", &dc).unwrap();
        assert_eq!(empty, "");
    }
}
