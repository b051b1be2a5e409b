//! Encoder plans and decoder memory for the four architectures.
//!
//! A plan lists encoder passes and the order in which their states (or an
//! extracted span of them) are concatenated into memory:
//!
//! | variant    | passes                                        | memory                       |
//! |------------|-----------------------------------------------|------------------------------|
//! | `baseline` | `[src]`                                       | src                          |
//! | `rat-cat`  | `[src ⟨sep⟩ fm₁ ⟨sep⟩ fm₂ …]`                  | the whole pass               |
//! | `rat-sep`  | `[src]`, then `[fmᵢ]` on the match encoder    | src, fm₁, fm₂, …             |
//! | `rat-si`   | `[src]`, then `[src ⟨sep⟩ fmᵢ]`               | src, then the fmᵢ spans only |

use std::ops::Range;

use crate::model::{EncoderChoice, Memory, Model, Provenance, Session, Variant};
use crate::tensor::Var;
use crate::tokenizer::SEP;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pass {
    pub tokens: Vec<u32>,
    pub pad_mask: Vec<bool>,
    pub encoder: EncoderChoice,
    /// Positions of this pass that reach memory; `None` keeps all of them.
    pub extract: Option<Range<usize>>,
    /// Provenance of each token of the pass.
    pub labels: Vec<Provenance>,
}

impl Pass {
    fn new(tokens: Vec<u32>, encoder: EncoderChoice, extract: Option<Range<usize>>, labels: Vec<Provenance>) -> Self {
        let pad_mask = vec![true; tokens.len()];
        Self { tokens, pad_mask, encoder, extract, labels }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Range of positions contributed to memory.
    pub fn span(&self) -> Range<usize> {
        self.extract.clone().unwrap_or(0..self.tokens.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderPlan {
    pub variant: Variant,
    pub passes: Vec<Pass>,
    /// Pass indices in memory order, each with the label of its block.
    pub layout: Vec<(usize, Provenance)>,
    /// Number of fuzzy matches that survived truncation.
    pub matches_used: usize,
}

impl EncoderPlan {
    pub fn memory_len(&self) -> usize {
        self.layout.iter().map(|&(p, _)| self.passes[p].span().len()).sum()
    }

    /// Whether memory is anything other than one pass taken whole.
    pub fn needs_assembly(&self) -> bool {
        self.layout.len() > 1 || self.passes.iter().any(|p| p.extract.is_some())
    }

    pub fn validate(&self, max_len: usize) -> Result<()> {
        let mut seen = vec![0usize; self.passes.len()];
        for &(p, _) in &self.layout {
            let count = seen.get_mut(p).ok_or_else(|| Error::Plan(format!("layout references missing pass {p}")))?;
            *count += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::Plan("layout must reference every pass exactly once".into()));
        }
        for (i, pass) in self.passes.iter().enumerate() {
            if pass.is_empty() || pass.len() > max_len {
                return Err(Error::Plan(format!("pass {i} has {} tokens (max_len {max_len})", pass.len())));
            }
            if pass.pad_mask.len() != pass.len() || pass.labels.len() != pass.len() {
                return Err(Error::Plan(format!("pass {i} has mismatched mask or label lengths")));
            }
            let span = pass.span();
            if span.start >= span.end || span.end > pass.len() {
                return Err(Error::Plan(format!("span {span:?} outside pass {i} of {} tokens", pass.len())));
            }
        }
        Ok(())
    }
}

/// Fit the matches into the length budget, shortening from the right:
/// the last match loses tokens first and is dropped once empty.
fn truncate_right_to_left(matches: &mut Vec<Vec<u32>>, mut excess: usize, per_match_overhead: usize) {
    while excess > 0 {
        let Some(last) = matches.last_mut() else { return };
        if last.len() <= excess {
            excess = excess.saturating_sub(last.len() + per_match_overhead);
            matches.pop();
        } else {
            last.truncate(last.len() - excess);
            excess = 0;
        }
    }
}

pub fn assemble_plan(variant: Variant, src: &[u32], fuzzy_targets: &[Vec<u32>], max_len: usize) -> Result<EncoderPlan> {
    if src.is_empty() {
        return Err(Error::Plan("empty source".into()));
    }
    if src.len() > max_len {
        return Err(Error::Plan(format!("source of {} tokens exceeds max_len {max_len}", src.len())));
    }
    if let Some(i) = fuzzy_targets.iter().position(|m| m.is_empty()) {
        return Err(Error::Plan(format!("fuzzy match {i} is empty")));
    }
    let src_pass = || Pass::new(src.to_vec(), EncoderChoice::Main, None, vec![Provenance::Source; src.len()]);
    let baseline = |variant| EncoderPlan { variant, passes: vec![src_pass()], layout: vec![(0, Provenance::Source)], matches_used: 0 };
    if variant == Variant::Baseline || fuzzy_targets.is_empty() {
        return Ok(baseline(variant));
    }

    let mut matches = fuzzy_targets.to_vec();
    let plan = match variant {
        Variant::Baseline => unreachable!(),
        Variant::RatCat => {
            let total = src.len() + matches.iter().map(|m| m.len() + 1).sum::<usize>();
            truncate_right_to_left(&mut matches, total.saturating_sub(max_len), 1);
            let mut tokens = src.to_vec();
            let mut labels = vec![Provenance::Source; src.len()];
            for (i, m) in matches.iter().enumerate() {
                tokens.push(SEP);
                tokens.extend_from_slice(m);
                labels.extend(std::iter::repeat_n(Provenance::Match(i), m.len() + 1));
            }
            EncoderPlan {
                variant,
                passes: vec![Pass::new(tokens, EncoderChoice::Main, None, labels)],
                layout: vec![(0, Provenance::Source)],
                matches_used: matches.len(),
            }
        }
        Variant::RatSep | Variant::RatSi => {
            let room = if variant == Variant::RatSep { max_len } else { max_len.saturating_sub(src.len() + 1) };
            matches.retain_mut(|m| {
                m.truncate(room);
                !m.is_empty()
            });
            let mut passes = vec![src_pass()];
            let mut layout = vec![(0, Provenance::Source)];
            for (i, m) in matches.iter().enumerate() {
                let label = Provenance::Match(i);
                let pass = if variant == Variant::RatSep {
                    Pass::new(m.clone(), EncoderChoice::MatchEncoder, None, vec![label; m.len()])
                } else {
                    let mut tokens = src.to_vec();
                    tokens.push(SEP);
                    tokens.extend_from_slice(m);
                    let start = src.len() + 1;
                    let mut labels = vec![Provenance::Source; start];
                    labels.extend(std::iter::repeat_n(label, m.len()));
                    Pass::new(tokens, EncoderChoice::Main, Some(start..start + m.len()), labels)
                };
                layout.push((passes.len(), label));
                passes.push(pass);
            }
            EncoderPlan { variant, passes, layout, matches_used: matches.len() }
        }
    };
    if plan.matches_used == 0 {
        return Ok(baseline(variant));
    }
    Ok(plan)
}

/// How the passes of a plan are run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PassMode {
    /// Passes sharing an encoder are padded to a common length and run as one batch.
    #[default]
    Batched,
    /// Each pass runs on its own; the reference for the batched path.
    Sequential,
}

/// Memory as tape variables inside a session, for training and decoding.
pub struct MemoryVars {
    pub states: Var,
    pub key_mask: Vec<bool>,
    pub provenance: Vec<Provenance>,
}

fn check_plan(session: &Session<'_>, plan: &EncoderPlan) -> Result<()> {
    let cfg = session.config();
    if plan.variant != cfg.variant {
        return Err(Error::Plan(format!("plan for {} given to a {} model", plan.variant, cfg.variant)));
    }
    if plan.matches_used > cfg.k {
        return Err(Error::Plan(format!("{} matches but the model takes at most k = {}", plan.matches_used, cfg.k)));
    }
    plan.validate(cfg.max_len)
}

/// Run every pass of the plan; returns full pass states in pass order.
pub fn run_passes(session: &mut Session<'_>, plan: &EncoderPlan, mode: PassMode) -> Result<Vec<Var>> {
    check_plan(session, plan)?;
    let mut out: Vec<Option<Var>> = vec![None; plan.passes.len()];
    match mode {
        PassMode::Sequential => {
            for (slot, pass) in out.iter_mut().zip(&plan.passes) {
                *slot = Some(session.encode_single(pass.encoder, &pass.tokens, &pass.pad_mask, None)?);
            }
        }
        PassMode::Batched => {
            for encoder in [EncoderChoice::Main, EncoderChoice::MatchEncoder] {
                let members: Vec<usize> = (0..plan.passes.len()).filter(|&i| plan.passes[i].encoder == encoder).collect();
                if members.is_empty() {
                    continue;
                }
                let inputs: Vec<(&[u32], &[bool])> =
                    members.iter().map(|&i| (plan.passes[i].tokens.as_slice(), plan.passes[i].pad_mask.as_slice())).collect();
                let states = session.encode_passes(encoder, &inputs, None)?;
                for (i, v) in members.into_iter().zip(states) {
                    out[i] = Some(v);
                }
            }
        }
    }
    Ok(out.into_iter().map(|v| v.expect("every pass encoded")).collect())
}

/// Concatenate pass states (or their extracted spans) in layout order.
pub fn assemble_memory(session: &mut Session<'_>, plan: &EncoderPlan, pass_states: &[Var]) -> Result<MemoryVars> {
    if pass_states.len() != plan.passes.len() {
        return Err(Error::Plan(format!("{} pass states for {} passes", pass_states.len(), plan.passes.len())));
    }
    let mut blocks = Vec::with_capacity(plan.layout.len());
    let mut key_mask = Vec::new();
    let mut provenance = Vec::new();
    for &(p, _) in &plan.layout {
        let pass = &plan.passes[p];
        let rows = session.tape.value(pass_states[p]).dims2().0;
        let span = pass.span();
        if span.end > rows {
            return Err(Error::Plan(format!("span {span:?} outside pass states of {rows} rows")));
        }
        blocks.push(if span.start == 0 && span.end == rows {
            pass_states[p]
        } else {
            session.tape.slice_rows(pass_states[p], span.start, span.end)?
        });
        key_mask.extend_from_slice(&pass.pad_mask[span.clone()]);
        provenance.extend_from_slice(&pass.labels[span]);
    }
    let states = if blocks.len() == 1 { blocks[0] } else { session.tape.concat_rows(&blocks)? };
    Ok(MemoryVars { states, key_mask, provenance })
}

pub fn encode_memory_vars(session: &mut Session<'_>, plan: &EncoderPlan, mode: PassMode) -> Result<MemoryVars> {
    let states = run_passes(session, plan, mode)?;
    assemble_memory(session, plan, &states)
}

pub fn encode_memory_with(model: &Model, plan: &EncoderPlan, mode: PassMode) -> Result<Memory> {
    let mut s = Session::inference(model);
    let m = encode_memory_vars(&mut s, plan, mode)?;
    Ok(Memory { states: s.tape.value(m.states).clone(), key_mask: m.key_mask, provenance: m.provenance })
}

/// Memory for the decoder, with batched passes.
pub fn encode_memory(model: &Model, plan: &EncoderPlan) -> Result<Memory> {
    encode_memory_with(model, plan, PassMode::Batched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example() -> (Vec<u32>, Vec<Vec<u32>>) {
        (vec![10, 11, 12, 13, 14], vec![vec![20, 21, 22, 23], vec![30, 31, 32], vec![40, 41, 42, 43, 44, 45]])
    }

    fn model(variant: Variant, layers: usize, seed: u64) -> Model {
        let cfg = ModelConfig {
            enc_layers: layers,
            dec_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            dropout: 0.0,
            max_len: 64,
            vocab_size: 60,
            variant,
            k: 5,
        };
        Model::new(cfg, seed).unwrap()
    }

    #[test]
    fn worked_plan_lengths() {
        let (src, fms) = example();
        let cat = assemble_plan(Variant::RatCat, &src, &fms, 64).unwrap();
        assert_eq!(cat.passes.len(), 1);
        assert_eq!(cat.passes[0].len(), 21);
        assert_eq!(cat.memory_len(), 21);
        let sep = assemble_plan(Variant::RatSep, &src, &fms, 64).unwrap();
        assert_eq!(sep.passes.len(), 4);
        assert_eq!(sep.memory_len(), 18);
        let si = assemble_plan(Variant::RatSi, &src, &fms, 64).unwrap();
        assert_eq!(si.passes.iter().map(Pass::len).collect::<Vec<_>>(), vec![5, 10, 9, 12]);
        assert_eq!(si.memory_len(), 18);
        assert_eq!(si.passes[1].extract, Some(6..10));
        assert_eq!(cat.memory_len() - si.memory_len(), 3);
    }

    #[test]
    fn no_matches_is_baseline() {
        let (src, _) = example();
        let base = assemble_plan(Variant::Baseline, &src, &[], 64).unwrap();
        for v in Variant::ALL {
            let p = assemble_plan(v, &src, &[], 64).unwrap();
            assert_eq!(p.passes, base.passes);
            assert_eq!(p.layout, base.layout);
        }
    }

    #[test]
    fn truncation_drops_last_match_first() {
        let (src, fms) = example();
        let cat = assemble_plan(Variant::RatCat, &src, &fms, 15).unwrap();
        // 5 + 5 + 4 = 14 leaves one slot, too small for SEP plus a token
        assert_eq!(cat.matches_used, 2);
        assert_eq!(cat.passes[0].len(), 14);
        let cat = assemble_plan(Variant::RatCat, &src, &fms, 18).unwrap();
        assert_eq!(cat.passes[0].tokens[14..], [SEP, 40, 41, 42]);
        let si = assemble_plan(Variant::RatSi, &src, &fms, 9).unwrap();
        assert_eq!(si.passes.iter().map(Pass::len).collect::<Vec<_>>(), vec![5, 9, 9, 9]);
        let si = assemble_plan(Variant::RatSi, &src, &fms, 6).unwrap();
        assert_eq!(assemble_plan(Variant::RatSi, &src, &fms, 5).unwrap().passes.len(), 1);
        assert_eq!(si.passes.len(), 1);
        assert!(assemble_plan(Variant::Baseline, &src, &[], 4).is_err());
        assert!(assemble_plan(Variant::RatSi, &src, &[vec![]], 64).is_err());
    }

    #[test]
    fn variant_and_k_are_checked() {
        let (src, fms) = example();
        let m = model(Variant::RatSi, 1, 1);
        let plan = assemble_plan(Variant::RatCat, &src, &fms, 64).unwrap();
        assert!(encode_memory(&m, &plan).is_err());
        let mut m2 = m.clone();
        m2.config.k = 2;
        let plan = assemble_plan(Variant::RatSi, &src, &fms, 64).unwrap();
        assert!(encode_memory(&m2, &plan).is_err());
    }

    fn bits(rows: Vec<&[f64]>) -> Vec<u64> {
        rows.into_iter().flatten().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn batched_equals_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in [Variant::RatSi, Variant::RatSep] {
            let m = model(v, 2, 9);
            for _ in 0..5 {
                let src: Vec<u32> = (0..rng.gen_range(1..9)).map(|_| rng.gen_range(5..60)).collect();
                let fms: Vec<Vec<u32>> =
                    (0..3).map(|_| (0..rng.gen_range(1..9)).map(|_| rng.gen_range(5..60)).collect()).collect();
                let plan = assemble_plan(v, &src, &fms, 64).unwrap();
                let a = encode_memory_with(&m, &plan, PassMode::Batched).unwrap();
                let b = encode_memory_with(&m, &plan, PassMode::Sequential).unwrap();
                assert_eq!(a, b);
                assert_eq!(a.len(), plan.memory_len());
            }
        }
    }

    #[test]
    fn sep_match_blocks_are_independent() {
        let (src, mut fms) = example();
        let m = model(Variant::RatSep, 2, 4);
        let a = encode_memory(&m, &assemble_plan(Variant::RatSep, &src, &fms, 64).unwrap()).unwrap();
        fms[1] = vec![50, 51, 52];
        let b = encode_memory(&m, &assemble_plan(Variant::RatSep, &src, &fms, 64).unwrap()).unwrap();
        for label in [Provenance::Source, Provenance::Match(0), Provenance::Match(2)] {
            assert_eq!(bits(a.block(label)), bits(b.block(label)));
        }
        assert_ne!(bits(a.block(Provenance::Match(1))), bits(b.block(Provenance::Match(1))));
    }
}
