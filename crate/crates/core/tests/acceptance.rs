//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `cargo test --release -p ratnmt --test acceptance -- [name ...]` runs the
//! criteria whose names contain one of the given words (all by default).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use ratnmt::arch::{assemble_plan, encode_memory_with, PassMode};
use ratnmt::bench::{bench_translate, summary_table, LatencyReport};
use ratnmt::decoding::{translate, DecodeConfig, Pipeline};
use ratnmt::evaluation::{corpus_bleu, paired_bootstrap};
use ratnmt::exec::Exec;
use ratnmt::model::{Memory, Model, ModelConfig, Provenance, Variant};
use ratnmt::retriever::{Bm25Params, TmIndex, TranslationMemory};
use ratnmt::synthetic::{generate, SyntheticConfig, SyntheticData};
use ratnmt::tensor::{op_suite, Tensor};
use ratnmt::tokenizer::{train_bpe, Vocab, NUM_SPECIALS};
use ratnmt::training::{
    adam_step, build_training_stream, noam_lr, tiny_model_grad_check, train, AdamHyper, Checkpoint, Moments, TrainConfig, Trainer,
};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

const VARIANTS: [Variant; 4] = [Variant::Baseline, Variant::RatCat, Variant::RatSep, Variant::RatSi];

// ---------------------------------------------------------------- gradients

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut worst_op = ("", 0.0f64);
    for (name, r) in op_suite(11)? {
        if r.max_relative_error > worst_op.1 {
            worst_op = (name, r.max_relative_error);
        }
    }
    let mut worst_model = (Variant::Baseline, 0.0f64);
    for v in VARIANTS {
        let r = tiny_model_grad_check(v, 11, 0.1)?;
        if r.max_relative_error >= worst_model.1 {
            worst_model = (v, r.max_relative_error);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_op.1 < 1e-4 && worst_model.1 < 1e-3 && secs < 120.0;
    Ok((
        pass,
        format!(
            "worst op {} {:.2e} (< 1e-4), worst model {} {:.2e} (< 1e-3), {secs:.1}s (< 120s)",
            worst_op.0, worst_op.1, worst_model.0, worst_model.1
        ),
    ))
}

// ------------------------------------------------------------- connectivity

fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: std::ops::Range<usize>) -> Vec<u32> {
    let n = rng.gen_range(len);
    (0..n).map(|_| rng.gen_range(NUM_SPECIALS as u32..vocab as u32)).collect()
}

/// Replace one token with a different ordinary token.
fn perturb(rng: &mut ChaCha8Rng, seq: &[u32], vocab: usize) -> Vec<u32> {
    let mut out = seq.to_vec();
    let i = rng.gen_range(0..out.len());
    let old = out[i];
    while out[i] == old {
        out[i] = rng.gen_range(NUM_SPECIALS as u32..vocab as u32);
    }
    out
}

fn block(m: &Memory, label: Provenance) -> Vec<f64> {
    m.block(label).concat()
}

fn memory(model: &Model, src: &[u32], matches: &[Vec<u32>]) -> ratnmt::Result<Memory> {
    encode_memory_with(model, &assemble_plan(model.config.variant, src, matches, model.config.max_len)?, PassMode::Batched)
}

fn connectivity_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = 40;
    let mut counts = [0usize; 4];
    let configs = 50;
    for trial in 0..configs {
        let k = rng.gen_range(2..=4);
        let d = [8, 16][rng.gen_range(0..2)];
        let mk = |variant| {
            let mut c = ModelConfig::desk(vocab, variant, k);
            c.enc_layers = 1;
            c.dec_layers = 1;
            c.d_model = d;
            c.n_heads = 2;
            c.d_ff = 2 * d;
            c.max_len = 64;
            Model::new(c, 1000 + trial)
        };
        let src = random_tokens(&mut rng, vocab, 2..7);
        let matches: Vec<Vec<u32>> = (0..k).map(|_| random_tokens(&mut rng, vocab, 2..7)).collect();
        let src2 = perturb(&mut rng, &src, vocab);
        let j = rng.gen_range(0..k);
        let mut matches2 = matches.clone();
        matches2[j] = perturb(&mut rng, &matches[j], vocab);

        let (si, sep, cat) = (mk(Variant::RatSi)?, mk(Variant::RatSep)?, mk(Variant::RatCat)?);
        let base_si = memory(&si, &src, &matches)?;
        let base_sep = memory(&sep, &src, &matches)?;
        let base_cat = memory(&cat, &src, &matches)?;

        // (a) every rat-si match block changes with the source
        let si_src = memory(&si, &src2, &matches)?;
        if (0..k).all(|i| block(&base_si, Provenance::Match(i)) != block(&si_src, Provenance::Match(i))) {
            counts[0] += 1;
        }
        // (b) other match blocks are bit-identical when match j changes
        let si_m = memory(&si, &src, &matches2)?;
        let sep_m = memory(&sep, &src, &matches2)?;
        let invariant = |a: &Memory, b: &Memory| (0..k).filter(|&i| i != j).all(|i| block(a, Provenance::Match(i)) == block(b, Provenance::Match(i)));
        let changed = |a: &Memory, b: &Memory| block(a, Provenance::Match(j)) != block(b, Provenance::Match(j));
        if invariant(&base_si, &si_m) && invariant(&base_sep, &sep_m) && changed(&base_si, &si_m) && changed(&base_sep, &sep_m) {
            counts[1] += 1;
        }
        // (c) rat-sep match blocks are bit-identical when the source changes
        let sep_src = memory(&sep, &src2, &matches)?;
        if (0..k).all(|i| block(&base_sep, Provenance::Match(i)) == block(&sep_src, Provenance::Match(i)))
            && block(&base_sep, Provenance::Source) != block(&sep_src, Provenance::Source)
        {
            counts[2] += 1;
        }
        // (d) rat-cat: every block reacts to the source and to any match
        let cat_src = memory(&cat, &src2, &matches)?;
        let cat_m = memory(&cat, &src, &matches2)?;
        let all_match_blocks_move = (0..k).all(|i| block(&base_cat, Provenance::Match(i)) != block(&cat_src, Provenance::Match(i)));
        let others_move = block(&base_cat, Provenance::Source) != block(&cat_m, Provenance::Source)
            && (0..k).filter(|&i| i != j).all(|i| block(&base_cat, Provenance::Match(i)) != block(&cat_m, Provenance::Match(i)));
        if all_match_blocks_move && others_move {
            counts[3] += 1;
        }
    }
    let pass = counts.iter().all(|&c| c == configs as usize);
    Ok((
        pass,
        format!(
            "si-depends-on-source {}/{configs}, match-blocks-isolated {}/{configs}, sep-ignores-source {}/{configs}, cat-mutually-sensitive {}/{configs}",
            counts[0], counts[1], counts[2], counts[3]
        ),
    ))
}

// ---------------------------------------------------------------- assembly

fn assembly_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab = 50;
    let mut identical = 0;
    let mut baseline_equal = 0;
    let mut k0 = 0;
    let total = 100;
    for i in 0..total {
        let k = [0, 1, 3, 5][i % 4];
        let mut cfg = ModelConfig::desk(vocab, Variant::RatSi, 5);
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.max_len = 48;
        let model = Model::new(cfg, i as u64)?;
        let src = random_tokens(&mut rng, vocab, 1..10);
        let matches: Vec<Vec<u32>> = (0..k).map(|_| random_tokens(&mut rng, vocab, 1..12)).collect();
        let plan = assemble_plan(Variant::RatSi, &src, &matches, 48)?;
        let batched = encode_memory_with(&model, &plan, PassMode::Batched)?;
        let sequential = encode_memory_with(&model, &plan, PassMode::Sequential)?;
        if batched == sequential {
            identical += 1;
        }
        if k == 0 {
            k0 += 1;
            let mut base = model.clone();
            base.config.variant = Variant::Baseline;
            let b = encode_memory_with(&base, &assemble_plan(Variant::Baseline, &src, &[], 48)?, PassMode::Batched)?;
            if b.states == batched.states && b.key_mask == batched.key_mask {
                baseline_equal += 1;
            }
        }
    }
    Ok((
        identical == total && baseline_equal == k0,
        format!("batched == sequential on {identical}/{total} instances, k=0 equals baseline on {baseline_equal}/{k0}"),
    ))
}

// ---------------------------------------------------------------- retrieval

/// Direct BM25: score every entry from raw term counts, then sort.
fn brute_force(docs: &[Vec<&str>], query: &[&str], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as u64).sum::<u64>() as f64 / n;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        let mut seen: Vec<&str> = d.clone();
        seen.sort();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let mut scored = Vec::new();
    for (id, d) in docs.iter().enumerate() {
        let mut s = 0.0;
        for q in query {
            let tf = d.iter().filter(|t| *t == q).count();
            if tf == 0 {
                continue;
            }
            let nt = df[q] as f64;
            let idf = (1.0 + (n - nt + 0.5) / (nt + 0.5)).ln();
            let f = tf as f64;
            s += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
        }
        if s > 0.0 && Some(id) != exclude {
            scored.push((id, s));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let words: Vec<String> = (0..60).map(|i| format!("w{}", (b'a' + (i % 26) as u8) as char).repeat(1 + i / 26)).collect();
    let mut agree = 0;
    let mut queries = 0;
    for _ in 0..100 {
        let size = rng.gen_range(1..=1000);
        let vocab_here = rng.gen_range(5..words.len());
        let draw = |rng: &mut ChaCha8Rng, len: std::ops::Range<usize>| -> Vec<&str> {
            // skewed draw so frequent and rare terms both occur
            let n = rng.gen_range(len);
            (0..n).map(|_| words[(rng.gen::<f64>().powi(2) * vocab_here as f64) as usize].as_str()).collect()
        };
        let docs: Vec<Vec<&str>> = (0..size).map(|_| draw(&mut rng, 1..15)).collect();
        let tm = TranslationMemory::from_pairs(docs.iter().enumerate().map(|(i, d)| (d.join(" "), format!("t{i}"))).collect())?;
        let index = TmIndex::build(&tm, Bm25Params::default())?;
        for _ in 0..10 {
            let q = if rng.gen_bool(0.3) { docs[rng.gen_range(0..size)].clone() } else { draw(&mut rng, 1..8) };
            let k = rng.gen_range(1..12);
            let exclude = rng.gen_bool(0.3).then(|| rng.gen_range(0..size));
            let got: Vec<(usize, f64)> = index.retrieve(&tm, &q.join(" "), k, exclude).matches.iter().map(|m| (m.entry_id, m.score)).collect();
            let want = brute_force(&docs, &q, k, exclude);
            let same_ids = got.iter().map(|g| g.0).eq(want.iter().map(|w| w.0));
            let close = got.iter().zip(&want).all(|(g, w)| (g.1 - w.1).abs() <= 1e-12 * w.1.abs().max(1.0));
            if same_ids && close {
                agree += 1;
            }
            queries += 1;
        }
    }
    let tm = TranslationMemory::from_pairs(vec![
        ("the cat sat".into(), "a".into()),
        ("the dog".into(), "b".into()),
        ("cat cat cat".into(), "c".into()),
    ])?;
    let index = TmIndex::build(&tm, Bm25Params::default())?;
    let q = vec!["cat".to_string()];
    let scores = [index.bm25_score(&q, 2)?, index.bm25_score(&q, 0)?, index.bm25_score(&q, 1)?];
    let worked = (scores[0] - 0.7193).abs() < 1e-4 && (scores[1] - 0.4471).abs() < 1e-4 && scores[2] == 0.0;
    Ok((
        agree == queries && worked,
        format!("{agree}/{queries} queries over 100 corpora agree with brute force; worked scores {:.4} / {:.4} / {}", scores[0], scores[1], scores[2]),
    ))
}

// --------------------------------------------------------------------- BLEU

fn bleu_fixtures() -> Outcome {
    let same = ["the cat sat on the mat .", "a quick test , with punctuation !"];
    let identity = corpus_bleu(&same, &same)?.score;
    let worked = corpus_bleu(&["a b c e"], &["a b c d"])?.score;
    let text = include_str!("data/bleu_fixtures.txt");
    let mut corpora: Vec<(f64, Vec<String>, Vec<String>)> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# corpus ") {
            let score: f64 = rest.split(' ').nth(1).ok_or("fixture header")?.parse()?;
            corpora.push((score, Vec::new(), Vec::new()));
        } else if let Some(h) = line.strip_prefix("H\t") {
            corpora.last_mut().ok_or("fixture order")?.1.push(h.to_string());
        } else if let Some(r) = line.strip_prefix("R\t") {
            corpora.last_mut().ok_or("fixture order")?.2.push(r.to_string());
        }
    }
    let mut max_diff = 0.0f64;
    for (want, hyps, refs) in &corpora {
        let got = corpus_bleu(hyps, refs)?.score;
        max_diff = max_diff.max((got - want).abs());
    }
    let pass = (identity - 100.0).abs() < 1e-9 && (worked - 59.46).abs() <= 0.02 && corpora.len() == 100 && max_diff <= 0.01;
    Ok((
        pass,
        format!("identity {identity:.2}, worked example {worked:.2}, max |diff| vs reference scorer {max_diff:.2e} over {} corpora", corpora.len()),
    ))
}

// ------------------------------------------------------------- significance

fn significance_fixtures() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa"];
    let sent = |rng: &mut ChaCha8Rng| (0..rng.gen_range(5..12)).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
    let refs: Vec<String> = (0..50).map(|_| sent(&mut rng)).collect();
    let garbage: Vec<String> = (0..50).map(|i| format!("zz{i} qq{i} xx")).collect();
    let same = paired_bootstrap(&refs, &refs, &refs, 1000, 0.05, 1, Exec::default())?;
    let diff = paired_bootstrap(&refs, &garbage, &refs, 1000, 0.05, 1, Exec::default())?;
    let again = paired_bootstrap(&refs, &garbage, &refs, 1000, 0.05, 1, Exec::Sequential)?;
    let noisy: Vec<String> = refs.iter().enumerate().map(|(i, r)| if i % 3 == 0 { garbage[i].clone() } else { r.clone() }).collect();
    let d1 = paired_bootstrap(&noisy, &refs, &refs, 1000, 0.05, 9, Exec::default())?;
    let d2 = paired_bootstrap(&noisy, &refs, &refs, 1000, 0.05, 9, Exec::Sequential)?;
    let pass = same.p_value == 1.0 && !same.significant && diff.p_value == 0.0 && diff.significant && diff == again && d1 == d2;
    Ok((
        pass,
        format!(
            "identical p={} significant={}, reference vs garbage p={} significant={}, seeded reruns identical={}",
            same.p_value,
            same.significant,
            diff.p_value,
            diff.significant,
            diff == again && d1 == d2
        ),
    ))
}

// --------------------------------------------------------------- end to end

/// Settings of the planted-match run.
const E2E_STEPS: u64 = 6000;
const E2E_LR_SCALE: f64 = 2.0;
const E2E_BPE: usize = 1000;

fn e2e_model_config(vocab: usize, variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::desk(vocab, variant, 3);
    c.d_model = 32;
    c.n_heads = 2;
    c.d_ff = 64;
    c.max_len = 64;
    c
}

fn e2e_train_config() -> TrainConfig {
    let mut tc = TrainConfig::desk();
    tc.max_steps = E2E_STEPS;
    tc.lr_scale = E2E_LR_SCALE;
    tc.warmup_steps = 200;
    tc.batch_src_tokens = 200;
    tc.batch_tgt_tokens = 200;
    tc.log_every = 1000;
    tc
}

struct Trained {
    data: SyntheticData,
    vocab: Vocab,
    models: Vec<Model>,
}

fn end_to_end(out: &mut Option<Trained>) -> Outcome {
    let data = generate(&SyntheticConfig::default())?;
    let text: Vec<&str> = data.train.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]).collect();
    let vocab = train_bpe(&text, E2E_BPE)?;
    let train_tm = data.train_tm()?;
    let train_index = TmIndex::build(&train_tm, Bm25Params::default())?;
    let tc = e2e_train_config();
    let stream = build_training_stream(&train_tm, &train_index, &vocab, 3, 64, tc.seed, (tc.batch_src_tokens, tc.batch_tgt_tokens), Exec::default())?;
    let test_tm = data.test_tm()?;
    let test_index = TmIndex::build(&test_tm, Bm25Params::default())?;
    let refs = data.test_references();
    let dc = DecodeConfig::default();

    let mut detail = String::new();
    let mut models = Vec::new();
    let mut hyps: Vec<Vec<String>> = Vec::new();
    let mut bleu = Vec::new();
    for v in VARIANTS {
        let t = Instant::now();
        let mut trainer = Trainer::new(Model::new(e2e_model_config(vocab.len(), v), tc.seed)?, tc.clone())?;
        let log = train(&mut trainer, &stream, &[], None)?.log;
        let train_secs = t.elapsed().as_secs_f64();
        let p = Pipeline { vocab: &vocab, memory: Some((&test_tm, &test_index)), model: &trainer.model };
        let mut h = Vec::with_capacity(refs.len());
        for (src, _) in &data.test {
            h.push(translate(&p, src, &dc)?.0);
        }
        let hits = h.iter().zip(&data.test_answers).filter(|(h, a)| h.split(' ').any(|w| w == a.as_str())).count();
        let score = corpus_bleu(&h, &refs)?.score;
        eprintln!(
            "  {v}: BLEU {score:.2}, entity {hits}/{}, final train loss {:.3}, {train_secs:.0}s",
            refs.len(),
            log.last().map_or(f64::NAN, |r| r.train_loss)
        );
        write!(detail, "{v} {score:.2}, ").unwrap();
        bleu.push(score);
        hyps.push(h);
        models.push(trainer.model);
    }
    let margins: Vec<f64> = bleu[1..].iter().map(|b| b - bleu[0]).collect();
    let pass = margins.iter().all(|&m| m >= 5.0);
    write!(detail, "margins over baseline {:.2} / {:.2} / {:.2} (>= 5)", margins[0], margins[1], margins[2]).unwrap();
    for (a, b) in [(3, 1), (3, 2), (1, 2)] {
        let r = paired_bootstrap(&hyps[a], &hyps[b], &refs, 1000, 0.05, 1, Exec::default())?;
        eprintln!("  {} vs {}: {:.2} vs {:.2}, p = {:.3}, significant = {}", VARIANTS[a], VARIANTS[b], r.bleu_a, r.bleu_b, r.p_value, r.significant);
    }
    let mut order: Vec<usize> = vec![1, 2, 3];
    order.sort_by(|&a, &b| bleu[b].total_cmp(&bleu[a]));
    write!(detail, "; order {}", order.iter().map(|&i| VARIANTS[i].name()).collect::<Vec<_>>().join(" > ")).unwrap();
    *out = Some(Trained { data, vocab, models });
    Ok((pass, detail))
}

// ----------------------------------------------------------------- training

fn training_mechanics() -> Outcome {
    let peak = noam_lr(4000, 1024, 4000)?;
    let half = noam_lr(16000, 1024, 4000)?;
    let noam_ok = (peak - 4.9411e-4).abs() < 1e-7 && (half / peak - 0.5).abs() < 1e-12;

    let mut model = Model::new(ratnmt::training::tiny_config(Variant::RatSi), 1)?;
    let before = model.params.clone();
    let grads: Vec<Tensor> = model.params.tensors().iter().enumerate().map(|(i, t)| Tensor::from_fn(t.shape(), |c| ((i + c) % 7) as f64 - 3.0 + 0.5)).collect();
    let mut moments = Moments::zeros(&model.params);
    let lr = 1e-3;
    adam_step(&mut model.params, &grads, &mut moments, 1, lr, &AdamHyper { beta1: 0.9, beta2: 0.98, eps: 1e-9 })?;
    let mut adam_err = 0.0f64;
    for (i, g) in grads.iter().enumerate() {
        for (c, gv) in g.data().iter().enumerate() {
            let delta = model.params.tensors()[i].data()[c] - before.tensors()[i].data()[c];
            adam_err = adam_err.max((delta + lr * gv.signum()).abs() / lr);
        }
    }
    let adam_ok = adam_err < 1e-6;

    let ckpt = Checkpoint { model: model.clone(), train: TrainConfig::desk(), step: 1, cursor: Default::default(), moments };
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    let ckpt_ok = back.to_bytes() == bytes && back.model == ckpt.model && back.moments == ckpt.moments;

    let run = || -> Result<String, Box<dyn std::error::Error>> {
        let pairs: Vec<(String, String)> = (0..40).map(|i| (format!("s{} s{} s{}", i % 7, i % 5, i % 3), format!("t{} t{} t{}", i % 7, i % 5, i % 3))).collect();
        let tm = TranslationMemory::from_pairs(pairs.clone())?;
        let index = TmIndex::build(&tm, Bm25Params::default())?;
        let text: Vec<&str> = pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
        let vocab = train_bpe(&text, 60)?;
        let mut tc = TrainConfig::desk();
        tc.max_steps = 6;
        tc.batch_src_tokens = 40;
        tc.batch_tgt_tokens = 40;
        tc.seed = 5;
        let mut mc = ratnmt::training::tiny_config(Variant::RatSi);
        mc.vocab_size = vocab.len();
        mc.dropout = 0.1;
        let stream = build_training_stream(&tm, &index, &vocab, 2, 16, tc.seed, (40, 40), Exec::default())?;
        let mut t = Trainer::new(Model::new(mc, tc.seed)?, tc)?;
        train(&mut t, &stream, &[], None)?;
        Ok(format!("{:x}", Sha256::digest(t.checkpoint().to_bytes())))
    };
    let (h1, h2) = (run()?, run()?);
    let rerun_ok = h1 == h2;
    Ok((
        noam_ok && adam_ok && ckpt_ok && rerun_ok,
        format!(
            "noam peak {peak:.4e} half-peak ratio {:.6}, adam first-step max |dtheta + lr*sign(g)|/lr {adam_err:.1e}, checkpoint bit-exact {ckpt_ok}, rerun hash {}.. equal {rerun_ok}",
            half / peak,
            &h1[..12]
        ),
    ))
}

// ------------------------------------------------------------------ latency

fn latency_protocol(trained: Option<&Trained>) -> Outcome {
    let owned;
    let (data, vocab, models): (&SyntheticData, &Vocab, Vec<Model>) = match trained {
        Some(t) => (&t.data, &t.vocab, t.models.clone()),
        None => {
            let data = generate(&SyntheticConfig::default())?;
            let text: Vec<&str> = data.train.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]).collect();
            let vocab = train_bpe(&text, E2E_BPE)?;
            let models = VARIANTS.iter().map(|&v| Model::new(e2e_model_config(vocab.len(), v), 1)).collect::<ratnmt::Result<Vec<_>>>()?;
            owned = (data, vocab);
            (&owned.0, &owned.1, models)
        }
    };
    let tm = data.test_tm()?;
    let index = TmIndex::build(&tm, Bm25Params::default())?;
    let sentences: Vec<&str> = data.test_sources().into_iter().take(260).collect();
    let dc = DecodeConfig::default();
    let mut reports: Vec<LatencyReport> = Vec::new();
    for m in &models {
        let p = Pipeline { vocab, memory: Some((&tm, &index)), model: m };
        reports.push(bench_translate(&p, &sentences, 10, &dc)?);
    }
    eprint!("{}", summary_table(&reports));
    let by = |v: Variant| reports.iter().find(|r| r.variant == v).unwrap();
    let (base, cat, si) = (by(Variant::Baseline), by(Variant::RatCat), by(Variant::RatSi));
    // 5% slack for timer noise on the mean encode time
    let tol = 1.05;
    let ordering = base.mean_encode_ms <= cat.mean_encode_ms * tol && cat.mean_encode_ms <= si.mean_encode_ms * tol;
    let split = reports.iter().all(|r| r.p90_encode_ms <= r.p90_total_ms);
    let breakdown = (si.breakdown_ratio() - 1.0).abs() <= 0.05;
    let structure = si.mean_extraction_ms > 0.0 && cat.mean_extraction_ms == 0.0 && reports.iter().all(|r| r.n_sentences == sentences.len() - 10);
    Ok((
        ordering && split && breakdown && structure && sentences.len() - 10 >= 200,
        format!(
            "{} sentences; mean encode ms baseline {:.3} <= rat-cat {:.3} <= rat-si {:.3} ({ordering}); rat-si breakdown/encode {:.3}; p90 encode <= total {split}",
            si.n_sentences,
            base.mean_encode_ms,
            cat.mean_encode_ms,
            si.mean_encode_ms,
            si.breakdown_ratio()
        ),
    ))
}

// --------------------------------------------------------------------- main

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut trained: Option<Trained> = None;
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome, secs: f64| {
        match outcome {
            Ok((true, detail)) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Ok((false, detail)) => {
                failures += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
            Err(e) => {
                failures += 1;
                println!("FAIL {name}: error: {e} [{secs:.1}s]");
            }
        }
    };
    type Criterion = fn() -> Outcome;
    let simple: [(&str, Criterion); 7] = [
        ("gradient-suite", gradient_suite),
        ("connectivity", connectivity_suite),
        ("si-assembly-oracle", assembly_oracle),
        ("retrieval-oracle", retrieval_oracle),
        ("bleu-fixtures", bleu_fixtures),
        ("significance-fixtures", significance_fixtures),
        ("training-mechanics", training_mechanics),
    ];
    for (name, f) in simple.iter().take(6) {
        if wanted(name) {
            let t = Instant::now();
            report(name, f(), t.elapsed().as_secs_f64());
        }
    }
    if wanted("end-to-end") {
        let t = Instant::now();
        report("end-to-end", end_to_end(&mut trained), t.elapsed().as_secs_f64());
    }
    let (name, f) = simple[6];
    if wanted(name) {
        let t = Instant::now();
        report(name, f(), t.elapsed().as_secs_f64());
    }
    if wanted("latency") {
        let t = Instant::now();
        report("latency", latency_protocol(trained.as_ref()), t.elapsed().as_secs_f64());
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
