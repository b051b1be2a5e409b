//! Train one variant on the planted-match corpus and report test BLEU.
//!
//! `cargo run --release --example planted -- <variant> <steps> [key=value ...]`

use std::time::Instant;

use ratnmt::config::{apply_text, Section};
use ratnmt::decoding::{translate, DecodeConfig, Pipeline};
use ratnmt::evaluation::corpus_bleu;
use ratnmt::exec::Exec;
use ratnmt::model::{Model, ModelConfig, Variant};
use ratnmt::retriever::{Bm25Params, TmIndex};
use ratnmt::synthetic::{generate, SyntheticConfig};
use ratnmt::tokenizer::train_bpe;
use ratnmt::training::{build_training_stream, train, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map(String::as_str).unwrap_or("rat-si").parse()?;
    let steps: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let overrides = args.iter().skip(2).cloned().collect::<Vec<_>>().join("\n");

    let mut syn = SyntheticConfig::default();
    let mut mc = ModelConfig::desk(0, variant, 3);
    mc.d_model = 32;
    mc.n_heads = 2;
    mc.d_ff = 64;
    mc.max_len = 64;
    let mut tc = TrainConfig::desk();
    tc.max_steps = steps;
    tc.batch_src_tokens = 200;
    tc.batch_tgt_tokens = 200;
    tc.warmup_steps = 200;
    tc.log_every = 100;
    let mut dc = DecodeConfig::greedy();
    let mut eval_n = 200usize;
    let mut vocab_target = 1000usize;
    struct Extra<'a>(&'a mut usize, &'a mut usize);
    impl Section for Extra<'_> {
        fn set(&mut self, key: &str, value: &str) -> ratnmt::Result<bool> {
            match key {
                "eval_n" => *self.0 = ratnmt::config::parse_value(key, value)?,
                "bpe_size" => *self.1 = ratnmt::config::parse_value(key, value)?,
                _ => return Ok(false),
            }
            Ok(true)
        }
        fn entries(&self) -> Vec<(&'static str, String)> {
            Vec::new()
        }
    }
    mc.vocab_size = 100;
    apply_text(&overrides, &mut [&mut mc, &mut tc, &mut dc, &mut Extra(&mut eval_n, &mut vocab_target), &mut syn])?;

    let t0 = Instant::now();
    let data = generate(&syn)?;
    let text: Vec<&str> = data.train.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]).collect();
    let vocab = train_bpe(&text, vocab_target)?;
    mc.vocab_size = vocab.len();
    let train_tm = data.train_tm()?;
    let train_idx = TmIndex::build(&train_tm, Bm25Params::default())?;
    let stream = build_training_stream(&train_tm, &train_idx, &vocab, mc.k, mc.max_len, tc.seed, (tc.batch_src_tokens, tc.batch_tgt_tokens), Exec::default())?;
    let avg_src: f64 = stream.examples.iter().map(|e| e.src.len() as f64).sum::<f64>() / stream.examples.len() as f64;
    println!("vocab {} avg src tokens {avg_src:.2} batches/epoch {} setup {:?}", vocab.len(), stream.epoch_batches(0).len(), t0.elapsed());

    let model = Model::new(mc.clone(), tc.seed)?;
    println!("params {}", model.num_parameters());
    let mut trainer = Trainer::new(model, tc.clone())?;
    let t1 = Instant::now();
    let out = train(&mut trainer, &stream, &stream.examples[..50], None)?;
    for row in &out.log {
        println!("{}", row.to_tsv_row());
    }
    println!("train time {:?} ({:.1} ms/step)", t1.elapsed(), t1.elapsed().as_secs_f64() * 1000.0 / steps as f64);

    let tm = data.test_tm()?;
    let idx = TmIndex::build(&tm, Bm25Params::default())?;
    let p = Pipeline { vocab: &vocab, memory: Some((&tm, &idx)), model: &trainer.model };
    let t2 = Instant::now();
    let n = eval_n.min(data.test.len());
    let mut hyps = Vec::new();
    let mut hits = 0;
    for (i, (src, _)) in data.test.iter().take(n).enumerate() {
        let (h, _) = translate(&p, src, &dc)?;
        if h.split(' ').any(|w| w == data.test_answers[i]) {
            hits += 1;
        }
        hyps.push(h);
    }
    let refs: Vec<&str> = data.test.iter().take(n).map(|p| p.1.as_str()).collect();
    let bleu = corpus_bleu(&hyps, &refs)?;
    println!("{variant} BLEU {:.2} entity hits {hits}/{n} eval time {:?}", bleu.score, t2.elapsed());
    for i in 0..3 {
        println!("  src {}\n  ref {}\n  hyp {}", data.test[i].0, data.test[i].1, hyps[i]);
    }
    Ok(())
}
