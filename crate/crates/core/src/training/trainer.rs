use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, clip_global_norm, label_smoothed_ce_sum, noam_lr, BatchCursor, Checkpoint, Moments, TrainConfig};
use super::{TrainingExample, TrainingStream};
use crate::arch::{assemble_plan, encode_memory_vars, PassMode};
use crate::config::Section;
use crate::exec::Exec;
use crate::model::{Model, Session};
use crate::tensor::Tensor;
use crate::tokenizer::{BOS, EOS};
use crate::{Error, Result};

pub const LOSS_LOG_HEADER: &str = "step\tlr\ttrain_loss\tvalid_loss";

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

impl LogRow {
    pub fn to_tsv_row(&self) -> String {
        let valid = self.valid_loss.map_or("-".to_string(), |v| format!("{v:.6}"));
        format!("{}\t{:.6e}\t{:.6}\t{}", self.step, self.lr, self.train_loss, valid)
    }
}

/// Dropout randomness for one example of one step, independent of how
/// examples are distributed over threads or of where a run was resumed.
fn example_rng(seed: u64, step: u64, example: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng.set_word_pos((example as u128) << 40);
    rng
}

fn forward<'m>(session: &mut Session<'m>, ex: &TrainingExample, eps: f64) -> Result<(crate::tensor::Var, usize)> {
    let cfg = session.config().clone();
    let k = cfg.k.min(ex.matches.len());
    let plan = assemble_plan(cfg.variant, &ex.src, &ex.matches[..k], cfg.max_len)?;
    let memory = encode_memory_vars(session, &plan, PassMode::Batched)?;
    let mut input = Vec::with_capacity(ex.tgt.len() + 1);
    input.push(BOS);
    input.extend_from_slice(&ex.tgt);
    let mut gold = ex.tgt.clone();
    gold.push(EOS);
    let logits = session.decode(memory.states, &memory.key_mask, &input)?;
    let mask = vec![true; gold.len()];
    label_smoothed_ce_sum(&mut session.tape, logits, &gold, &mask, eps)
}

/// Summed token loss of one example without dropout, and its token count.
pub fn example_loss(model: &Model, ex: &TrainingExample, eps: f64) -> Result<(f64, usize)> {
    let mut s = Session::inference(model);
    let (loss, n) = forward(&mut s, ex, eps)?;
    Ok((s.tape.value(loss).item(), n))
}

pub(super) fn example_gradients(model: &Model, ex: &TrainingExample, eps: f64, rng: ChaCha8Rng) -> Result<(Vec<Tensor>, f64, usize)> {
    let mut s = Session::training(model, rng);
    let (loss, n) = forward(&mut s, ex, eps)?;
    let value = s.tape.value(loss).item();
    Ok((s.param_grads(loss)?, value, n))
}

fn add_into(acc: &mut [Tensor], g: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(g) {
        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
    }
}

/// Per-token mean loss over a set of examples.
pub fn mean_loss(model: &Model, examples: &[TrainingExample], eps: f64, exec: Exec) -> Result<f64> {
    let parts = exec.map(examples, |ex| example_loss(model, ex, eps));
    let (mut total, mut count) = (0.0, 0);
    for p in parts {
        let (l, n) = p?;
        total += l;
        count += n;
    }
    if count == 0 {
        return Err(Error::Training("no tokens to score".into()));
    }
    Ok(total / count as f64)
}

/// Optimiser state plus the model being trained.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub step: u64,
    pub cursor: BatchCursor,
    pub moments: Moments,
    pub exec: Exec,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let moments = Moments::zeros(&model.params);
        Ok(Self { model, cfg, step: 0, cursor: BatchCursor::default(), moments, exec: Exec::default() })
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        c.train.validate()?;
        Ok(Self { model: c.model, cfg: c.train, step: c.step, cursor: c.cursor, moments: c.moments, exec: Exec::default() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { model: self.model.clone(), train: self.cfg.clone(), step: self.step, cursor: self.cursor, moments: self.moments.clone() }
    }

    /// Summed gradients, summed loss and token count of a batch at `step`.
    /// Examples are grouped into fixed chunks; chunks may run in parallel,
    /// and their sums are combined in chunk order.
    pub fn batch_gradients(&self, stream: &TrainingStream, batch: &[usize], step: u64) -> Result<(Vec<Tensor>, f64, usize)> {
        let chunks: Vec<&[usize]> = batch.chunks(self.cfg.chunk_size).collect();
        let eps = self.cfg.label_smoothing;
        let model = &self.model;
        let seed = self.cfg.seed;
        let partial = self.exec.map(&chunks, |chunk| -> Result<(Vec<Tensor>, f64, usize)> {
            let mut acc: Option<(Vec<Tensor>, f64, usize)> = None;
            for &i in chunk.iter() {
                let (g, l, n) = example_gradients(model, &stream.examples[i], eps, example_rng(seed, step, i))?;
                match acc.as_mut() {
                    None => acc = Some((g, l, n)),
                    Some(a) => {
                        add_into(&mut a.0, &g);
                        a.1 += l;
                        a.2 += n;
                    }
                }
            }
            Ok(acc.expect("chunks are nonempty"))
        });
        let mut total: Option<(Vec<Tensor>, f64, usize)> = None;
        for p in partial {
            let (g, l, n) = p?;
            match total.as_mut() {
                None => total = Some((g, l, n)),
                Some(t) => {
                    add_into(&mut t.0, &g);
                    t.1 += l;
                    t.2 += n;
                }
            }
        }
        total.ok_or_else(|| Error::Training("empty batch".into()))
    }

    /// Take one optimiser step on the next batch; returns the batch's
    /// per-token loss. On a non-finite loss nothing is updated.
    pub fn train_step(&mut self, stream: &TrainingStream) -> Result<f64> {
        let (batch, next) = stream.batch_at(self.cursor)?;
        let step = self.step + 1;
        let (mut grads, loss, tokens) = self.batch_gradients(stream, &batch, step)?;
        let loss = loss / tokens as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at step {step}")));
        }
        let scale = 1.0 / tokens as f64;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
        if let Some(c) = self.cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        let lr = self.lr(step)?;
        adam_step(&mut self.model.params, &grads, &mut self.moments, step, lr, &self.cfg.adam())?;
        self.step = step;
        self.cursor = next;
        Ok(loss)
    }

    pub fn lr(&self, step: u64) -> Result<f64> {
        Ok(self.cfg.lr_scale * noam_lr(step, self.model.config.d_model, self.cfg.warmup_steps)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt-{step:08}.bin"))
}

/// Run until `max_steps`. With `out_dir`, checkpoints are written every
/// `checkpoint_every` steps and at the end, and log rows are appended to
/// `loss.tsv`. A divergence aborts with the last written checkpoint intact.
pub fn train(trainer: &mut Trainer, stream: &TrainingStream, valid: &[TrainingExample], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut outcome = TrainOutcome::default();
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("loss.tsv");
            let fresh = !path.exists();
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(f, "{LOSS_LOG_HEADER}")?;
            }
            Some(f)
        }
        None => None,
    };
    let mut window = (0.0, 0u64);
    while trainer.step < trainer.cfg.max_steps {
        let loss = trainer.train_step(stream)?;
        window.0 += loss;
        window.1 += 1;
        let step = trainer.step;
        let last = step == trainer.cfg.max_steps;
        if step.is_multiple_of(trainer.cfg.log_every) || last {
            let valid_loss = if valid.is_empty() {
                None
            } else {
                Some(mean_loss(&trainer.model, valid, trainer.cfg.label_smoothing, trainer.exec)?)
            };
            let row = LogRow { step, lr: trainer.lr(step)?, train_loss: window.0 / window.1 as f64, valid_loss };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", row.to_tsv_row())?;
            }
            outcome.log.push(row);
            window = (0.0, 0);
        }
        if let Some(dir) = out_dir {
            if step.is_multiple_of(trainer.cfg.checkpoint_every) || last {
                let path = checkpoint_path(dir, step);
                trainer.checkpoint().save(&path)?;
                outcome.checkpoints.push(path);
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::retriever::{Bm25Params, TmIndex, TranslationMemory};
    use crate::tokenizer::train_bpe;
    use crate::training::build_training_stream;

    fn copy_setup(variant: Variant) -> (Model, TrainConfig, TrainingStream) {
        let words = ["ab", "cd", "ef", "gh", "ij", "kl"];
        let pairs: Vec<(String, String)> = (0..100)
            .map(|i| {
                let s = format!("{} {} {}", words[i % 6], words[(i / 6) % 6], words[(i * 7 + 1) % 6]);
                (s.clone(), s)
            })
            .collect();
        let tm = TranslationMemory::from_pairs(pairs.clone()).unwrap();
        let idx = TmIndex::build(&tm, Bm25Params::default()).unwrap();
        let text: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let vocab = train_bpe(&text, 40).unwrap();
        let mut mc = ModelConfig::desk(vocab.len(), variant, 2);
        mc.d_model = 16;
        mc.n_heads = 2;
        mc.d_ff = 32;
        mc.enc_layers = 1;
        mc.dec_layers = 1;
        let mut tc = TrainConfig::desk();
        tc.batch_src_tokens = 60;
        tc.batch_tgt_tokens = 60;
        tc.warmup_steps = 20;
        tc.max_steps = 50;
        tc.lr_scale = 2.0;
        tc.seed = 11;
        let stream = build_training_stream(&tm, &idx, &vocab, 2, mc.max_len, tc.seed, (60, 60), Exec::Sequential).unwrap();
        (Model::new(mc, 5).unwrap(), tc, stream)
    }

    #[test]
    fn loss_decreases_on_copy_task() {
        let (model, tc, stream) = copy_setup(Variant::Baseline);
        let before = mean_loss(&model, &stream.examples, 0.0, Exec::Sequential).unwrap();
        let mut t = Trainer::new(model, tc).unwrap();
        let out = train(&mut t, &stream, &stream.examples[..10], None).unwrap();
        let after = mean_loss(&t.model, &stream.examples, 0.0, Exec::Sequential).unwrap();
        assert!(after < before, "{before} -> {after}");
        assert_eq!(out.log.last().unwrap().step, 50);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (model, mut tc, stream) = copy_setup(Variant::RatSi);
        tc.max_steps = 6;
        let mut full = Trainer::new(model.clone(), tc.clone()).unwrap();
        train(&mut full, &stream, &[], None).unwrap();

        let mut first = tc.clone();
        first.max_steps = 3;
        let mut part = Trainer::new(model, first).unwrap();
        train(&mut part, &stream, &[], None).unwrap();
        let bytes = part.checkpoint().to_bytes();
        let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        resumed.cfg.max_steps = 6;
        train(&mut resumed, &stream, &[], None).unwrap();
        assert_eq!(resumed.model, full.model);
        assert_eq!(resumed.moments, full.moments);
    }

    #[test]
    fn parallel_and_sequential_steps_agree() {
        let (model, tc, stream) = copy_setup(Variant::RatCat);
        let mut a = Trainer::new(model.clone(), tc.clone()).unwrap();
        a.exec = Exec::Sequential;
        let mut b = Trainer::new(model, tc).unwrap();
        b.exec = Exec::Parallel;
        for _ in 0..2 {
            assert_eq!(a.train_step(&stream).unwrap().to_bits(), b.train_step(&stream).unwrap().to_bits());
        }
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn checkpoints_and_log_are_written() {
        let (model, mut tc, stream) = copy_setup(Variant::RatSep);
        tc.max_steps = 5;
        tc.checkpoint_every = 2;
        tc.log_every = 2;
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(model, tc).unwrap();
        let out = train(&mut t, &stream, &stream.examples[..4], Some(dir.path())).unwrap();
        let names: Vec<_> = out.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["ckpt-00000002.bin", "ckpt-00000004.bin", "ckpt-00000005.bin"]);
        let log = fs::read_to_string(dir.path().join("loss.tsv")).unwrap();
        assert_eq!(log.lines().next().unwrap(), LOSS_LOG_HEADER);
        assert_eq!(log.lines().count(), 4);
        let reloaded = Checkpoint::load(&out.checkpoints[2]).unwrap();
        assert_eq!(reloaded.model, t.model);
        let eps = t.cfg.label_smoothing;
        let a = mean_loss(&t.model, &stream.examples[..8], eps, Exec::Sequential).unwrap();
        let b = mean_loss(&reloaded.model, &stream.examples[..8], eps, Exec::Sequential).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
