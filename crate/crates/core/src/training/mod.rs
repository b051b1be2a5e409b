//! Optimisation: warmup schedule, Adam, label-smoothed cross-entropy,
//! token-budget batches with self-retrieved fuzzy matches, checkpoints.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;
mod stream;
mod trainer;

pub use checkpoint::Checkpoint;
pub use gradcheck::{model_grad_check, MODEL_CHECK_FLOOR, tiny_config, tiny_example, tiny_model_grad_check};
pub use loss::{label_smoothed_ce, label_smoothed_ce_sum};
pub use optim::{adam_step, clip_global_norm, AdamHyper, Moments};
pub use stream::{build_heldout_examples, build_training_stream, BatchCursor, TrainingExample, TrainingStream};
pub use trainer::{checkpoint_path, example_loss, mean_loss, train, LogRow, TrainOutcome, Trainer, LOSS_LOG_HEADER};

use crate::config::{parse_value, Section};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub batch_src_tokens: usize,
    pub batch_tgt_tokens: usize,
    pub label_smoothing: f64,
    pub checkpoint_every: u64,
    pub max_steps: u64,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Multiplier on the warmup schedule.
    pub lr_scale: f64,
    /// Examples per parallel work unit. Part of the numeric recipe: gradients
    /// are summed inside a chunk, then across chunks in order.
    pub chunk_size: usize,
    pub log_every: u64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            warmup_steps: 400,
            batch_src_tokens: 2000,
            batch_tgt_tokens: 2000,
            label_smoothing: 0.1,
            checkpoint_every: 500,
            max_steps: 20_000,
            seed: 1,
            clip_norm: Some(1.0),
            lr_scale: 1.0,
            chunk_size: 4,
            log_every: 50,
        }
    }

    /// Full-size recipe: 4K warmup, 32K+32K token batches, checkpoints every 10K, 300K steps.
    pub fn paper_scale() -> Self {
        Self {
            warmup_steps: 4000,
            batch_src_tokens: 32_000,
            batch_tgt_tokens: 32_000,
            checkpoint_every: 10_000,
            max_steps: 300_000,
            clip_norm: None,
            ..Self::desk()
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl Section for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "batch_src_tokens" => self.batch_src_tokens = parse_value(key, value)?,
            "batch_tgt_tokens" => self.batch_tgt_tokens = parse_value(key, value)?,
            "label_smoothing" => self.label_smoothing = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = if value == "none" { None } else { Some(parse_value(key, value)?) },
            "lr_scale" => self.lr_scale = parse_value(key, value)?,
            "chunk_size" => self.chunk_size = parse_value(key, value)?,
            "log_every" => self.log_every = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("batch_src_tokens", self.batch_src_tokens.to_string()),
            ("batch_tgt_tokens", self.batch_tgt_tokens.to_string()),
            ("label_smoothing", self.label_smoothing.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("clip_norm", self.clip_norm.map_or("none".to_string(), |c| c.to_string())),
            ("lr_scale", self.lr_scale.to_string()),
            ("chunk_size", self.chunk_size.to_string()),
            ("log_every", self.log_every.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("{key}: {msg}")));
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.beta1) {
            return bad("beta1", "must lie in (0, 1)");
        }
        if !open_unit(self.beta2) {
            return bad("beta2", "must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be positive");
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing", "must lie in [0, 1)");
        }
        if self.batch_src_tokens == 0 {
            return bad("batch_src_tokens", "must be positive");
        }
        if self.batch_tgt_tokens == 0 {
            return bad("batch_tgt_tokens", "must be positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every", "must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm", "must be positive or none");
        }
        if !(self.lr_scale > 0.0) {
            return bad("lr_scale", "must be positive");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size", "must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every", "must be positive");
        }
        Ok(())
    }
}

/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Training("noam_lr: step must be at least 1".into()));
    }
    if warmup == 0 || d_model == 0 {
        return Err(Error::Training("noam_lr: warmup and d_model must be positive".into()));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}
