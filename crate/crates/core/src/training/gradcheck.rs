use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trainer::{example_gradients, example_loss};
use super::TrainingExample;
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::GradCheckReport;
use crate::{Error, Result};

/// Denominator floor of the relative error. Key biases have an exactly zero
/// gradient (softmax is shift invariant), where central differences leave
/// rounding noise near 1e-10.
pub const MODEL_CHECK_FLOOR: f64 = 1e-6;

/// Finite-difference check of the full per-example loss gradient with
/// respect to every model parameter. Dropout is switched off.
pub fn model_grad_check(model: &Model, ex: &TrainingExample, eps: f64, step: f64) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::Training(format!("grad-check step must be positive, got {step}")));
    }
    let mut work = model.clone();
    work.config.dropout = 0.0;
    let (analytic, _, _) = example_gradients(&work, ex, eps, ChaCha8Rng::seed_from_u64(0))?;
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: (0, 0), coordinates: 0 };
    for (pi, grad) in analytic.iter().enumerate() {
        for c in 0..grad.numel() {
            let orig = work.params.tensors()[pi].data()[c];
            work.params.values_mut(pi)[c] = orig + step;
            let (up, _) = example_loss(&work, ex, eps)?;
            work.params.values_mut(pi)[c] = orig - step;
            let (down, _) = example_loss(&work, ex, eps)?;
            work.params.values_mut(pi)[c] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = grad.data()[c];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(MODEL_CHECK_FLOOR);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (pi, c);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Configuration of the small model used for end-to-end gradient checks:
/// two encoder and two decoder layers, width 16, two heads.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        k: 2,
        enc_layers: 2,
        dec_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        dropout: 0.0,
        max_len: 16,
        vocab_size: 12,
    }
}

/// Random example over the tiny vocabulary with two non-empty matches.
pub fn tiny_example(seed: u64) -> TrainingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = |n: usize| (0..n).map(|_| rng.gen_range(5..12)).collect::<Vec<u32>>();
    TrainingExample { id: 0, src: seq(4), matches: vec![seq(3), seq(4)], match_ids: vec![1, 2], tgt: seq(4) }
}

/// Initialise a tiny model of `variant` and check it on a random example.
pub fn tiny_model_grad_check(variant: Variant, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let model = Model::new(tiny_config(variant), seed)?;
    model_grad_check(&model, &tiny_example(seed), eps, 1e-5)
}
