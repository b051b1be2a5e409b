use crate::model::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Moments {
    pub fn zeros(params: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self { v: m.clone(), m }
    }
}

/// One bias-corrected Adam update at 1-based `step`:
/// `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], moments: &mut Moments, step: u64, lr: f64, hyper: &AdamHyper) -> Result<()> {
    if step == 0 {
        return Err(Error::Training("adam_step: step must be at least 1".into()));
    }
    if grads.len() != params.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::Training(format!("adam_step: {} gradients for {} parameters", grads.len(), params.len())));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensors()[i].shape() {
            return Err(Error::Training(format!("adam_step: gradient shape {:?} for {}", g.shape(), params.names()[i])));
        }
        if !g.all_finite() {
            return Err(Error::Training(format!("adam_step: non-finite gradient for {}", params.names()[i])));
        }
    }
    let c1 = 1.0 - hyper.beta1.powi(step as i32);
    let c2 = 1.0 - hyper.beta2.powi(step as i32);
    for (i, g) in grads.iter().enumerate() {
        let (m, v) = (&mut moments.m[i], &mut moments.v[i]);
        let theta = params.values_mut(i);
        for j in 0..theta.len() {
            let gj = g.data()[j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Rescale `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= f);
        }
    }
    norm
}
