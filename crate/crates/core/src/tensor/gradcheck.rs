use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttnMask, Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Compare tape gradients against central finite differences.
///
/// `f` builds a scalar from leaves holding `points` (one leaf per tensor, in
/// order). Every coordinate of every point is perturbed by `±step`; the
/// per-coordinate error is `|analytic − fd| / max(|analytic|, |fd|, 1e-8)`.
pub fn grad_check<F, E>(f: F, points: &[Tensor], step: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(step > 0.0) {
        return Err(TensorError::GradCheck(format!("step must be positive, got {step}")).into());
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |pts: &[Tensor]| -> Result<f64, E> {
        let mut t = Tape::inference();
        let vs: Vec<Var> = pts.iter().map(|p| t.leaf(p.clone(), false)).collect();
        let out = f(&mut t, &vs)?;
        let v = t.value(out);
        if !v.is_scalar() {
            return Err(TensorError::NotScalar(v.shape().to_vec()).into());
        }
        Ok(v.item())
    };

    let mut report = GradCheckReport { max_relative_error: 0.0, worst: (0, 0), coordinates: 0 };
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf registered with requires_grad").data().to_vec();
        for c in 0..work[pi].numel() {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[c] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * step);
            if !fd.is_finite() {
                return Err(TensorError::GradCheck(format!("non-finite difference at input {pi}, coordinate {c}")).into());
            }
            let a = analytic[c];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (pi, c);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Finite-difference step used by [`op_suite`].
pub const SUITE_STEP: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, for kinked ops.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen::<bool>() { m } else { -m }
    })
}

/// Check one op: its output is reduced to a scalar by a fixed random
/// weighting so every output coordinate contributes a distinct gradient.
fn check_op<F>(rng: &mut ChaCha8Rng, points: Vec<Tensor>, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut probe = Tape::inference();
    let vs: Vec<Var> = points.iter().map(|p| probe.leaf(p.clone(), false)).collect();
    let out = build(&mut probe, &vs)?;
    let weights = uniform(rng, probe.value(out).shape());
    grad_check(
        |t, v| {
            let y = build(t, v)?;
            t.weighted_sum(y, weights.clone())
        },
        &points,
        SUITE_STEP,
    )
}

/// Gradient check of every differentiable op on random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    let (a, b) = (uniform(r, &[3, 4]), uniform(r, &[4, 5]));
    out.push(("matmul", check_op(r, vec![a, b], |t, v| t.matmul(v[0], v[1]))?));
    let (a, b) = (uniform(r, &[3, 4]), uniform(r, &[5, 4]));
    out.push(("matmul_nt", check_op(r, vec![a, b], |t, v| t.matmul_nt(v[0], v[1]))?));
    let (a, b) = (uniform(r, &[3, 4]), uniform(r, &[3, 4]));
    out.push(("add", check_op(r, vec![a, b], |t, v| t.add(v[0], v[1]))?));
    let (a, b) = (uniform(r, &[3, 4]), uniform(r, &[4]));
    out.push(("add_row", check_op(r, vec![a, b], |t, v| t.add_row(v[0], v[1]))?));
    let (a, b) = (uniform(r, &[3, 4]), uniform(r, &[3, 4]));
    out.push(("mul", check_op(r, vec![a, b], |t, v| t.mul(v[0], v[1]))?));
    let a = uniform(r, &[3, 4]);
    out.push(("scale", check_op(r, vec![a], |t, v| t.scale(v[0], -1.7))?));
    let a = uniform(r, &[3, 5]);
    out.push(("softmax", check_op(r, vec![a], |t, v| t.softmax(v[0]))?));
    let a = uniform(r, &[3, 5]);
    out.push(("log_softmax", check_op(r, vec![a], |t, v| t.log_softmax(v[0]))?));
    let (x, g, bias) = (uniform(r, &[3, 6]), uniform(r, &[6]), uniform(r, &[6]));
    out.push(("layer_norm", check_op(r, vec![x, g, bias], |t, v| t.layer_norm(v[0], v[1], v[2]))?));
    let a = uniform(r, &[3, 4]);
    out.push(("gelu", check_op(r, vec![a], |t, v| t.gelu(v[0]))?));
    let a = off_zero(r, &[3, 4]);
    out.push(("relu", check_op(r, vec![a], |t, v| t.relu(v[0]))?));
    let table = uniform(r, &[6, 3]);
    out.push(("embedding", check_op(r, vec![table], |t, v| t.embedding(v[0], &[4, 1, 4, 0]))?));
    let (a, b) = (uniform(r, &[2, 3]), uniform(r, &[4, 3]));
    out.push(("concat_rows", check_op(r, vec![a, b], |t, v| t.concat_rows(&[v[0], v[1]]))?));
    let (a, b) = (uniform(r, &[3, 2]), uniform(r, &[3, 4]));
    out.push(("concat_cols", check_op(r, vec![a, b], |t, v| t.concat_cols(&[v[0], v[1]]))?));
    let a = uniform(r, &[5, 3]);
    out.push(("slice_rows", check_op(r, vec![a], |t, v| t.slice_rows(v[0], 1, 4))?));
    let a = uniform(r, &[3, 5]);
    out.push(("slice_cols", check_op(r, vec![a], |t, v| t.slice_cols(v[0], 2, 5))?));
    let a = uniform(r, &[3, 4]);
    out.push(("reshape", check_op(r, vec![a], |t, v| t.reshape(v[0], &[2, 6]))?));
    let a = uniform(r, &[3, 4]);
    out.push(("transpose", check_op(r, vec![a], |t, v| t.transpose(v[0]))?));
    let a = uniform(r, &[3, 4]);
    let drop_seed = r.gen::<u64>();
    out.push((
        "dropout",
        check_op(r, vec![a], move |t, v| t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(drop_seed)))?,
    ));
    let a = uniform(r, &[4, 4]);
    let causal = AttnMask::causal(4);
    out.push((
        "masked_fill",
        check_op(r, vec![a], |t, v| {
            let m = t.masked_fill(v[0], &causal)?;
            t.softmax(m)
        })?,
    ));
    let a = uniform(r, &[3, 4]);
    out.push(("sum", check_op(r, vec![a], |t, v| t.sum(v[0]))?));
    let a = uniform(r, &[3, 4]);
    out.push(("mean", check_op(r, vec![a], |t, v| t.mean(v[0]))?));
    let a = uniform(r, &[3, 4]);
    let w = uniform(r, &[3, 4]);
    out.push(("weighted_sum", check_op(r, vec![a], move |t, v| t.weighted_sum(v[0], w.clone()))?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![0.3, -2.0, 11.0]);
        let r = grad_check::<_, TensorError>(
            |t, v| {
                let s = t.scale(v[0], 3.0)?;
                t.sum(s)
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-10, "{r:?}");
    }

    #[test]
    fn every_op_passes() {
        for seed in 0..3 {
            for (name, r) in op_suite(seed).unwrap() {
                assert!(r.max_relative_error < 1e-4, "{name}: {r:?}");
            }
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check::<_, TensorError>(|t, v| t.sum(v[0]), &[x], 0.0).is_err());
    }
}
