use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Summed smoothed cross-entropy over the non-pad rows of `logits`
/// (`[T × V]`), with target distribution `(1−ε)·onehot + ε/V`.
/// Returns the loss variable and the number of counted tokens.
pub fn label_smoothed_ce_sum(tape: &mut Tape, logits: Var, gold: &[u32], pad_mask: &[bool], eps: f64) -> Result<(Var, usize)> {
    ce_with_weight(tape, logits, gold, pad_mask, eps, None)
}

/// Mean smoothed cross-entropy per non-pad token.
pub fn label_smoothed_ce(tape: &mut Tape, logits: Var, gold: &[u32], pad_mask: &[bool], eps: f64) -> Result<Var> {
    let count = pad_mask.iter().filter(|&&m| m).count();
    Ok(ce_with_weight(tape, logits, gold, pad_mask, eps, Some(count))?.0)
}

fn ce_with_weight(tape: &mut Tape, logits: Var, gold: &[u32], pad_mask: &[bool], eps: f64, mean_over: Option<usize>) -> Result<(Var, usize)> {
    let (t, v) = tape.value(logits).dims2();
    if gold.len() != t || pad_mask.len() != t {
        return Err(Error::Training(format!("loss: {t} logit rows, {} gold ids, {} mask entries", gold.len(), pad_mask.len())));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Training(format!("loss: label smoothing {eps} outside [0, 1)")));
    }
    let count = pad_mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Training("loss: every position is padding".into()));
    }
    let norm = mean_over.map_or(1.0, |c| 1.0 / c as f64);
    let uniform = eps / v as f64;
    let mut w = vec![0.0; t * v];
    for (r, (&g, &keep)) in gold.iter().zip(pad_mask).enumerate() {
        if !keep {
            continue;
        }
        if g as usize >= v {
            return Err(Error::Training(format!("loss: gold id {g} outside vocabulary of {v}")));
        }
        let row = &mut w[r * v..(r + 1) * v];
        row.iter_mut().for_each(|x| *x = -uniform * norm);
        row[g as usize] = -((1.0 - eps) + uniform) * norm;
    }
    let logp = tape.log_softmax(logits)?;
    Ok((tape.weighted_sum(logp, Tensor::matrix(t, v, w)?)?, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn eval(logits: Vec<f64>, v: usize, gold: &[u32], mask: &[bool], eps: f64) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(gold.len(), v, logits).unwrap(), true);
        let l = label_smoothed_ce(&mut tape, x, gold, mask, eps).unwrap();
        tape.value(l).item()
    }

    // direct evaluation of −Σ q log p per row, averaged
    fn brute(logits: &[f64], v: usize, gold: &[u32], mask: &[bool], eps: f64) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for (r, &g) in gold.iter().enumerate() {
            if !mask[r] {
                continue;
            }
            let row = &logits[r * v..(r + 1) * v];
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            for (j, x) in row.iter().enumerate() {
                let q = if j == g as usize { 1.0 - eps + eps / v as f64 } else { eps / v as f64 };
                total -= q * (x.exp() / z).ln();
            }
            n += 1;
        }
        total / n as f64
    }

    #[test]
    fn uniform_logits_give_log_v() {
        for eps in [0.0, 0.1, 0.5] {
            let l = eval(vec![0.3; 8], 4, &[1, 3], &[true, true], eps);
            assert!((l - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_smoothing_is_nll() {
        let logits = vec![1.0, 2.0, 0.5];
        let z: f64 = logits.iter().map(|x: &f64| x.exp()).sum();
        let nll = -(2f64.exp() / z).ln();
        assert!((eval(logits, 3, &[1], &[true], 0.0) - nll).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_and_floor() {
        let logits = vec![0.2, -1.0, 3.0, 1.5, 0.0, -0.5, 9.0, 0.1, 0.1];
        let gold = [2, 0, 0];
        let mask = [true, true, false];
        let l = eval(logits.clone(), 3, &gold, &mask, 0.1);
        assert!((l - brute(&logits, 3, &gold, &mask, 0.1)).abs() < 1e-12);
        // the loss can never drop below the entropy of q
        let q = [1.0 - 0.1 + 0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0];
        let entropy: f64 = -q.iter().map(|p: &f64| p * p.ln()).sum::<f64>();
        for scale in [1.0, 5.0, 30.0] {
            let peaked = vec![0.0, 0.0, scale];
            assert!(eval(peaked.clone(), 3, &[2], &[true], 0.1) >= entropy - 1e-12);
            assert!((eval(peaked.clone(), 3, &[2], &[true], 0.1) - brute(&peaked, 3, &[2], &[true], 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_only_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap(), true);
        assert!(label_smoothed_ce(&mut tape, x, &[1], &[false], 0.1).is_err());
        assert!(label_smoothed_ce(&mut tape, x, &[7], &[true], 0.1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let point = Tensor::matrix(3, 4, vec![0.1, -0.3, 0.8, 0.0, 1.2, 0.4, -0.7, 0.2, 0.0, 0.5, 0.3, -1.1]).unwrap();
        let report = grad_check::<_, crate::Error>(
            |tape, vars| label_smoothed_ce(tape, vars[0], &[2, 0, 3], &[true, true, false], 0.1),
            &[point],
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
