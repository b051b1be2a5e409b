use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bleu::{sentence_stats, BleuStats};
use super::EvalError;
use crate::exec::Exec;

#[derive(Clone, Debug, PartialEq)]
pub struct SignificanceResult {
    /// Share of resamples where system A did not beat system B.
    pub p_value: f64,
    pub n_resamples: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub significant: bool,
    pub bleu_a: f64,
    pub bleu_b: f64,
}

impl SignificanceResult {
    pub const TSV_HEADER: &'static str = "bleu_a\tbleu_b\twins_a\twins_b\tties\tn_resamples\tp_value\tsignificant";

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{:.2}\t{:.2}\t{}\t{}\t{}\t{}\t{:.4}\t{}",
            self.bleu_a, self.bleu_b, self.wins_a, self.wins_b, self.ties, self.n_resamples, self.p_value, self.significant
        )
    }
}

/// Index stream of resample `r`: ChaCha8 seeded with `seed`, stream number
/// `r`, drawing `n` indices uniformly from `0..n`. Streams are independent
/// of evaluation order, so parallel and sequential runs agree exactly.
pub fn resample_indices(seed: u64, r: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Paired bootstrap resampling. Ties count against A, so identical
/// systems give `p = 1`.
#[allow(clippy::too_many_arguments)]
pub fn paired_bootstrap<S: AsRef<str>, T: AsRef<str>, R: AsRef<str>>(
    hyps_a: &[S],
    hyps_b: &[T],
    refs: &[R],
    n_resamples: usize,
    threshold: f64,
    seed: u64,
    exec: Exec,
) -> Result<SignificanceResult, EvalError> {
    if n_resamples == 0 {
        return Err(EvalError::NoResamples);
    }
    let stats_a = sentence_stats(hyps_a, refs)?;
    let stats_b = sentence_stats(hyps_b, refs)?;
    let n = refs.len();
    let corpus = |stats: &[BleuStats], idx: &mut dyn Iterator<Item = usize>| {
        let mut total = BleuStats::default();
        for i in idx {
            total.add(&stats[i]);
        }
        total.report().score
    };
    let outcomes = exec.map_range(n_resamples, |r| {
        let idx = resample_indices(seed, r, n);
        let a = corpus(&stats_a, &mut idx.iter().copied());
        let b = corpus(&stats_b, &mut idx.iter().copied());
        a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
    });
    let wins_a = outcomes.iter().filter(|o| o.is_gt()).count();
    let wins_b = outcomes.iter().filter(|o| o.is_lt()).count();
    let ties = n_resamples - wins_a - wins_b;
    let p_value = (wins_b + ties) as f64 / n_resamples as f64;
    Ok(SignificanceResult {
        p_value,
        n_resamples,
        wins_a,
        wins_b,
        ties,
        significant: p_value < threshold,
        bleu_a: corpus(&stats_a, &mut (0..n)),
        bleu_b: corpus(&stats_b, &mut (0..n)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_systems_are_never_significant() {
        let h = ["a b c", "d e f g", "h i"];
        let r = ["a b c", "d e x g", "h j"];
        let res = paired_bootstrap(&h, &h, &r, 200, 0.05, 1, Exec::default()).unwrap();
        assert_eq!(res.p_value, 1.0);
        assert_eq!(res.ties, 200);
        assert!(!res.significant);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let a = ["a b c d", "e f g h", "i j k l", "m n"];
        let b = ["a b x d", "e f g y", "i z k l", "m n"];
        let refs = ["a b c d", "e f g h", "i j k l", "m o"];
        let p = paired_bootstrap(&a, &b, &refs, 300, 0.05, 42, Exec::Parallel).unwrap();
        let s = paired_bootstrap(&a, &b, &refs, 300, 0.05, 42, Exec::Sequential).unwrap();
        assert_eq!(p, s);
        assert_eq!(p.wins_a + p.wins_b + p.ties, 300);
    }

    #[test]
    fn zero_resamples_rejected() {
        assert_eq!(paired_bootstrap(&["a"], &["a"], &["a"], 0, 0.05, 0, Exec::default()).unwrap_err(), EvalError::NoResamples);
    }
}
