use std::collections::HashMap;

use super::tok13a::tokenize_13a;
use super::EvalError;

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram statistics of one hypothesis/reference pair. Corpus BLEU
/// is computed from the element-wise sum over sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence(hyp: &str, reference: &str) -> Self {
        let h = tokenize_13a(hyp);
        let r = tokenize_13a(reference);
        let mut stats = BleuStats { hyp_len: h.len() as u64, ref_len: r.len() as u64, ..Default::default() };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&r, n);
            let hyp_counts = ngram_counts(&h, n);
            stats.totals[n - 1] = h.len().saturating_sub(n - 1) as u64;
            stats.matches[n - 1] =
                hyp_counts.iter().map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)) as u64).sum();
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Exponential smoothing (`smooth:exp`), all four orders (`eff:no`).
    pub fn report(&self) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if self.totals[n] == 0 {
                break;
            }
            precisions[n] = if self.matches[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * self.totals[n] as f64)
            } else {
                100.0 * self.matches[n] as f64 / self.totals[n] as f64
            };
        }
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        let score = if self.hyp_len == 0 {
            0.0
        } else {
            let log_sum: f64 = precisions.iter().map(|&p| if p == 0.0 { -9_999_999_999.0 } else { p.ln() }).sum();
            brevity_penalty * (log_sum / MAX_ORDER as f64).exp()
        };
        BleuReport { score, precisions, brevity_penalty, hyp_len: self.hyp_len, ref_len: self.ref_len }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// Percentage in `[0, 100]`.
    pub score: f64,
    /// Smoothed n-gram precisions as percentages, orders 1–4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuReport {
    pub const SIGNATURE: &'static str = "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|version:2.0.0";

    /// Header matching [`BleuReport::to_tsv_row`].
    pub const TSV_HEADER: &'static str = "bleu\tp1\tp2\tp3\tp4\tbp\thyp_len\tref_len\tsignature";

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.4}\t{}\t{}\t{}",
            self.score,
            self.precisions[0],
            self.precisions[1],
            self.precisions[2],
            self.precisions[3],
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len,
            Self::SIGNATURE
        )
    }
}

pub fn sentence_stats<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R]) -> Result<Vec<BleuStats>, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(hyps.iter().zip(refs).map(|(h, r)| BleuStats::sentence(h.as_ref(), r.as_ref())).collect())
}

/// Corpus-level BLEU with a single reference per segment.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R]) -> Result<BleuReport, EvalError> {
    let mut total = BleuStats::default();
    for s in sentence_stats(hyps, refs)? {
        total.add(&s);
    }
    Ok(total.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_100() {
        let s = ["the cat sat on the mat .", "a b c d e"];
        let r = corpus_bleu(&s, &s).unwrap();
        assert!((r.score - 100.0).abs() < 1e-9);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn smoothed_worked_example() {
        let r = corpus_bleu(&["a b c e"], &["a b c d"]).unwrap();
        let expected = (0.75f64 * (2.0 / 3.0) * 0.5 * 0.5).powf(0.25) * 100.0;
        assert!((r.score - expected).abs() < 1e-9);
        assert!((r.score - 59.46).abs() < 0.02);
        assert_eq!(r.precisions[3], 50.0);
    }

    #[test]
    fn brevity_penalty_for_half_length() {
        let r = corpus_bleu(&["a b c d e f"], &["a b c d e f g h i j k l"]).unwrap();
        assert!((r.brevity_penalty - (-1.0f64).exp()).abs() < 1e-12);
        assert!((r.score - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn errors_and_degenerate_inputs() {
        assert_eq!(
            corpus_bleu(&["a"], &["a", "b"]).unwrap_err(),
            EvalError::LengthMismatch { hyps: 1, refs: 2 }
        );
        let empty: [&str; 0] = [];
        assert_eq!(corpus_bleu(&empty, &empty).unwrap_err(), EvalError::Empty);
        assert_eq!(corpus_bleu(&[""], &["a b"]).unwrap().score, 0.0);
    }
}
