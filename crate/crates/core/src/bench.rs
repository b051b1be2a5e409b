//! Per-sentence latency: every sentence is translated on its own (batch
//! size 1) and latencies are summarised by the nearest-rank 90th percentile.

use std::time::Duration;

use crate::decoding::{translate, DecodeConfig, Pipeline, Timings};
use crate::model::Variant;
use crate::{Error, Result};

/// Nearest rank: the element at 1-based position `⌈0.9·n⌉` of the sorted samples.
pub fn percentile_90(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Bench("percentile of an empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // integer form of ceil(0.9 n), free of rounding error
    let rank = (9 * sorted.len()).div_ceil(10);
    Ok(sorted[rank.max(1) - 1])
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub variant: Variant,
    pub k: usize,
    pub n_sentences: usize,
    pub p90_encode_ms: f64,
    pub p90_total_ms: f64,
    pub mean_encode_ms: f64,
    pub mean_total_ms: f64,
    /// Mean sub-timings of encoding: plan assembly, pass encoding,
    /// extraction and concatenation.
    pub mean_plan_ms: f64,
    pub mean_passes_ms: f64,
    pub mean_extraction_ms: f64,
    /// Per-sentence timings, in input order.
    pub samples: Vec<Timings>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl LatencyReport {
    pub const TSV_HEADER: &'static str = "variant\tk\tn_sentences\tp90_encode_ms\tp90_total_ms\tmean_encode_ms\tmean_total_ms\tmean_plan_ms\tmean_passes_ms\tmean_extraction_ms";

    pub fn from_samples(variant: Variant, k: usize, samples: Vec<Timings>) -> Result<Self> {
        let encode: Vec<f64> = samples.iter().map(|t| ms(t.encode)).collect();
        let total: Vec<f64> = samples.iter().map(|t| ms(t.total)).collect();
        let mean = |f: &dyn Fn(&Timings) -> Duration| samples.iter().map(|t| ms(f(t))).sum::<f64>() / samples.len() as f64;
        Ok(Self {
            variant,
            k,
            n_sentences: samples.len(),
            p90_encode_ms: percentile_90(&encode)?,
            p90_total_ms: percentile_90(&total)?,
            mean_encode_ms: mean(&|t| t.encode),
            mean_total_ms: mean(&|t| t.total),
            mean_plan_ms: mean(&|t| t.plan),
            mean_passes_ms: mean(&|t| t.passes),
            mean_extraction_ms: mean(&|t| t.assembly),
            samples,
        })
    }

    /// Sum of the three encoding components relative to the encode time.
    pub fn breakdown_ratio(&self) -> f64 {
        (self.mean_plan_ms + self.mean_passes_ms + self.mean_extraction_ms) / self.mean_encode_ms
    }

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            self.variant,
            self.k,
            self.n_sentences,
            self.p90_encode_ms,
            self.p90_total_ms,
            self.mean_encode_ms,
            self.mean_total_ms,
            self.mean_plan_ms,
            self.mean_passes_ms,
            self.mean_extraction_ms
        )
    }
}

/// Human-readable tables: encode latency, the encoding overhead breakdown,
/// and total latency, one row per variant.
pub fn summary_table(reports: &[LatencyReport]) -> String {
    let mut s = String::new();
    s.push_str("Encoding latency (p90, ms)\n");
    s.push_str(&format!("{:<10} {:>3} {:>10}\n", "variant", "k", "encode"));
    for r in reports {
        s.push_str(&format!("{:<10} {:>3} {:>10.3}\n", r.variant.name(), r.k, r.p90_encode_ms));
    }
    s.push_str("\nEncoding breakdown (mean, ms)\n");
    s.push_str(&format!("{:<10} {:>10} {:>10} {:>12} {:>10}\n", "variant", "plan", "passes", "extraction", "encode"));
    for r in reports {
        s.push_str(&format!(
            "{:<10} {:>10.4} {:>10.4} {:>12.4} {:>10.4}\n",
            r.variant.name(),
            r.mean_plan_ms,
            r.mean_passes_ms,
            r.mean_extraction_ms,
            r.mean_encode_ms
        ));
    }
    s.push_str("\nTotal translation latency (p90, ms)\n");
    s.push_str(&format!("{:<10} {:>3} {:>10}\n", "variant", "k", "total"));
    for r in reports {
        s.push_str(&format!("{:<10} {:>3} {:>10.3}\n", r.variant.name(), r.k, r.p90_total_ms));
    }
    s
}

/// Translate `sentences` one at a time; the first `warmup_count` are run
/// but not measured.
pub fn bench_translate(pipeline: &Pipeline<'_>, sentences: &[&str], warmup_count: usize, cfg: &DecodeConfig) -> Result<LatencyReport> {
    if warmup_count >= sentences.len() {
        return Err(Error::Bench(format!("{warmup_count} warmup sentences leave nothing of {} to measure", sentences.len())));
    }
    for s in &sentences[..warmup_count] {
        translate(pipeline, s, cfg)?;
    }
    let mut samples = Vec::with_capacity(sentences.len() - warmup_count);
    for s in &sentences[warmup_count..] {
        samples.push(translate(pipeline, s, cfg)?.1.timings);
    }
    let model = &pipeline.model.config;
    LatencyReport::from_samples(model.variant, if model.variant.uses_matches() { model.k } else { 0 }, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::retriever::{Bm25Params, TmIndex, TranslationMemory};
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_fixtures() {
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile_90(&ten).unwrap(), 9.0);
        assert_eq!(percentile_90(&[7.0]).unwrap(), 7.0);
        assert_eq!(percentile_90(&[5.0, 1.0, 3.0]).unwrap(), 5.0);
        assert!(percentile_90(&[]).is_err());
    }

    proptest! {
        #[test]
        fn percentile_is_a_permutation_invariant_sample(mut xs in proptest::collection::vec(-1e6f64..1e6, 1..60), seed in any::<u64>()) {
            let p = percentile_90(&xs).unwrap();
            prop_assert!(xs.contains(&p));
            use rand::{seq::SliceRandom, SeedableRng};
            xs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(percentile_90(&xs).unwrap(), p);
        }
    }

    #[test]
    fn reports_have_the_expected_structure() {
        let pairs: Vec<(String, String)> = ["a b c", "a b d", "c d e", "e f a"].iter().map(|s| (s.to_string(), s.to_uppercase())).collect();
        let tm = TranslationMemory::from_pairs(pairs.clone()).unwrap();
        let index = TmIndex::build(&tm, Bm25Params::default()).unwrap();
        let text: Vec<String> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        let vocab = crate::tokenizer::train_bpe(&text, 30).unwrap();
        let sentences = ["a b", "c d", "e f", "a c", "b d"];
        let dc = DecodeConfig { max_output_len: Some(3), ..DecodeConfig::greedy() };
        let mut reports = Vec::new();
        for v in [Variant::Baseline, Variant::RatCat, Variant::RatSi] {
            let mut cfg = ModelConfig::desk(vocab.len(), v, 2);
            cfg.d_model = 8;
            cfg.n_heads = 2;
            cfg.d_ff = 16;
            let model = Model::new(cfg, 1).unwrap();
            let p = Pipeline { vocab: &vocab, memory: Some((&tm, &index)), model: &model };
            let r = bench_translate(&p, &sentences, 2, &dc).unwrap();
            assert_eq!(r.n_sentences, 3);
            assert!(r.p90_encode_ms <= r.p90_total_ms);
            reports.push(r);
        }
        assert_eq!(reports[0].mean_extraction_ms, 0.0);
        assert_eq!(reports[1].mean_extraction_ms, 0.0);
        assert!(reports[2].mean_extraction_ms > 0.0);
        let table = summary_table(&reports);
        assert!(table.contains("rat-si"));
        assert_eq!(reports[2].to_tsv_row().split('\t').count(), LatencyReport::TSV_HEADER.split('\t').count());
        let p = Pipeline { vocab: &vocab, memory: Some((&tm, &index)), model: &Model::new(ModelConfig { d_model: 8, n_heads: 2, d_ff: 16, ..ModelConfig::desk(vocab.len(), Variant::Baseline, 0) }, 1).unwrap() };
        assert!(bench_translate(&p, &sentences, 5, &dc).is_err());
    }
}
