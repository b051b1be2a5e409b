//! Planted-match corpora: a task that only a model reading the
//! translation memory can solve.
//!
//! Sentences are word-for-word translations through a fixed dictionary,
//! except for one entity word. Sentences come in clusters sharing three
//! signature words, and the entity's translation is drawn at random per
//! cluster. A model that has never seen a cluster cannot know the entity's
//! translation; a model given another member of the cluster as a fuzzy match
//! can copy it.
//!
//! * training corpus: clusters of `cluster_size` members, plus background
//!   sentences without the entity that share one signature word with a
//!   cluster (they are what self-retrieval returns besides the partner);
//! * test set: sentences from fresh clusters;
//! * test memory: for each test sentence, with probability `planting_rate`,
//!   one other member of its cluster, plus `distractors` background
//!   sentences sharing a single signature word.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_value, Section};
use crate::retriever::TranslationMemory;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Target-side word types; a fifth are entity terms, a fifth fillers,
    /// the rest signature words.
    pub vocab_size: usize,
    pub train_pairs: usize,
    pub test_sentences: usize,
    /// Sentence length in words, inclusive.
    pub min_len: usize,
    pub max_len: usize,
    pub cluster_size: usize,
    /// Background sentences per cluster in training and per test sentence in the memory.
    pub distractors: usize,
    pub planting_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            vocab_size: 200,
            train_pairs: 5000,
            test_sentences: 500,
            min_len: 5,
            max_len: 8,
            cluster_size: 3,
            distractors: 2,
            planting_rate: 1.0,
        }
    }
}

impl Section for SyntheticConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "train_pairs" => self.train_pairs = parse_value(key, value)?,
            "test_sentences" => self.test_sentences = parse_value(key, value)?,
            "min_len" => self.min_len = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "cluster_size" => self.cluster_size = parse_value(key, value)?,
            "distractors" => self.distractors = parse_value(key, value)?,
            "planting_rate" => self.planting_rate = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("train_pairs", self.train_pairs.to_string()),
            ("test_sentences", self.test_sentences.to_string()),
            ("min_len", self.min_len.to_string()),
            ("max_len", self.max_len.to_string()),
            ("cluster_size", self.cluster_size.to_string()),
            ("distractors", self.distractors.to_string()),
            ("planting_rate", self.planting_rate.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("{key}: {msg}")));
        if self.vocab_size < 20 {
            return bad("vocab_size", "must be at least 20");
        }
        if self.min_len < 4 {
            return bad("min_len", "must be at least 4 (three signature words and the entity)");
        }
        if self.max_len < self.min_len {
            return bad("max_len", "must not be below min_len");
        }
        if self.cluster_size < 2 {
            return bad("cluster_size", "must be at least 2");
        }
        if self.train_pairs == 0 {
            return bad("train_pairs", "must be positive");
        }
        if self.test_sentences == 0 {
            return bad("test_sentences", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.planting_rate) {
            return bad("planting_rate", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<(String, String)>,
    /// `(source, reference)` test pairs.
    pub test: Vec<(String, String)>,
    /// Target-side entity term each test reference contains.
    pub test_answers: Vec<String>,
    pub memory: Vec<(String, String)>,
}

impl SyntheticData {
    pub fn train_tm(&self) -> Result<TranslationMemory> {
        Ok(TranslationMemory::from_pairs(self.train.clone())?)
    }

    pub fn test_tm(&self) -> Result<TranslationMemory> {
        Ok(TranslationMemory::from_pairs(self.memory.clone())?)
    }

    pub fn test_sources(&self) -> Vec<&str> {
        self.test.iter().map(|p| p.0.as_str()).collect()
    }

    pub fn test_references(&self) -> Vec<&str> {
        self.test.iter().map(|p| p.1.as_str()).collect()
    }

    /// Write `train.tsv`, `test.tsv` and `memory.tsv` (source TAB target per line).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let tsv = |pairs: &[(String, String)]| pairs.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect::<String>();
        fs::write(dir.join("train.tsv"), tsv(&self.train))?;
        fs::write(dir.join("test.tsv"), tsv(&self.test))?;
        fs::write(dir.join("memory.tsv"), tsv(&self.memory))?;
        Ok(())
    }
}

struct Lexicon {
    /// `(source, target)` signature word pairs.
    signature: Vec<(String, String)>,
    filler: Vec<(String, String)>,
    terms: Vec<String>,
    entity: String,
}

fn pseudo_word(rng: &mut ChaCha8Rng, consonants: &[u8], vowels: &[u8], syllables: usize) -> String {
    (0..syllables)
        .flat_map(|_| [consonants[rng.gen_range(0..consonants.len())], vowels[rng.gen_range(0..vowels.len())]])
        .map(char::from)
        .collect()
}

fn lexicon(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Lexicon {
    let n_terms = cfg.vocab_size / 5;
    let n_filler = cfg.vocab_size / 5;
    let n_sig = cfg.vocab_size - n_terms - n_filler;
    let mut seen = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, source: bool| loop {
        let w = if source {
            pseudo_word(rng, b"bdfgklmnprstvz", b"aeiou", 2)
        } else {
            pseudo_word(rng, b"chjqwxy", b"aeiou", 2) + &pseudo_word(rng, b"bdfgklmnprstvz", b"aeiou", 1)
        };
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let entity = fresh(rng, true);
    let signature = (0..n_sig).map(|_| (fresh(rng, true), fresh(rng, false))).collect();
    let filler = (0..n_filler).map(|_| (fresh(rng, true), fresh(rng, false))).collect();
    let terms = (0..n_terms).map(|_| fresh(rng, false)).collect();
    Lexicon { signature, filler, terms, entity }
}

impl Lexicon {
    /// A sentence containing `sig` (indices of signature words), the entity
    /// translated as `term` if given, and random fillers, in random order.
    fn sentence(&self, rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, sig: &[usize], term: Option<&str>) -> (String, String) {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut words: Vec<(&str, &str)> = sig.iter().map(|&i| (self.signature[i].0.as_str(), self.signature[i].1.as_str())).collect();
        if let Some(t) = term {
            words.push((self.entity.as_str(), t));
        }
        while words.len() < len {
            let (s, t) = &self.filler[rng.gen_range(0..self.filler.len())];
            words.push((s, t));
        }
        words.shuffle(rng);
        let src: Vec<&str> = words.iter().map(|w| w.0).collect();
        let tgt: Vec<&str> = words.iter().map(|w| w.1).collect();
        (src.join(" "), tgt.join(" "))
    }

    fn signature_set(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        rand::seq::index::sample(rng, self.signature.len(), 3).into_vec()
    }

    /// Signature words sharing exactly one word with `sig`.
    fn overlapping(&self, rng: &mut ChaCha8Rng, sig: &[usize]) -> Vec<usize> {
        let keep = sig[rng.gen_range(0..sig.len())];
        let mut out = vec![keep];
        while out.len() < 3 {
            let w = rng.gen_range(0..self.signature.len());
            if !sig.contains(&w) && !out.contains(&w) {
                out.push(w);
            }
        }
        out
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = lexicon(cfg, &mut rng);

    let mut train = Vec::with_capacity(cfg.train_pairs);
    while train.len() < cfg.train_pairs {
        let sig = lex.signature_set(&mut rng);
        let term = lex.terms[rng.gen_range(0..lex.terms.len())].clone();
        for _ in 0..cfg.cluster_size {
            train.push(lex.sentence(&mut rng, cfg, &sig, Some(&term)));
        }
        for _ in 0..cfg.distractors {
            let other = lex.overlapping(&mut rng, &sig);
            train.push(lex.sentence(&mut rng, cfg, &other, None));
        }
    }
    train.truncate(cfg.train_pairs);

    let mut test = Vec::with_capacity(cfg.test_sentences);
    let mut test_answers = Vec::with_capacity(cfg.test_sentences);
    let mut memory = Vec::new();
    for _ in 0..cfg.test_sentences {
        let sig = lex.signature_set(&mut rng);
        let term = lex.terms[rng.gen_range(0..lex.terms.len())].clone();
        test.push(lex.sentence(&mut rng, cfg, &sig, Some(&term)));
        if rng.gen_bool(cfg.planting_rate) {
            memory.push(lex.sentence(&mut rng, cfg, &sig, Some(&term)));
        }
        for _ in 0..cfg.distractors {
            let other = lex.overlapping(&mut rng, &sig);
            memory.push(lex.sentence(&mut rng, cfg, &other, None));
        }
        test_answers.push(term);
    }
    if memory.is_empty() {
        return Err(Error::Config("planting_rate: with no distractors the test memory would be empty".into()));
    }
    Ok(SyntheticData { train, test, test_answers, memory })
}
