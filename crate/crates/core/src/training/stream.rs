use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec::Exec;
use crate::retriever::{TmIndex, TranslationMemory};
use crate::tokenizer::Vocab;
use crate::{Error, Result};

/// One tokenized training pair with its fuzzy-match targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    /// Entry id of the pair in the training corpus.
    pub id: usize,
    pub src: Vec<u32>,
    /// Fuzzy-match targets, best first.
    pub matches: Vec<Vec<u32>>,
    pub match_ids: Vec<usize>,
    /// Target without BOS/EOS.
    pub tgt: Vec<u32>,
}

impl TrainingExample {
    /// Decoder positions scored by the loss (target plus EOS).
    pub fn tgt_tokens(&self) -> usize {
        self.tgt.len() + 1
    }
}

/// Position in the batch sequence: batch `index` of epoch `epoch`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BatchCursor {
    pub epoch: u64,
    pub index: u64,
}

/// Training examples plus the deterministic batch order derived from a seed.
#[derive(Clone, Debug)]
pub struct TrainingStream {
    pub examples: Vec<TrainingExample>,
    pub batch_src_tokens: usize,
    pub batch_tgt_tokens: usize,
    pub seed: u64,
}

/// Tokenize `corpus` and attach the top-`k` matches of every pair, retrieved
/// from `index` (built over the same corpus) with the pair itself excluded.
/// Sources are cut to `max_len` tokens and targets to `max_len − 1`.
#[allow(clippy::too_many_arguments)]
pub fn build_training_stream(
    corpus: &TranslationMemory,
    index: &TmIndex,
    vocab: &Vocab,
    k: usize,
    max_len: usize,
    seed: u64,
    budgets: (usize, usize),
    exec: Exec,
) -> Result<TrainingStream> {
    if index.len() != corpus.len() {
        return Err(Error::Training(format!("index covers {} entries, corpus has {}", index.len(), corpus.len())));
    }
    if max_len < 2 {
        return Err(Error::Training("max_len must be at least 2".into()));
    }
    let examples = exec.map_range(corpus.len(), |id| {
        let entry = &corpus.entries()[id];
        let found = index.retrieve(corpus, &entry.source, k, Some(id));
        let mut src = vocab.encode(&entry.source);
        src.truncate(max_len);
        let mut tgt = vocab.encode(&entry.target);
        tgt.truncate(max_len - 1);
        let (matches, match_ids) = found
            .matches
            .iter()
            .map(|m| (vocab.encode(&m.target), m.entry_id))
            .filter(|(ids, _)| !ids.is_empty())
            .unzip();
        TrainingExample { id, src, matches, match_ids, tgt }
    });
    Ok(TrainingStream { examples, batch_src_tokens: budgets.0, batch_tgt_tokens: budgets.1, seed })
}

/// Tokenize held-out `pairs` and attach their top-`k` matches from a
/// separate memory. Nothing is excluded; truncation is as in
/// [`build_training_stream`].
#[allow(clippy::too_many_arguments)]
pub fn build_heldout_examples(
    pairs: &TranslationMemory,
    memory: &TranslationMemory,
    index: &TmIndex,
    vocab: &Vocab,
    k: usize,
    max_len: usize,
    exec: Exec,
) -> Result<Vec<TrainingExample>> {
    if index.len() != memory.len() {
        return Err(Error::Training(format!("index covers {} entries, memory has {}", index.len(), memory.len())));
    }
    if max_len < 2 {
        return Err(Error::Training("max_len must be at least 2".into()));
    }
    Ok(exec.map_range(pairs.len(), |id| {
        let entry = &pairs.entries()[id];
        let found = index.retrieve(memory, &entry.source, k, None);
        let mut src = vocab.encode(&entry.source);
        src.truncate(max_len);
        let mut tgt = vocab.encode(&entry.target);
        tgt.truncate(max_len - 1);
        let (matches, match_ids) = found
            .matches
            .iter()
            .map(|m| (vocab.encode(&m.target), m.entry_id))
            .filter(|(ids, _)| !ids.is_empty())
            .unzip();
        TrainingExample { id, src, matches, match_ids, tgt }
    }))
}

impl TrainingStream {
    /// Example indices of every batch of `epoch`: a seeded shuffle, then
    /// greedy filling until the next example would exceed either token
    /// budget (an example over budget on its own forms a batch).
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        let mut batches = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let (mut src, mut tgt) = (0, 0);
        for i in order {
            let e = &self.examples[i];
            let (s, t) = (e.src.len(), e.tgt_tokens());
            if !current.is_empty() && (src + s > self.batch_src_tokens || tgt + t > self.batch_tgt_tokens) {
                batches.push(std::mem::take(&mut current));
                src = 0;
                tgt = 0;
            }
            current.push(i);
            src += s;
            tgt += t;
        }
        if !current.is_empty() {
            batches.push(current);
        }
        batches
    }

    /// The batch at `cursor` and the cursor of the following batch.
    pub fn batch_at(&self, cursor: BatchCursor) -> Result<(Vec<usize>, BatchCursor)> {
        if self.examples.is_empty() {
            return Err(Error::Training("training stream is empty".into()));
        }
        let mut cursor = cursor;
        loop {
            let batches = self.epoch_batches(cursor.epoch);
            if let Some(b) = batches.get(cursor.index as usize) {
                let next = if cursor.index as usize + 1 == batches.len() {
                    BatchCursor { epoch: cursor.epoch + 1, index: 0 }
                } else {
                    BatchCursor { epoch: cursor.epoch, index: cursor.index + 1 }
                };
                return Ok((b.clone(), next));
            }
            cursor = BatchCursor { epoch: cursor.epoch + 1, index: 0 };
        }
    }
}
