//! Joint source/target byte-pair vocabulary.
//!
//! Text is first rewritten so every space becomes the boundary marker `▁`
//! and a marker is prepended to the line, then split into words that each
//! start with a marker. Merges never cross word boundaries. Decoding maps
//! markers back to spaces and drops the single leading one, which makes
//! `decode(encode(t)) == t` for any text over known characters.
//!
//! # Vocabulary file
//!
//! ```text
//! ratnmt-vocab 1
//! <token count> <merge count>
//! <token 0>            (one token per line; the line index is the id)
//! ...
//! <left> <right>       (one merge per line, in application order)
//! ```
//!
//! Tokens never contain a space, so a single space separates merge halves.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const UNK: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<s>", "</s>", "<sep>", "<unk>"];
pub const NUM_SPECIALS: usize = SPECIAL_TOKENS.len();
pub const BOUNDARY: char = '▁';

const HEADER: &str = "ratnmt-vocab 1";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TokenizerError {
    #[error("tokenizer: training corpus is empty")]
    EmptyCorpus,
    #[error("tokenizer: target size {target} is too small, the minimum for this corpus is {minimum}")]
    TooSmall { target: usize, minimum: usize },
    #[error("tokenizer: id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("tokenizer: malformed vocabulary file: {0}")]
    Format(String),
    #[error("tokenizer: {0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, TokenizerError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

fn words_of(text: &str) -> Vec<String> {
    let mut marked = String::with_capacity(text.len() + 3);
    marked.push(BOUNDARY);
    for ch in text.chars() {
        marked.push(if ch == ' ' { BOUNDARY } else { ch });
    }
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in marked.chars() {
        if ch == BOUNDARY && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        current.push(ch);
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s) {
            return Err(TokenizerError::Format("special tokens must occupy ids 0..5".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::Format(format!("duplicate token {t:?}")));
            }
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                ids.get(s).copied().ok_or_else(|| TokenizerError::Format(format!("merge references unknown token {s:?}")))
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let merged = lookup(&format!("{l}{r}"))?;
            ranks.entry((li, ri)).or_insert((rank, merged));
        }
        Ok(Self { tokens, ids, merges, ranks })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in words_of(text) {
            let mut symbols: Vec<u32> = word.chars().map(|c| self.id(c.encode_utf8(&mut [0; 4])).unwrap_or(UNK)).collect();
            loop {
                let best = symbols
                    .windows(2)
                    .enumerate()
                    .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&(rank, merged)| (rank, i, merged)))
                    .min();
                let Some((_, i, merged)) = best else { break };
                symbols[i] = merged;
                symbols.remove(i + 1);
            }
            out.extend(symbols);
        }
        out
    }

    /// Special tokens are dropped, except `<unk>` which decodes to U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::IdOutOfRange { id, size: self.len() })?;
            match id {
                UNK => s.push('\u{FFFD}'),
                _ if Self::is_special(id) => {}
                _ => s.push_str(tok),
            }
        }
        let text: String = s.chars().map(|c| if c == BOUNDARY { ' ' } else { c }).collect();
        Ok(text.strip_prefix(' ').map(str::to_owned).unwrap_or(text))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n{} {}\n", self.tokens.len(), self.merges.len());
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        if lines.next() != Some(HEADER) {
            return Err(TokenizerError::Format(format!("missing header {HEADER:?}")));
        }
        let counts = lines.next().ok_or_else(|| TokenizerError::Format("missing counts line".into()))?;
        let parsed: Vec<usize> = counts.split(' ').map(|c| c.parse::<usize>()).collect::<std::result::Result<_, _>>()
            .map_err(|_| TokenizerError::Format(format!("bad counts line {counts:?}")))?;
        let [n_tokens, n_merges] = parsed[..] else {
            return Err(TokenizerError::Format(format!("bad counts line {counts:?}")));
        };
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            tokens.push(lines.next().ok_or_else(|| TokenizerError::Format("truncated token list".into()))?.to_string());
        }
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = lines.next().ok_or_else(|| TokenizerError::Format("truncated merge list".into()))?;
            let (l, r) = line.split_once(' ').ok_or_else(|| TokenizerError::Format(format!("bad merge line {line:?}")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        Self::from_parts(tokens, merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| TokenizerError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TokenizerError::Io(e.to_string()))?;
        Self::from_text(&text)
    }
}

/// Learn merges over `corpus` (train on source and target lines together)
/// until the vocabulary holds `target_size` tokens or no pair is left.
///
/// The most frequent adjacent pair wins; ties go to the lexicographically
/// smallest `(left, right)` pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocab> {
    let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        let line = line.as_ref().trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        for w in words_of(line) {
            *word_counts.entry(w).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut alphabet: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let minimum = NUM_SPECIALS + alphabet.len();
    if target_size < minimum {
        return Err(TokenizerError::TooSmall { target: target_size, minimum });
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    let mut ids: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    let mut words: Vec<(Vec<u32>, usize)> = word_counts
        .iter()
        .map(|(w, &n)| (w.chars().map(|c| ids[&c.to_string()]).collect(), n))
        .collect();
    let mut merges = Vec::new();

    while tokens.len() < target_size {
        let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
            }
        }
        let Some((&(l, r), _)) = pair_counts.iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                let kb = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                ka.cmp(&kb)
            })
        }) else {
            break;
        };
        let merged = format!("{}{}", tokens[l as usize], tokens[r as usize]);
        let merged_id = match ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                tokens.push(merged.clone());
                ids.insert(merged, id);
                id
            }
        };
        merges.push((tokens[l as usize].clone(), tokens[r as usize].clone()));
        for (syms, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == l && syms[i + 1] == r {
                    syms[i] = merged_id;
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
    }
    Vocab::from_parts(tokens, merges)
}
