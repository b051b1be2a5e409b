//! Translation memory storage and its two text formats:
//!
//! * TSV: one `source<TAB>target` pair per line,
//! * aligned files: line `i` of the source file pairs with line `i` of the
//!   target file.
//!
//! Blank lines are rejected rather than skipped, because entry ids are
//! line numbers.

use std::fs;
use std::path::Path;

use super::{RetrievalError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TmEntry {
    pub source: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TranslationMemory {
    entries: Vec<TmEntry>,
}

impl TranslationMemory {
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut entries = Vec::with_capacity(pairs.len());
        for (i, (source, target)) in pairs.into_iter().enumerate() {
            if source.trim().is_empty() || target.trim().is_empty() {
                return Err(RetrievalError::EmptyEntry(i));
            }
            entries.push(TmEntry { source, target });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TmEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&TmEntry> {
        self.entries.get(id)
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (src, tgt) = line.split_once('\t').ok_or_else(|| RetrievalError::Parse {
                line: i + 1,
                reason: "expected source<TAB>target".into(),
            })?;
            if tgt.contains('\t') {
                return Err(RetrievalError::Parse { line: i + 1, reason: "more than one tab".into() });
            }
            pairs.push((src.to_string(), tgt.to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.source);
            out.push('\t');
            out.push_str(&e.target);
            out.push('\n');
        }
        out
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_tsv(&read(path)?)
    }

    pub fn load_aligned(source_path: impl AsRef<Path>, target_path: impl AsRef<Path>) -> Result<Self> {
        let src = read(source_path)?;
        let tgt = read(target_path)?;
        let (s, t): (Vec<&str>, Vec<&str>) = (src.lines().collect(), tgt.lines().collect());
        if s.len() != t.len() {
            return Err(RetrievalError::Parse {
                line: s.len().min(t.len()) + 1,
                reason: format!("aligned files differ in length ({} vs {})", s.len(), t.len()),
            });
        }
        Self::from_pairs(s.into_iter().zip(t).map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }
}

fn read(path: impl AsRef<Path>) -> Result<String> {
    let p = path.as_ref();
    fs::read_to_string(p).map_err(|e| RetrievalError::Io(format!("{}: {e}", p.display())))
}
