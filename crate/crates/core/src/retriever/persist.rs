//! Binary index file, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "RATIDX\0\0"
//! version    u32      1
//! k1, b      f64, f64
//! n_docs     u32, then n_docs × u32 document lengths
//! n_terms    u32, then per term in byte order:
//!            u32 byte length, UTF-8 bytes, u32 posting count,
//!            posting count × (u32 entry id, u32 term frequency)
//! ```
//!
//! The average document length is recomputed on load, so a reload followed
//! by a save reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Bm25Params, Posting, RetrievalError, Result, TmIndex};

const MAGIC: &[u8; 8] = b"RATIDX\0\0";
const VERSION: u32 = 1;

impl TmIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.params.k1.to_le_bytes());
        out.extend_from_slice(&self.params.b.to_le_bytes());
        out.extend_from_slice(&(self.doc_lengths.len() as u32).to_le_bytes());
        for l in &self.doc_lengths {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&(self.postings.len() as u32).to_le_bytes());
        for (term, postings) in &self.postings {
            out.extend_from_slice(&(term.len() as u32).to_le_bytes());
            out.extend_from_slice(term.as_bytes());
            out.extend_from_slice(&(postings.len() as u32).to_le_bytes());
            for p in postings {
                out.extend_from_slice(&p.entry.to_le_bytes());
                out.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(RetrievalError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(RetrievalError::Format(format!("unsupported version {version}")));
        }
        let params = Bm25Params { k1: r.f64()?, b: r.f64()? };
        let n_docs = r.u32()? as usize;
        if n_docs == 0 {
            return Err(RetrievalError::EmptyMemory);
        }
        let doc_lengths = (0..n_docs).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n_terms = r.u32()? as usize;
        let mut postings = BTreeMap::new();
        let mut previous: Option<String> = None;
        for _ in 0..n_terms {
            let len = r.u32()? as usize;
            let term = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| RetrievalError::Format("term is not UTF-8".into()))?;
            if previous.as_ref().is_some_and(|p| *p >= term) {
                return Err(RetrievalError::Format("terms not in sorted order".into()));
            }
            let count = r.u32()? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let p = Posting { entry: r.u32()?, tf: r.u32()? };
                if p.entry as usize >= n_docs || list.last().is_some_and(|q: &Posting| q.entry >= p.entry) {
                    return Err(RetrievalError::Format(format!("bad posting list for {term:?}")));
                }
                list.push(p);
            }
            previous = Some(term.clone());
            postings.insert(term, list);
        }
        if r.pos != bytes.len() {
            return Err(RetrievalError::Format("trailing bytes".into()));
        }
        Ok(Self::from_parts(postings, doc_lengths, params))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| RetrievalError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| RetrievalError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| RetrievalError::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
