//! `key = value` run configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key must be claimed by one of the sections being configured;
//! unknown and duplicate keys are errors that name the key.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::model::ModelConfig;
use crate::{Error, Result};

/// A configuration section that accepts some of the keys of a file.
pub trait Section {
    /// Apply one setting. Returns `Ok(false)` if the key is not ours.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    /// Current settings, in a stable order, formatted so that `set` reads them back.
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

/// Parse `value` for `key`, with an error naming the key.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Parse the lines of a config file into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: missing key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("{k}: set more than once")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Apply every pair to the first section that claims it, then validate all sections.
pub fn apply(pairs: &[(String, String)], sections: &mut [&mut dyn Section]) -> Result<()> {
    for (k, v) in pairs {
        let mut claimed = false;
        for s in sections.iter_mut() {
            if s.set(k, v)? {
                claimed = true;
                break;
            }
        }
        if !claimed {
            return Err(Error::Config(format!("{k}: unknown key")));
        }
    }
    sections.iter().try_for_each(|s| s.validate())
}

pub fn apply_text(text: &str, sections: &mut [&mut dyn Section]) -> Result<()> {
    apply(&parse_pairs(text)?, sections)
}

pub fn apply_file(path: impl AsRef<Path>, sections: &mut [&mut dyn Section]) -> Result<()> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    apply_text(&text, sections)
}

/// Render sections back into config file text.
pub fn render(sections: &[&dyn Section]) -> String {
    let mut out = String::new();
    for s in sections {
        for (k, v) in s.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}

impl Section for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "enc_layers" => self.enc_layers = parse_value(key, value)?,
            "dec_layers" => self.dec_layers = parse_value(key, value)?,
            "d_model" => self.d_model = parse_value(key, value)?,
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "d_ff" => self.d_ff = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "variant" => self.variant = value.parse()?,
            "k" => self.k = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            ("k", self.k.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("dropout", self.dropout.to_string()),
            ("max_len", self.max_len.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        ModelConfig::validate(self)
    }
}
