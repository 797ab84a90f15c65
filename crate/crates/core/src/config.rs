//! Flat `key=value` configuration text.

use std::str::FromStr;

use crate::error::{BasenError, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// whitespace around keys and values is trimmed.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BasenError::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(BasenError::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

pub(crate) fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| BasenError::Config(format!("invalid value {v:?} for {key}")))
}

pub(crate) fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| value(key, p.trim())).collect()
}

pub(crate) fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Settings that can be updated one key at a time.
pub trait KeyValue {
    /// Applies one setting. Returns `false` for keys this type does not own.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    /// Every key with its current value, in a stable order.
    fn pairs(&self) -> Vec<(String, String)>;

    fn to_kv_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Applies `pairs` to `target`, rejecting keys it does not own.
pub fn apply_all<T: KeyValue>(target: &mut T, pairs: &[(String, String)]) -> Result<()> {
    for (k, v) in pairs {
        if !target.set(k, v)? {
            return Err(BasenError::Config(format!("unknown key {k}")));
        }
    }
    Ok(())
}
