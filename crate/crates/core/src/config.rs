//! Line-oriented `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Each key may appear once, and
//! every key must be consumed by the reader: leftovers are reported as
//! unknown.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries
                .insert(key.to_string(), (i + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(KvFile { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: bad value for `{key}`: {e}"))),
        }
    }

    /// Like [`take`](Self::take) but falls back to `default`.
    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(raw) = self.take::<String>(key)? else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::Config(format!("bad list item `{s}` for `{key}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails if any key was never taken.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
    }
}

/// Renders `key = value` lines.
pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let mut kv = KvFile::parse("# header\n depth = 2 # inline\n\nname=vif\n").unwrap();
        assert_eq!(kv.take::<usize>("depth").unwrap(), Some(2));
        assert_eq!(kv.take::<String>("name").unwrap().as_deref(), Some("vif"));
        assert_eq!(kv.take::<usize>("missing").unwrap(), None);
        kv.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_an_error() {
        let kv = KvFile::parse("depht = 2\n").unwrap();
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("depht"), "{err}");
    }

    #[test]
    fn duplicates_and_garbage_rejected() {
        assert!(KvFile::parse("a = 1\na = 2\n").is_err());
        assert!(KvFile::parse("just words\n").is_err());
        let mut kv = KvFile::parse("a = x\n").unwrap();
        assert!(kv.take::<u32>("a").is_err());
    }

    #[test]
    fn lists() {
        let mut kv = KvFile::parse("drops = 10, 20\nnone =\n").unwrap();
        assert_eq!(kv.take_list::<u64>("drops").unwrap(), Some(vec![10, 20]));
        assert_eq!(kv.take_list::<u64>("none").unwrap(), Some(vec![]));
    }
}
