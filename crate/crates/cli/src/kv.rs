//! Line-oriented `key = value` text with optional `[section]` headers.
//!
//! `#` starts a comment. Keys inside a section are stored as `section.key`.
//! Duplicate keys are rejected so that a typo can't silently shadow a value.

use std::collections::BTreeMap;

use crate::failure::Failure;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    /// Section names in order of first appearance (the unnamed top level excluded).
    pub sections: Vec<String>,
    pub entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, Failure> {
        let mut out = KvFile::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if name.is_empty() {
                    return Err(Failure::data(format!("{origin}:{}: empty section name", n + 1)));
                }
                if !out.sections.contains(&name) {
                    out.sections.push(name.clone());
                }
                section = Some(name);
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::data(format!("{origin}:{}: expected `key = value`", n + 1)));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(Failure::data(format!("{origin}:{}: missing key", n + 1)));
            }
            let key = match &section {
                Some(s) => format!("{s}.{k}"),
                None => k.to_string(),
            };
            if out.entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Failure::data(format!("{origin}:{}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(out)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Failure::usage(format!("bad value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    /// All entries of `section`, with the prefix stripped.
    pub fn section(&self, section: &str) -> BTreeMap<&str, &str> {
        let prefix = format!("{section}.");
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|k| (k, v.as_str())))
            .collect()
    }
}

/// Renders entries as `key=value` lines, in the given order.
pub fn render<'a>(entries: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_prefix_keys() {
        let f = KvFile::parse("seed = 4\n[train]\nepochs = 3 # short\n\n[mine]\ntheta=0.5\n", "t").unwrap();
        assert_eq!(f.get("seed"), Some("4"));
        assert_eq!(f.get("train.epochs"), Some("3"));
        assert_eq!(f.sections, vec!["train", "mine"]);
        assert_eq!(f.section("mine").get("theta"), Some(&"0.5"));
        assert_eq!(f.parsed::<f64>("mine.theta").unwrap(), Some(0.5));
    }

    #[test]
    fn rejects_duplicates_and_junk() {
        assert!(KvFile::parse("a = 1\na = 2\n", "t").is_err());
        assert!(KvFile::parse("just words\n", "t").is_err());
    }
}
