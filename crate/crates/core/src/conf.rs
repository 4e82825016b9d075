//! Sectioned key-value text used by pipeline configs, scenario files and
//! corpus specs.
//!
//! ```text
//! # comment
//! [dnsbl]
//! dnsbl_zones = relays.ordb.org, bl.spamcop.net
//! reject_on_dnsbl_hit = on
//! [greylist]
//! greylist_min_retry = 10s
//! ```
//!
//! Lists are comma-separated with surrounding whitespace trimmed, booleans
//! are `on`/`off`, durations are integers with an `s`, `m` or `h` suffix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("[{section}] {key}: {reason}")]
    Value {
        section: String,
        key: String,
        reason: String,
    },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("[{section}] unknown key `{key}`")]
    UnknownKey { section: String, key: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    name: String,
    entries: BTreeMap<String, String>,
}

impl Section {
    fn value_err(&self, key: &str, reason: impl Into<String>) -> ConfError {
        ConfError::Value {
            section: self.name.clone(),
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on any key outside `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<(), ConfError> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ConfError::UnknownKey {
                section: self.name.clone(),
                key: k.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.raw(key).map(str::to_string)
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>, ConfError> {
        self.raw(key)
            .map(|v| match v {
                "on" => Ok(true),
                "off" => Ok(false),
                other => Err(self.value_err(key, format!("expected on/off, got `{other}`"))),
            })
            .transpose()
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| self.value_err(key, e.to_string())))
            .transpose()
    }

    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(split_list)
    }

    pub fn parsed_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfError>
    where
        T::Err: std::fmt::Display,
    {
        self.list(key)
            .map(|items| {
                items
                    .iter()
                    .map(|i| i.parse::<T>().map_err(|e| self.value_err(key, format!("`{i}`: {e}"))))
                    .collect()
            })
            .transpose()
    }

    /// Duration in seconds.
    pub fn duration(&self, key: &str) -> Result<Option<u64>, ConfError> {
        self.raw(key)
            .map(|v| parse_duration(v).map_err(|e| self.value_err(key, e)))
            .transpose()
    }

    /// Byte size; accepts a `KB` or `MB` suffix (binary multiples).
    pub fn size(&self, key: &str) -> Result<Option<u64>, ConfError> {
        self.raw(key)
            .map(|v| parse_size(v).map_err(|e| self.value_err(key, e)))
            .transpose()
    }
}

pub fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn parse_duration(value: &str) -> Result<u64, String> {
    let v = value.trim();
    let (digits, unit) = match v.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        Some((i, _)) => v.split_at(i),
        None => (v, "s"),
    };
    let n: u64 = digits
        .parse()
        .map_err(|_| format!("invalid duration `{value}`"))?;
    let scale = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        _ => return Err(format!("invalid duration unit in `{value}` (use s, m or h)")),
    };
    Ok(n * scale)
}

pub fn format_duration(secs: u64) -> String {
    if secs > 0 && secs % 3600 == 0 {
        format!("{}h", secs / 3600)
    } else if secs > 0 && secs % 60 == 0 {
        format!("{}m", secs / 60)
    } else {
        format!("{secs}s")
    }
}

pub fn parse_size(value: &str) -> Result<u64, String> {
    let v = value.trim();
    let upper = v.to_ascii_uppercase();
    let (digits, scale) = if let Some(d) = upper.strip_suffix("KB") {
        (d, 1024)
    } else if let Some(d) = upper.strip_suffix("MB") {
        (d, 1024 * 1024)
    } else {
        (upper.as_str(), 1)
    };
    digits
        .trim()
        .parse::<u64>()
        .map(|n| n * scale)
        .map_err(|_| format!("invalid size `{value}`"))
}

pub fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Conf {
    sections: BTreeMap<String, Section>,
}

impl Conf {
    pub fn parse(text: &str) -> Result<Self, ConfError> {
        let mut conf = Conf::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let syntax = |reason: &str| ConfError::Syntax {
                line: i + 1,
                reason: reason.to_string(),
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| syntax("unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(syntax("empty section name"));
                }
                conf.sections.entry(name.to_string()).or_insert_with(|| Section {
                    name: name.to_string(),
                    entries: BTreeMap::new(),
                });
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(syntax("empty key"));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| syntax("key outside of any section"))?;
            let entries = &mut conf.sections.get_mut(section).expect("section registered").entries;
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(syntax(&format!("duplicate key `{key}`")));
            }
        }
        Ok(conf)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.get(name)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    /// Errors on any section outside `allowed`.
    pub fn expect_sections(&self, allowed: &[&str]) -> Result<(), ConfError> {
        match self.sections.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ConfError::UnknownSection(k.clone())),
            None => Ok(()),
        }
    }
}

/// Accumulates rendered config text section by section.
#[derive(Debug, Default)]
pub struct ConfWriter {
    out: String,
}

impl ConfWriter {
    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        let _ = writeln!(self.out, "[{name}]");
        self
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let value = value.to_string();
        if value.is_empty() {
            let _ = writeln!(self.out, "{key} =");
        } else {
            let _ = writeln!(self.out, "{key} = {value}");
        }
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}
