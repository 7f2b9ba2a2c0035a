use std::collections::BTreeMap;

use thiserror::Error;

use super::lexicon::normalize_phrase;

#[derive(Debug, Error, PartialEq)]
pub enum SynonymError {
    #[error("line {line}: expected two columns (surface, canonical)")]
    Columns { line: usize },
    #[error("line {line}: surface {surface:?} already maps to {existing:?}")]
    Conflict {
        line: usize,
        surface: String,
        existing: String,
    },
}

/// Many-to-one map from surface forms to canonical class names.
///
/// Keys and values are stored lowercased; every canonical name resolves to
/// itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    map: BTreeMap<String, String>,
}

impl SynonymTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table that only knows the given classes.
    pub fn from_classes<'a>(classes: impl IntoIterator<Item = &'a str>) -> Self {
        let mut t = Self::new();
        for c in classes {
            t.add_class(c);
        }
        t
    }

    pub fn add_class(&mut self, class: &str) {
        let c = normalize_phrase(class);
        self.map.entry(c.clone()).or_insert(c);
    }

    /// Maps `surface` to `canonical`. Returns the previous target if the
    /// surface was already mapped to a different class.
    pub fn insert(&mut self, surface: &str, canonical: &str) -> Option<String> {
        let canonical = normalize_phrase(canonical);
        self.add_class(&canonical);
        let surface = normalize_phrase(surface);
        match self.map.get(&surface) {
            Some(existing) if *existing != canonical => Some(existing.clone()),
            _ => {
                self.map.insert(surface, canonical);
                None
            }
        }
    }

    /// Case-insensitive lookup.
    pub fn resolve(&self, surface: &str) -> Option<&str> {
        self.map.get(&normalize_phrase(surface)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Surface forms made of more than one word.
    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.map.keys().filter(|k| k.contains(' ')).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses the two-column text format: `surface<TAB>canonical`, one pair
    /// per line. Blank lines are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self, SynonymError> {
        let mut t = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(surface), Some(canonical), None) = (cols.next(), cols.next(), cols.next())
            else {
                return Err(SynonymError::Columns { line: idx + 1 });
            };
            if surface.trim().is_empty() || canonical.trim().is_empty() {
                return Err(SynonymError::Columns { line: idx + 1 });
            }
            if let Some(existing) = t.insert(surface, canonical) {
                return Err(SynonymError::Conflict {
                    line: idx + 1,
                    surface: normalize_phrase(surface),
                    existing,
                });
            }
        }
        Ok(t)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, c) in &self.map {
            out.push_str(s);
            out.push('\t');
            out.push_str(c);
            out.push('\n');
        }
        out
    }
}
