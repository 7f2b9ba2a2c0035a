use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

const BUNDLED: &str = include_str!("../../data/lexicon.txt");

/// Sections whose entries are one per line (entries may contain spaces).
const LINE_SECTIONS: &[&str] = &["multiword_prepositions", "symmetric"];

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("line {line}: entry outside of any [section]")]
    NoSection { line: usize },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
}

/// Closed word classes consulted by the caption parser.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    pub articles: HashSet<String>,
    pub auxiliaries: HashSet<String>,
    pub conjunctions: HashSet<String>,
    pub prepositions: HashSet<String>,
    pub multiword_prepositions: BTreeSet<String>,
    pub verbs: HashSet<String>,
    pub ing_nouns: HashSet<String>,
    pub symmetric: BTreeSet<String>,
}

impl Lexicon {
    /// The lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled lexicon is well-formed")
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let Some(name) = section.as_deref() else {
                return Err(LexiconError::NoSection { line: idx + 1 });
            };
            let entries: Vec<String> = if LINE_SECTIONS.contains(&name) {
                vec![normalize_phrase(line)]
            } else {
                line.split_whitespace().map(str::to_lowercase).collect()
            };
            for e in entries {
                match name {
                    "articles" => lex.articles.insert(e),
                    "auxiliaries" => lex.auxiliaries.insert(e),
                    "conjunctions" => lex.conjunctions.insert(e),
                    "prepositions" => lex.prepositions.insert(e),
                    "multiword_prepositions" => lex.multiword_prepositions.insert(e),
                    "verbs" => lex.verbs.insert(e),
                    "ing_nouns" => lex.ing_nouns.insert(e),
                    "symmetric" => lex.symmetric.insert(e),
                    other => {
                        return Err(LexiconError::UnknownSection {
                            line: idx + 1,
                            name: other.to_string(),
                        })
                    }
                };
            }
        }
        Ok(lex)
    }

    pub fn is_verb(&self, word: &str) -> bool {
        self.verbs.contains(word)
            || (word.len() > 4 && word.ends_with("ing") && !self.ing_nouns.contains(word))
    }

    pub fn is_symmetric(&self, relation: &str) -> bool {
        self.symmetric.contains(relation)
    }
}

/// Lowercases and collapses internal whitespace.
pub fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_parses() {
        let lex = Lexicon::bundled();
        assert!(lex.articles.contains("the"));
        assert!(lex.auxiliaries.contains("is"));
        assert!(lex.multiword_prepositions.contains("in front of"));
        assert!(lex.is_symmetric("next to"));
        assert!(lex.is_verb("riding"));
        assert!(lex.is_verb("holds"));
        assert!(!lex.is_verb("building"));
        assert!(!lex.is_verb("horse"));
    }

    #[test]
    fn rejects_unknown_section() {
        assert_eq!(
            Lexicon::parse("[nouns]\ncat").unwrap_err(),
            LexiconError::UnknownSection {
                line: 2,
                name: "nouns".into()
            }
        );
        assert_eq!(
            Lexicon::parse("cat").unwrap_err(),
            LexiconError::NoSection { line: 1 }
        );
    }
}
