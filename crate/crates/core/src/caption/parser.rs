//! Deterministic pattern parser turning captions into
//! `(subject, relation, object)` triplets.
//!
//! Tokens are classified against a [`Lexicon`], grouped into noun-phrase and
//! relation chunks, and triplets are read off `NP REL NP` sequences. Noun
//! phrases reduce to their last content word; auxiliaries are dropped from
//! relations; prepositions stay attached to the verb they follow.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::lexicon::{normalize_phrase, Lexicon};
use super::synonyms::SynonymTable;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParsedTriplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl ParsedTriplet {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Self {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Article,
    Aux,
    Conj,
    Comma,
    Stop,
    Prep(String),
    Verb(String),
    Content(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Chunk {
    Np(String),
    Rel(Vec<String>),
    Conj,
    Stop,
}

/// Caption parser over a lexicon plus an optional set of multi-word entity
/// phrases (e.g. "traffic light") that are kept as single tokens.
#[derive(Debug, Clone)]
pub struct CaptionParser {
    lexicon: Lexicon,
    /// Multi-word phrases as token sequences, longest first.
    phrases: Vec<Vec<String>>,
    phrase_is_prep: Vec<bool>,
}

impl Default for CaptionParser {
    fn default() -> Self {
        Self::new(Lexicon::bundled())
    }
}

impl CaptionParser {
    pub fn new(lexicon: Lexicon) -> Self {
        let mut p = Self {
            lexicon,
            phrases: Vec::new(),
            phrase_is_prep: Vec::new(),
        };
        p.rebuild_phrases(std::iter::empty());
        p
    }

    /// Parser that also recognizes the multi-word surface forms of `syn`.
    pub fn with_synonyms(lexicon: Lexicon, syn: &SynonymTable) -> Self {
        let mut p = Self::new(lexicon);
        p.rebuild_phrases(syn.phrases().map(str::to_string));
        p
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    fn rebuild_phrases(&mut self, entity_phrases: impl Iterator<Item = String>) {
        let mut all: BTreeSet<(String, bool)> = self
            .lexicon
            .multiword_prepositions
            .iter()
            .map(|p| (p.clone(), true))
            .collect();
        for e in entity_phrases {
            let e = normalize_phrase(&e);
            if !self.lexicon.multiword_prepositions.contains(&e) {
                all.insert((e, false));
            }
        }
        let mut entries: Vec<(Vec<String>, bool)> = all
            .into_iter()
            .map(|(p, is_prep)| (p.split(' ').map(str::to_string).collect(), is_prep))
            .filter(|(words, _): &(Vec<String>, bool)| words.len() > 1)
            .collect();
        // Longest match wins; ties keep the lexicographic order from the set.
        entries.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        self.phrases = entries.iter().map(|(w, _)| w.clone()).collect();
        self.phrase_is_prep = entries.iter().map(|(_, p)| *p).collect();
    }

    pub fn parse(&self, text: &str) -> Vec<ParsedTriplet> {
        let tokens = self.tokenize(text);
        let chunks = chunk(tokens);
        read_triplets(chunks)
    }

    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut raw: Vec<String> = Vec::new();
        let mut word = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() || ((ch == '\'' || ch == '-') && !word.is_empty()) {
                word.extend(ch.to_lowercase());
                continue;
            }
            if !word.is_empty() {
                raw.push(std::mem::take(&mut word));
            }
            match ch {
                ',' | ';' | ':' => raw.push(",".into()),
                '.' | '!' | '?' => raw.push(".".into()),
                _ => {}
            }
        }
        if !word.is_empty() {
            raw.push(word);
        }

        let mut out = Vec::with_capacity(raw.len());
        let mut i = 0;
        'outer: while i < raw.len() {
            for (k, phrase) in self.phrases.iter().enumerate() {
                let n = phrase.len();
                if i + n <= raw.len() && raw[i..i + n] == phrase[..] {
                    let joined = phrase.join(" ");
                    out.push(if self.phrase_is_prep[k] {
                        Token::Prep(joined)
                    } else {
                        Token::Content(joined)
                    });
                    i += n;
                    continue 'outer;
                }
            }
            out.push(self.classify(&raw[i]));
            i += 1;
        }
        out
    }

    fn classify(&self, w: &str) -> Token {
        let lex = &self.lexicon;
        match w {
            "," => Token::Comma,
            "." => Token::Stop,
            _ if lex.articles.contains(w) => Token::Article,
            _ if lex.auxiliaries.contains(w) => Token::Aux,
            _ if lex.conjunctions.contains(w) => Token::Conj,
            _ if lex.prepositions.contains(w) => Token::Prep(w.to_string()),
            _ if lex.is_verb(w) => Token::Verb(w.to_string()),
            _ => Token::Content(w.to_string()),
        }
    }
}

fn chunk(tokens: Vec<Token>) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut np: Vec<String> = Vec::new();
    let mut rel: Option<Vec<String>> = None;

    fn flush(chunks: &mut Vec<Chunk>, np: &mut Vec<String>, rel: &mut Option<Vec<String>>) {
        if let Some(head) = np.pop() {
            chunks.push(Chunk::Np(head));
            np.clear();
        }
        if let Some(r) = rel.take() {
            chunks.push(Chunk::Rel(r));
        }
    }

    for tok in tokens {
        match tok {
            Token::Article => flush(&mut chunks, &mut np, &mut rel),
            Token::Content(w) => {
                if let Some(r) = rel.take() {
                    chunks.push(Chunk::Rel(r));
                }
                np.push(w);
            }
            Token::Aux => {
                flush(&mut chunks, &mut np, &mut rel);
                rel = Some(Vec::new());
            }
            Token::Verb(w) | Token::Prep(w) => {
                if !np.is_empty() {
                    flush(&mut chunks, &mut np, &mut rel);
                }
                rel.get_or_insert_with(Vec::new).push(w);
            }
            Token::Conj | Token::Comma => {
                flush(&mut chunks, &mut np, &mut rel);
                chunks.push(Chunk::Conj);
            }
            Token::Stop => {
                flush(&mut chunks, &mut np, &mut rel);
                chunks.push(Chunk::Stop);
            }
        }
    }
    flush(&mut chunks, &mut np, &mut rel);
    chunks
}

fn read_triplets(chunks: Vec<Chunk>) -> Vec<ParsedTriplet> {
    let mut out = Vec::new();
    let mut clause_subject: Option<String> = None;
    let mut last_np: Option<String> = None;
    let mut pending: Option<(String, String)> = None;
    let mut after_conj = false;

    for c in chunks {
        match c {
            Chunk::Np(head) => {
                if let Some((subject, relation)) = pending.take() {
                    out.push(ParsedTriplet {
                        subject,
                        relation,
                        object: head.clone(),
                    });
                } else if after_conj || clause_subject.is_none() {
                    clause_subject = Some(head.clone());
                }
                last_np = Some(head);
                after_conj = false;
            }
            Chunk::Rel(words) => {
                let subject = if after_conj {
                    clause_subject.clone()
                } else {
                    last_np.clone()
                };
                after_conj = false;
                // A bare copula ("the sky is blue") carries no relation.
                pending = if words.is_empty() {
                    None
                } else {
                    subject.map(|s| (s, words.join(" ")))
                };
            }
            Chunk::Conj => {
                pending = None;
                after_conj = true;
            }
            Chunk::Stop => {
                pending = None;
                clause_subject = None;
                last_np = None;
                after_conj = false;
            }
        }
    }
    out
}

/// Parses with the bundled lexicon and no entity phrases.
pub fn parse_caption(text: &str) -> Vec<ParsedTriplet> {
    CaptionParser::default().parse(text)
}
