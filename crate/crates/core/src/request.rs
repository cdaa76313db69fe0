//! Request processing: turns an unstructured full-text request into a
//! [`SemanticQuery`].
//!
//! Analysis is deliberately mechanical. Text is lowercased and split on every
//! non-alphanumeric character, tokens shorter than two characters are dropped
//! and stopwords are removed. The surviving keywords are classified against a
//! domain lexicon by overlap, and triple patterns over the subject variable
//! `?item` are synthesized from the raw token stream:
//!
//! * `in X`   becomes `(?item, located-in, x)`
//! * `with X` becomes `(?item, has-feature, x)`
//! * any other keyword `k` becomes `(?item, relates-to, k)`

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ITEM_VARIABLE: &str = "item";
pub const LOCATED_IN: &str = "located-in";
pub const HAS_FEATURE: &str = "has-feature";
pub const RELATES_TO: &str = "relates-to";
/// Domain returned when nothing in the lexicon overlaps the keywords.
pub const GENERAL_DOMAIN: &str = "general";

pub type Stopwords = HashSet<String>;
pub type Lexicon = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequestError {
    #[error("request text is empty")]
    EmptyRequest,
}

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Raw full-text request as handed to the personal agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRequest {
    pub request_id: String,
    pub text: String,
    pub issued_at: u64,
}

impl UserRequest {
    pub fn new(request_id: impl Into<String>, text: impl Into<String>, issued_at: u64) -> Result<Self, RequestError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(RequestError::EmptyRequest);
        }
        Ok(Self {
            request_id: request_id.into(),
            text,
            issued_at,
        })
    }
}

/// One slot of a triple pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Literal(String),
    /// Variable name without the leading `?`.
    Variable(String),
}

impl Term {
    pub fn literal(value: impl Into<String>) -> Self {
        Term::Literal(value.into())
    }

    pub fn variable(name: impl Into<String>) -> Self {
        Term::Variable(name.into())
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Term::Variable(_))
    }

    /// Parses the wire form: `?name` is a variable, anything else a literal.
    pub fn parse(s: &str) -> Result<Self, String> {
        let term = match s.strip_prefix('?') {
            Some(name) => Term::Variable(name.to_string()),
            None => Term::Literal(s.to_string()),
        };
        term.validate()?;
        Ok(term)
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Term::Variable(name) => {
                let mut chars = name.chars();
                let head_ok = chars.next().is_some_and(|c| c.is_ascii_lowercase());
                let tail_ok = chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
                if head_ok && tail_ok {
                    Ok(())
                } else {
                    Err(format!("invalid variable name ?{name}"))
                }
            }
            Term::Literal(value) => {
                if value.is_empty() {
                    Err("empty literal".into())
                } else if value.starts_with('?') {
                    Err(format!("literal {value:?} collides with variable syntax"))
                } else if value.to_lowercase() != *value {
                    Err(format!("literal {value:?} is not lowercase"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Literal(v) => f.write_str(v),
            Term::Variable(n) => write!(f, "?{n}"),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Term::parse(&s).map_err(de::Error::custom)
    }
}

/// `(subject, predicate, object)` with any slot possibly a variable.
/// Serialized as a three-element array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl TriplePattern {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }

    /// `(?item, predicate, object)` with literal predicate and object.
    pub fn about_item(predicate: &str, object: &str) -> Self {
        Self::new(
            Term::variable(ITEM_VARIABLE),
            Term::literal(predicate),
            Term::literal(object),
        )
    }

    /// True when no slot is a variable. Such a pattern is a fact check.
    pub fn is_fact_check(&self) -> bool {
        !(self.subject.is_variable() || self.predicate.is_variable() || self.object.is_variable())
    }

    pub fn slots(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

impl Serialize for TriplePattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut tup = serializer.serialize_tuple(3)?;
        tup.serialize_element(&self.subject)?;
        tup.serialize_element(&self.predicate)?;
        tup.serialize_element(&self.object)?;
        tup.end()
    }
}

impl<'de> Deserialize<'de> for TriplePattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (subject, predicate, object) = <(Term, Term, Term)>::deserialize(deserializer)?;
        Ok(Self::new(subject, predicate, object))
    }
}

/// A `key=value` restriction carried alongside the query, encoded as a
/// two-element array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint(pub String, pub String);

impl Constraint {
    pub fn key(&self) -> &str {
        &self.0
    }

    pub fn value(&self) -> &str {
        &self.1
    }

    /// Parses `key=value`; the key must be non-empty.
    pub fn parse(s: &str) -> Option<Self> {
        let (k, v) = s.split_once('=')?;
        let k = k.trim();
        (!k.is_empty()).then(|| Constraint(k.to_string(), v.trim().to_string()))
    }
}

/// Structured request produced by [`build_semantic_query`].
///
/// Field order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticQuery {
    pub request_id: String,
    pub domain: String,
    pub confidence: f64,
    pub keywords: Vec<String>,
    pub patterns: Vec<TriplePattern>,
    pub constraints: Vec<Constraint>,
}

impl SemanticQuery {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("semantic query serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let query: Self = serde_json::from_str(s).map_err(|e| e.to_string())?;
        query.validate()?;
        Ok(query)
    }

    /// Structural invariants that can be checked without the stopword list.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(format!("confidence {} outside [0,1]", self.confidence));
        }
        if self.domain.is_empty() {
            return Err("empty domain".into());
        }
        let mut seen = HashSet::new();
        for k in &self.keywords {
            if k.is_empty() || k.to_lowercase() != *k {
                return Err(format!("keyword {k:?} is not a lowercase token"));
            }
            if !seen.insert(k) {
                return Err(format!("duplicate keyword {k:?}"));
            }
        }
        if !self.keywords.is_empty() && self.patterns.is_empty() {
            return Err("keywords without patterns".into());
        }
        for p in &self.patterns {
            for t in p.slots() {
                t.validate()?;
            }
        }
        Ok(())
    }
}

/// Lowercased tokens of `text`, split on every non-alphanumeric character,
/// keeping only tokens of at least two characters. Stopwords are not removed.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2)
}

/// Ordered, duplicate-free, stopword-free keywords of `text`.
pub fn analyze(text: &str, stopwords: &Stopwords) -> Result<Vec<String>, RequestError> {
    if text.trim().is_empty() {
        return Err(RequestError::EmptyRequest);
    }
    let mut seen = HashSet::new();
    Ok(tokenize(text)
        .filter(|t| !stopwords.contains(t))
        .filter(|t| seen.insert(t.clone()))
        .collect())
}

/// Picks the lexicon domain with the largest keyword overlap ratio.
///
/// Ties go to the lexicographically smallest domain name. Zero overlap (or
/// no keywords) yields `("general", 0.0)`.
pub fn classify_domain(keywords: &[String], lexicon: &Lexicon) -> (String, f64) {
    let distinct: BTreeSet<&str> = keywords.iter().map(String::as_str).collect();
    let denom = keywords.len().max(1) as f64;
    let mut best: Option<(&str, usize)> = None;
    // BTreeMap iterates in name order, so strict > keeps the smallest name on ties.
    for (domain, terms) in lexicon {
        let hits = distinct.iter().filter(|k| terms.contains(**k)).count();
        if hits > best.map_or(0, |(_, h)| h) {
            best = Some((domain, hits));
        }
    }
    match best {
        Some((domain, hits)) => (domain.to_string(), (hits as f64 / denom).min(1.0)),
        None => (GENERAL_DOMAIN.to_string(), 0.0),
    }
}

fn phrase_predicate(token: &str) -> Option<&'static str> {
    match token {
        "in" => Some(LOCATED_IN),
        "with" => Some(HAS_FEATURE),
        _ => None,
    }
}

/// Synthesizes `?item` patterns from the token stream, in token order.
fn synthesize_patterns(tokens: &[String], keywords: &[String]) -> Vec<TriplePattern> {
    let keyword_set: HashSet<&str> = keywords.iter().map(String::as_str).collect();
    let mut phrases: Vec<(usize, TriplePattern)> = Vec::new();
    let mut plain: Vec<(usize, &str)> = Vec::new();
    let mut consumed: HashSet<&str> = HashSet::new();

    let mut i = 0;
    while i < tokens.len() {
        let token = tokens[i].as_str();
        if let (Some(pred), Some(next)) = (phrase_predicate(token), tokens.get(i + 1)) {
            if keyword_set.contains(next.as_str()) {
                phrases.push((i, TriplePattern::about_item(pred, next)));
                consumed.insert(next);
                i += 2;
                continue;
            }
        }
        if keyword_set.contains(token) {
            plain.push((i, token));
        }
        i += 1;
    }

    let mut ordered: Vec<(usize, TriplePattern)> = plain
        .into_iter()
        .filter(|(_, k)| !consumed.contains(k))
        .map(|(pos, k)| (pos, TriplePattern::about_item(RELATES_TO, k)))
        .chain(phrases)
        .collect();
    ordered.sort_by_key(|(pos, _)| *pos);

    let mut seen = HashSet::new();
    ordered
        .into_iter()
        .map(|(_, p)| p)
        .filter(|p| seen.insert(p.clone()))
        .collect()
}

/// Full request-processing step: analyze, classify, synthesize patterns.
pub fn build_semantic_query(
    request: &UserRequest,
    stopwords: &Stopwords,
    lexicon: &Lexicon,
) -> Result<SemanticQuery, RequestError> {
    let keywords = analyze(&request.text, stopwords)?;
    let (domain, confidence) = classify_domain(&keywords, lexicon);
    let tokens: Vec<String> = tokenize(&request.text).collect();
    let patterns = synthesize_patterns(&tokens, &keywords);
    Ok(SemanticQuery {
        request_id: request.request_id.clone(),
        domain,
        confidence,
        keywords,
        patterns,
        constraints: Vec::new(),
    })
}

const DEFAULT_STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    // request verbs
    "find",
    "show",
    "search",
    "get",
    "give",
    "list",
    "look",
    "looking",
    "want",
    "need",
    "please",
    "tell",
];

/// Built-in English stopword list, including common request verbs.
pub fn default_stopwords() -> Stopwords {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

const DEFAULT_LEXICON: &str = "\
travel: hotel, hotels, hostel, flight, flights, airport, train, trip, room, rooms, vienna, paris, london, rome, berlin, wifi, pool, spa, parking, breakfast, museum, museums
food: restaurant, restaurants, pizza, pasta, sushi, vegan, vegetarian, cafe, coffee, bakery, dinner, lunch
books: book, books, novel, novels, author, authors, poetry, library, publisher
";

pub fn default_lexicon() -> Lexicon {
    parse_lexicon(DEFAULT_LEXICON).expect("built-in lexicon parses")
}

/// Parses a stopword list: one token per line, `#` starts a comment.
pub fn parse_stopwords(text: &str) -> Stopwords {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Parses `domain: term1, term2, ...` lines. Blank and `#` lines are skipped.
pub fn parse_lexicon(text: &str) -> Result<Lexicon, ResourceError> {
    let mut lexicon = Lexicon::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| ResourceError::Malformed {
            line: line_no,
            reason: reason.to_string(),
        };
        let (domain, terms) = line
            .split_once(':')
            .ok_or_else(|| malformed("expected `domain: term, ...`"))?;
        let domain = domain.trim().to_lowercase();
        if domain.is_empty() {
            return Err(malformed("empty domain name"));
        }
        if domain == GENERAL_DOMAIN {
            return Err(malformed("`general` is reserved for unclassified requests"));
        }
        let terms: BTreeSet<String> = terms
            .split(',')
            .map(|t| t.trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        if lexicon.insert(domain.clone(), terms).is_some() {
            return Err(malformed(&format!("duplicate domain {domain}")));
        }
    }
    Ok(lexicon)
}

fn read_resource(path: &Path) -> Result<String, ResourceError> {
    std::fs::read_to_string(path).map_err(|source| ResourceError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_stopwords(path: &Path) -> Result<Stopwords, ResourceError> {
    Ok(parse_stopwords(&read_resource(path)?))
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon, ResourceError> {
    parse_lexicon(&read_resource(path)?)
}
