//! Shared harness and brute-force oracles for the integration tests.
//!
//! The oracles here are written independently of the library code paths
//! they check: no shared helpers beyond the plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use soas::comm::{AgentResponse, ResultItem};
use soas::config::SoasConfig;
use soas::request::{SemanticQuery, Term, TriplePattern};
use soas::sim::Triple;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join("harness")
}

pub fn harness_config() -> SoasConfig {
    SoasConfig::load(fixtures().join("harness.toml")).expect("harness config loads")
}

/// All triples of all seed knowledge bases, read straight from disk.
pub fn seed_triples() -> Vec<(String, Triple)> {
    let mut out = Vec::new();
    for agent in ["city-guide", "hotels-east", "hotels-west"] {
        let text = std::fs::read_to_string(fixtures().join("kb").join(format!("{agent}.tsv"))).unwrap();
        for line in text.lines() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            out.push((
                agent.to_string(),
                Triple::new(f[0].to_lowercase(), f[1].to_lowercase(), f[2].to_lowercase()),
            ));
        }
    }
    out
}

/// Expected ranking for "find hotels in vienna with wifi" over the seed
/// knowledge bases: (item_id, score to 3 decimals, source agent).
pub const SEED_RANKING: [(&str, &str, &str); 6] = [
    ("hotel-riverside", "0.750", "hotels-east"),
    ("hotel-opera", "0.500", "hotels-east"),
    ("hotel-seaside", "0.476", "hotels-west"),
    ("museum-albertina", "0.267", "city-guide"),
    ("cafe-central", "0.250", "city-guide"),
    ("hostel-central", "0.238", "hotels-west"),
];

fn slot_ok(term: &Term, value: &str, env: &mut BTreeMap<String, String>) -> bool {
    match term {
        Term::Literal(l) => l == value,
        Term::Variable(v) => match env.get(v) {
            Some(bound) => bound == value,
            None => {
                env.insert(v.clone(), value.to_string());
                true
            }
        },
    }
}

/// Brute force: test every (pattern, triple) pair independently.
pub fn pattern_matches(p: &TriplePattern, t: &Triple) -> bool {
    let mut env = BTreeMap::new();
    slot_ok(&p.subject, &t.subject, &mut env)
        && slot_ok(&p.predicate, &t.predicate, &mut env)
        && slot_ok(&p.object, &t.object, &mut env)
}

fn tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars().chain(std::iter::once(' ')) {
        if c.is_alphanumeric() {
            cur.push(c);
        } else {
            let tok = cur.to_lowercase();
            if tok.chars().count() >= 2 {
                out.push(tok);
            }
            cur.clear();
        }
    }
    out
}

/// Reference answer: every subject satisfying at least one distinct pattern.
pub fn oracle_answer(triples: &[Triple], patterns: &[TriplePattern], agent: &str) -> Vec<ResultItem> {
    let mut distinct: Vec<&TriplePattern> = Vec::new();
    for p in patterns {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    let mut unique: Vec<&Triple> = Vec::new();
    for t in triples {
        if !unique.contains(&t) {
            unique.push(t);
        }
    }
    let hit: Vec<Vec<bool>> = distinct
        .iter()
        .map(|p| unique.iter().map(|t| pattern_matches(p, t)).collect())
        .collect();
    let subjects: BTreeSet<&str> = unique.iter().map(|t| t.subject.as_str()).collect();
    let mut items = Vec::new();
    for s in subjects {
        let matched = hit
            .iter()
            .filter(|row| unique.iter().zip(row.iter()).any(|(t, h)| *h && t.subject == s))
            .count();
        if matched == 0 {
            continue;
        }
        let own: Vec<&&Triple> = unique.iter().filter(|t| t.subject == s).collect();
        let terms: BTreeSet<String> = own.iter().flat_map(|t| tokens(&t.object)).collect();
        let title = own
            .iter()
            .find(|t| t.predicate == "title" || t.predicate == "name")
            .map(|t| t.object.clone())
            .unwrap_or_else(|| s.to_string());
        items.push(ResultItem {
            item_id: s.to_string(),
            title,
            terms,
            matched_patterns: matched as u32,
            source_agent: agent.to_string(),
        });
    }
    items
}

pub fn oracle_score(item: &ResultItem, query: &SemanticQuery) -> f64 {
    let kw: BTreeSet<&String> = query.keywords.iter().collect();
    let mut inter = 0usize;
    let mut union = item.terms.len();
    for k in &kw {
        if item.terms.contains(*k) {
            inter += 1;
        } else {
            union += 1;
        }
    }
    let jac = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
    let pat = if query.patterns.is_empty() {
        0.0
    } else {
        item.matched_patterns as f64 / query.patterns.len() as f64
    };
    (0.5 * jac + 0.5 * pat).clamp(0.0, 1.0)
}

/// Reference ranking: score everything, pick each id's best occurrence
/// (earliest agent id on equal scores), then one total sort.
pub fn oracle_rank(responses: &[AgentResponse], query: &SemanticQuery) -> Vec<(String, f64, String, u32)> {
    struct Cand {
        id: String,
        score: f64,
        latency: u64,
        agent: String,
        pos: usize,
    }
    let mut cands = Vec::new();
    for r in responses.iter().filter(|r| r.outcome.is_ok()) {
        for (pos, it) in r.items.iter().enumerate() {
            cands.push(Cand {
                id: it.item_id.clone(),
                score: oracle_score(it, query),
                latency: r.latency_ms,
                agent: r.agent_id.clone(),
                pos,
            });
        }
    }
    cands.sort_by(|a, b| {
        a.id.cmp(&b.id)
            .then(b.score.partial_cmp(&a.score).unwrap())
            .then(a.agent.cmp(&b.agent))
            .then(a.pos.cmp(&b.pos))
    });
    cands.dedup_by(|later, first| later.id == first.id);
    cands.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.latency.cmp(&b.latency))
            .then(a.id.cmp(&b.id))
    });
    cands
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c.id, c.score, c.agent, i as u32 + 1))
        .collect()
}
