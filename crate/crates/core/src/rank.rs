//! List builder: scores, deduplicates and orders stored agent results.
//!
//! `score = kw · jaccard(keywords, terms) + pw · matched / |patterns|`
//! with `kw + pw = 1` (0.5 / 0.5 by default). The final order is the total
//! key `(score desc, source latency asc, item_id asc)`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{AgentResponse, ResultItem};
use crate::request::SemanticQuery;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("rank weights must be within [0,1] and sum to 1.0 (got {keyword_weight} + {pattern_weight})")]
pub struct InvalidWeights {
    pub keyword_weight: f64,
    pub pattern_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankWeights {
    pub keyword_weight: f64,
    pub pattern_weight: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        Self {
            keyword_weight: 0.5,
            pattern_weight: 0.5,
        }
    }
}

impl RankWeights {
    pub fn validate(&self) -> Result<(), InvalidWeights> {
        let in_unit = |w: f64| w.is_finite() && (0.0..=1.0).contains(&w);
        let sums_to_one = (self.keyword_weight + self.pattern_weight - 1.0).abs() <= 1e-9;
        if in_unit(self.keyword_weight) && in_unit(self.pattern_weight) && sums_to_one {
            Ok(())
        } else {
            Err(InvalidWeights {
                keyword_weight: self.keyword_weight,
                pattern_weight: self.pattern_weight,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    pub item: ResultItem,
    pub score: f64,
    pub rank: u32,
}

/// An item with its score and the latency of the response that carried it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub item: ResultItem,
    pub score: f64,
    pub latency_ms: u64,
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 0.
pub fn jaccard<'a>(a: impl IntoIterator<Item = &'a str>, b: impl IntoIterator<Item = &'a str>) -> f64 {
    let a: BTreeSet<&str> = a.into_iter().collect();
    let b: BTreeSet<&str> = b.into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub fn score(item: &ResultItem, query: &SemanticQuery, weights: &RankWeights) -> f64 {
    let keyword_part = jaccard(
        query.keywords.iter().map(String::as_str),
        item.terms.iter().map(String::as_str),
    );
    let pattern_part = if query.patterns.is_empty() {
        0.0
    } else {
        item.matched_patterns as f64 / query.patterns.len() as f64
    };
    (weights.keyword_weight * keyword_part + weights.pattern_weight * pattern_part).clamp(0.0, 1.0)
}

/// Keeps one entry per item id: the highest score, or the earliest among
/// equal scores. Survivors keep the position of their id's first occurrence.
pub fn dedupe(items: Vec<ScoredItem>) -> Vec<ScoredItem> {
    let mut slot_of: HashMap<String, usize> = HashMap::with_capacity(items.len());
    let mut out: Vec<ScoredItem> = Vec::with_capacity(items.len());
    for candidate in items {
        match slot_of.get(&candidate.item.item_id) {
            Some(&slot) => {
                if candidate.score > out[slot].score {
                    out[slot] = candidate;
                }
            }
            None => {
                slot_of.insert(candidate.item.item_id.clone(), out.len());
                out.push(candidate);
            }
        }
    }
    out
}

fn ranking_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.latency_ms.cmp(&b.latency_ms))
        .then_with(|| a.item.item_id.cmp(&b.item.item_id))
}

/// Builds the prioritized list from stored responses.
///
/// Only `Ok` responses contribute. Responses are taken in agent-id order so
/// the duplicate tie-break does not depend on arrival order.
pub fn rank(responses: &[AgentResponse], query: &SemanticQuery, weights: &RankWeights) -> Vec<RankedResult> {
    let mut ordered: Vec<&AgentResponse> = responses.iter().filter(|r| r.outcome.is_ok()).collect();
    ordered.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));

    let scored = ordered
        .into_iter()
        .flat_map(|r| {
            r.items.iter().map(move |item| ScoredItem {
                score: score(item, query, weights),
                item: item.clone(),
                latency_ms: r.latency_ms,
            })
        })
        .collect();
    let mut unique = dedupe(scored);
    unique.sort_by(ranking_order);
    unique
        .into_iter()
        .enumerate()
        .map(|(i, s)| RankedResult {
            item: s.item,
            score: s.score,
            rank: i as u32 + 1,
        })
        .collect()
}
