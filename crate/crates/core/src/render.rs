//! Result generator: renders ranked results as JSON or a plain-text table.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::comm::Outcome;
use crate::rank::RankedResult;

pub const TABLE_HEADER: &str = "rank | score | item_id | title | source_agent";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("unsupported output format {0:?} (expected json or table)")]
    UnsupportedFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Table,
}

impl FromStr for Format {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "table" => Ok(Format::Table),
            other => Err(RenderError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Table => "table",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedOutput {
    pub format: Format,
    pub content: String,
}

/// Score in thousandths, rounded half up.
///
/// The small bias absorbs binary representation error so that values such
/// as 0.4165 (stored as 0.41649999...) still round up.
fn score_millis(score: f64) -> u64 {
    (score.clamp(0.0, 1.0) * 1000.0 + 0.5 + 1e-9).floor() as u64
}

/// Formats a score with exactly three decimals, rounding half up.
pub fn format_score(score: f64) -> String {
    let m = score_millis(score);
    format!("{}.{:03}", m / 1000, m % 1000)
}

#[derive(Serialize)]
struct JsonRow<'a> {
    rank: u32,
    score: f64,
    item_id: &'a str,
    title: &'a str,
    source_agent: &'a str,
}

#[derive(Serialize)]
struct JsonDocument<'a> {
    request_id: &'a str,
    results: Vec<JsonRow<'a>>,
    diagnostics: &'a BTreeMap<String, Outcome>,
}

fn one_line(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_control() || c == '|' { ' ' } else { c })
        .collect()
}

pub fn render(
    request_id: &str,
    results: &[RankedResult],
    format: Format,
    diagnostics: &BTreeMap<String, Outcome>,
) -> RenderedOutput {
    let content = match format {
        Format::Json => {
            let doc = JsonDocument {
                request_id,
                results: results
                    .iter()
                    .map(|r| JsonRow {
                        rank: r.rank,
                        score: score_millis(r.score) as f64 / 1000.0,
                        item_id: &r.item.item_id,
                        title: &r.item.title,
                        source_agent: &r.item.source_agent,
                    })
                    .collect(),
                diagnostics,
            };
            let mut out = serde_json::to_string_pretty(&doc).expect("render serialization is infallible");
            out.push('\n');
            out
        }
        Format::Table => {
            let mut out = String::new();
            out.push_str(TABLE_HEADER);
            out.push('\n');
            for r in results {
                let _ = writeln!(
                    out,
                    "{} | {} | {} | {} | {}",
                    r.rank,
                    format_score(r.score),
                    one_line(&r.item.item_id),
                    one_line(&r.item.title),
                    one_line(&r.item.source_agent)
                );
            }
            for (agent, outcome) in diagnostics {
                let _ = writeln!(out, "# {}: {outcome}", one_line(agent));
            }
            out
        }
    };
    RenderedOutput { format, content }
}

/// [`render`] with the format given by name.
pub fn render_named(
    request_id: &str,
    results: &[RankedResult],
    format: &str,
    diagnostics: &BTreeMap<String, Outcome>,
) -> Result<RenderedOutput, RenderError> {
    Ok(render(request_id, results, format.parse()?, diagnostics))
}
