//! Trace files and the path-length breakdown report.
//!
//! A trace file is a schema-headed JSON-lines stream of `step` records
//! (one per decoding step) and `episode` records (one per finished
//! episode). The report only reads the episode records.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::EpisodeResult;
use crate::agent::{TraceStep, TRACE_SCHEMA};
use crate::error::{Error, Result};
use crate::world::io::{from_jsonl, to_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Step(TraceStep),
    Episode(EpisodeResult),
}

pub fn traces_to_string(steps: &[TraceStep], results: &[EpisodeResult]) -> Result<String> {
    let records: Vec<TraceRecord> =
        steps.iter().cloned().map(TraceRecord::Step).chain(results.iter().cloned().map(TraceRecord::Episode)).collect();
    to_jsonl(TRACE_SCHEMA, &records)
}

pub fn traces_from_str(text: &str) -> Result<Vec<TraceRecord>> {
    from_jsonl(TRACE_SCHEMA, text)
}

pub const REPORT_SCHEMA: &str = "reverie.trace_report";

/// Success and RGS of the episodes whose shortest path falls in
/// `[lo, hi)`; the outer buckets are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub episodes: usize,
    /// Percentages; absent for an empty bucket.
    pub success_pct: Option<f64>,
    pub rgs_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub boundaries: Vec<f64>,
    pub buckets: Vec<Bucket>,
    pub episodes: usize,
}

/// Interior boundaries at the 1/3 and 2/3 order statistics.
pub fn tercile_boundaries(lengths: &[f64]) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::Empty("no episodes to split into terciles".into()));
    }
    let mut s = lengths.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Ok(vec![s[n / 3], s[2 * n / 3]])
}

/// Bucket episode outcomes by shortest-path length. `boundaries` are the
/// interior cut points, ascending; `None` uses terciles of the set.
pub fn trace_report(records: &[TraceRecord], boundaries: Option<&[f64]>) -> Result<TraceReport> {
    let episodes: Vec<&EpisodeResult> = records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Episode(e) => Some(e),
            TraceRecord::Step(_) => None,
        })
        .collect();
    let lengths: Vec<f64> = episodes.iter().map(|e| e.shortest_length_m).collect();
    let cuts = match boundaries {
        Some(b) => b.to_vec(),
        None => tercile_boundaries(&lengths)?,
    };
    if cuts.windows(2).any(|w| w[0] > w[1]) || cuts.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config(format!("bucket boundaries must be finite and ascending, got {cuts:?}")));
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(&cuts);
    edges.push(f64::INFINITY);
    let buckets = edges
        .windows(2)
        .map(|w| {
            let inside: Vec<&&EpisodeResult> = episodes.iter().filter(|e| e.shortest_length_m >= w[0] && e.shortest_length_m < w[1]).collect();
            let pct = |f: fn(&EpisodeResult) -> bool| {
                (!inside.is_empty()).then(|| 100.0 * inside.iter().filter(|e| f(e)).count() as f64 / inside.len() as f64)
            };
            Bucket { lo: w[0], hi: w[1], episodes: inside.len(), success_pct: pct(|e| e.nav_success), rgs_pct: pct(|e| e.rgs_success) }
        })
        .collect();
    Ok(TraceReport { boundaries: cuts, buckets, episodes: episodes.len() })
}

impl TraceReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("{} episodes\n{:<22} {:>8} {:>10} {:>8}\n", self.episodes, "shortest path (m)", "episodes", "success %", "RGS %");
        for b in &self.buckets {
            let range = match (b.lo.is_finite(), b.hi.is_finite()) {
                (false, true) => format!("< {:.2}", b.hi),
                (true, false) => format!(">= {:.2}", b.lo),
                (true, true) => format!("{:.2} .. {:.2}", b.lo, b.hi),
                (false, false) => "all".to_string(),
            };
            let cell = |x: Option<f64>| x.map_or_else(|| "absent".to_string(), |v| format!("{v:.1}"));
            let _ = writeln!(out, "{range:<22} {:>8} {:>10} {:>8}", b.episodes, cell(b.success_pct), cell(b.rgs_pct));
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        to_jsonl(REPORT_SCHEMA, &self.buckets)
    }
}
