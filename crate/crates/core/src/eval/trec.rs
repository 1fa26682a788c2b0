//! TREC-style qrels and run files.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::retrieval::{RankedList, SearchOutcome};

use super::metrics::Judgments;

/// Judgments for every query: query id → page id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    pub queries: BTreeMap<String, Judgments>,
}

impl QrelSet {
    pub fn insert(&mut self, query_id: impl Into<String>, page_id: impl Into<String>, grade: u32) {
        self.queries
            .entry(query_id.into())
            .or_default()
            .insert(page_id.into(), grade);
    }

    pub fn get(&self, query_id: &str) -> Option<&Judgments> {
        self.queries.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Parses `query_id 0 page_id grade` lines; blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = QrelSet::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!(
                    "qrels line {}: expected 4 fields, got {}",
                    n + 1,
                    f.len()
                )));
            }
            let grade: u32 = f[3].parse().map_err(|_| {
                Error::Parse(format!("qrels line {}: grade `{}` is not a non-negative integer", n + 1, f[3]))
            })?;
            out.insert(f[0], f[2], grade);
        }
        Ok(out)
    }

    pub fn to_trec(&self) -> String {
        let mut s = String::new();
        for (q, j) in &self.queries {
            for (p, g) in j {
                writeln!(s, "{q} 0 {p} {g}").unwrap();
            }
        }
        s
    }
}

/// `query_id Q0 page_id rank score run_tag` lines.
pub fn format_run(query_id: &str, list: &RankedList, run_tag: &str) -> String {
    let mut s = String::new();
    for h in &list.hits {
        writeln!(s, "{query_id} Q0 {} {} {:.6} {run_tag}", h.page_id, h.rank, h.score).unwrap();
    }
    s
}

#[derive(Serialize)]
struct StageLine<'a> {
    vector: &'a str,
    scanned: usize,
    kept: usize,
    ms: f64,
}

#[derive(Serialize)]
struct RunLine<'a> {
    query_id: &'a str,
    hits: &'a RankedList,
    stages: Vec<StageLine<'a>>,
}

/// One JSON object per query with hits and per-stage timings.
pub fn format_run_jsonl(query_id: &str, outcome: &SearchOutcome) -> String {
    let line = RunLine {
        query_id,
        hits: &outcome.list,
        stages: outcome
            .stages
            .iter()
            .map(|s| StageLine {
                vector: s.vector.as_str(),
                scanned: s.scanned,
                kept: s.kept.len(),
                ms: s.elapsed.as_secs_f64() * 1e3,
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&line).expect("run line serializes");
    s.push('\n');
    s
}
