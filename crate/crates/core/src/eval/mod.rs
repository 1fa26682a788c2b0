//! Evaluation harness: metrics over ranked runs, per-dataset and union
//! scopes, cost accounting and synthetic corpora.

pub mod cost;
pub mod metrics;
pub mod synthetic;
pub mod trec;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::retrieval::{search, SearchConfig, SearchOutcome};
use crate::scoring::QueryEmbedding;
use crate::store::Collection;

pub use cost::{cost_report, typical_variants, CostReport, CostRow};
pub use metrics::{ndcg_at_k, recall_at_k, Judgments};
pub use synthetic::{SyntheticCorpus, SyntheticSpec};
pub use trec::{format_run, format_run_jsonl, QrelSet};

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Each query searches only its own dataset's collection.
    PerDataset,
    /// All datasets merged; other datasets' pages act as distractors.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub cutoffs: Vec<usize>,
    /// Run queries concurrently instead of one after another.
    pub parallel_clients: bool,
    /// Recorded in the report.
    pub seed: Option<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            parallel_clients: false,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    pub collection: String,
    pub pages: usize,
    pub config: SearchConfig,
    pub cutoffs: Vec<usize>,
    /// Mean of each metric (`ndcg@k`, `recall@k`) over evaluated queries.
    pub means: BTreeMap<String, f64>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub evaluated: usize,
    pub skipped: Vec<SkippedQuery>,
    pub seed: Option<u64>,
    pub qps: f64,
    /// Mean per-query milliseconds per stage.
    pub stage_ms: Vec<(String, f64)>,
}

impl EvalReport {
    /// Copy with every timing-derived field zeroed, for reproducibility
    /// comparisons.
    pub fn without_timings(&self) -> EvalReport {
        EvalReport {
            qps: 0.0,
            stage_ms: self.stage_ms.iter().map(|(n, _)| (n.clone(), 0.0)).collect(),
            ..self.clone()
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.means.get(metric).copied()
    }
}

pub fn metric_key(metric: &str, k: usize) -> String {
    format!("{metric}@{k}")
}

/// Runs every query against `col` and scores the rankings.
///
/// Judged page ids are resolved through [`Collection::resolve`], so
/// dataset-local qrels work against a union collection. Queries without a
/// relevant page, or with a relevant page the collection does not hold,
/// are skipped and listed in the report.
pub fn evaluate_collection(
    col: &Collection,
    queries: &[&QueryEmbedding],
    qrels: &QrelSet,
    cfg: &SearchConfig,
    scope: Scope,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut skipped = Vec::new();
    let mut work: Vec<(&QueryEmbedding, Judgments)> = Vec::new();
    for q in queries {
        let skip = |reason: &str| SkippedQuery {
            query_id: q.query_id.clone(),
            reason: reason.to_string(),
        };
        let Some(judged) = qrels.get(&q.query_id) else {
            skipped.push(skip("no judgments"));
            continue;
        };
        if !judged.values().any(|&g| g > 0) {
            skipped.push(skip("no relevant pages"));
            continue;
        }
        let mut resolved = Judgments::new();
        let mut missing = None;
        for (pid, &g) in judged {
            match col.resolve(&q.dataset_id, pid) {
                Some(id) => {
                    resolved.insert(id.to_string(), g);
                }
                None if g > 0 => {
                    missing = Some(pid.clone());
                    break;
                }
                None => {}
            }
        }
        if let Some(pid) = missing {
            skipped.push(skip(&format!("relevant page `{pid}` not in collection")));
            continue;
        }
        work.push((q, resolved));
    }

    let start = Instant::now();
    let outcomes: Vec<Result<SearchOutcome>> = if opts.parallel_clients {
        par::map_slice(&work, |(q, _)| search(col, q, cfg))
    } else {
        work.iter().map(|(q, _)| search(col, q, cfg)).collect()
    };
    let wall = start.elapsed().as_secs_f64();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut per_query = BTreeMap::new();
    let mut stage_sum: Vec<(String, Duration)> = Vec::new();
    for ((q, judged), out) in work.iter().zip(&outcomes) {
        let mut values = BTreeMap::new();
        for &k in &opts.cutoffs {
            let ids = || out.list.ids();
            values.insert(metric_key("ndcg", k), ndcg_at_k(ids(), judged, k).unwrap_or(0.0));
            values.insert(metric_key("recall", k), recall_at_k(ids(), judged, k).unwrap_or(0.0));
        }
        per_query.insert(q.query_id.clone(), values);
        if stage_sum.is_empty() {
            stage_sum = out.stages.iter().map(|s| (s.vector.to_string(), Duration::ZERO)).collect();
        }
        for (acc, s) in stage_sum.iter_mut().zip(&out.stages) {
            acc.1 += s.elapsed;
        }
    }
    let n = work.len();
    let mut means = BTreeMap::new();
    if n > 0 {
        let keys: BTreeSet<String> = per_query.values().flat_map(|m| m.keys().cloned()).collect();
        for key in keys {
            let sum: f64 = per_query.values().map(|m| m[&key]).sum();
            means.insert(key, sum / n as f64);
        }
    }
    Ok(EvalReport {
        scope,
        collection: col.name().to_string(),
        pages: col.len(),
        config: cfg.clone(),
        cutoffs: opts.cutoffs.clone(),
        means,
        per_query,
        evaluated: n,
        skipped,
        seed: opts.seed,
        qps: if n > 0 { n as f64 / wall.max(f64::MIN_POSITIVE) } else { 0.0 },
        stage_ms: stage_sum
            .into_iter()
            .map(|(name, d)| (name, d.as_secs_f64() * 1e3 / n.max(1) as f64))
            .collect(),
    })
}

/// Per-dataset scope yields one report per collection, covering the
/// queries whose dataset appears in it; union scope merges the collections
/// and yields a single report over every query.
pub fn evaluate(
    cols: &[&Collection],
    queries: &[QueryEmbedding],
    qrels: &QrelSet,
    cfg: &SearchConfig,
    scope: Scope,
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    if cols.is_empty() {
        return Err(Error::Config("evaluate needs at least one collection".into()));
    }
    match scope {
        Scope::PerDataset => cols
            .iter()
            .map(|col| {
                let datasets: BTreeSet<&str> =
                    col.records().iter().map(|r| r.dataset_id.as_str()).collect();
                let mine: Vec<&QueryEmbedding> = queries
                    .iter()
                    .filter(|q| datasets.contains(q.dataset_id.as_str()))
                    .collect();
                evaluate_collection(col, &mine, qrels, cfg, scope, opts)
            })
            .collect(),
        Scope::Union => {
            let merged;
            let col = if cols.len() == 1 {
                cols[0]
            } else {
                merged = Collection::merge("union", cols)?;
                &merged
            };
            let all: Vec<&QueryEmbedding> = queries.iter().collect();
            Ok(vec![evaluate_collection(col, &all, qrels, cfg, scope, opts)?])
        }
    }
}

const TABLE_METRICS: [(&str, &str, usize); 5] = [
    ("N@5", "ndcg", 5),
    ("N@10", "ndcg", 10),
    ("R@5", "recall", 5),
    ("R@10", "recall", 10),
    ("R@100", "recall", 100),
];

fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    s.strip_prefix('0').map(str::to_string).unwrap_or(s)
}

fn delta(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        " .00".to_string()
    } else {
        let sign = if r > 0.0 { '+' } else { '-' };
        format!("{sign}{}", format!("{:.2}", r.abs()).trim_start_matches('0'))
    }
}

/// Renders rows as `N@5 N@10 R@5 R@10 R@100 QPS`. With a baseline, each
/// metric carries its delta against it (`.559+.01`).
pub fn format_table(rows: &[(String, &EvalReport)], baseline: Option<&EvalReport>) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let cell_w = if baseline.is_some() { 10 } else { 6 };
    let mut s = format!("{:<label_w$}", "config");
    for (h, _, _) in TABLE_METRICS {
        write!(s, " {h:>cell_w$}").unwrap();
    }
    s.push_str("      QPS\n");
    for (label, r) in rows {
        write!(s, "{label:<label_w$}").unwrap();
        for (_, m, k) in TABLE_METRICS {
            let key = metric_key(m, k);
            let cell = match (r.mean(&key), baseline.and_then(|b| b.mean(&key))) {
                (Some(v), Some(b)) => format!("{}{}", short(v), delta(v - b)),
                (Some(v), None) => short(v),
                (None, _) => "-".into(),
            };
            write!(s, " {cell:>cell_w$}").unwrap();
        }
        writeln!(s, " {:>8.2}", r.qps).unwrap();
    }
    s
}
