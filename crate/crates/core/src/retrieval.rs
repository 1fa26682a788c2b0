//! Multi-stage search over a collection's named vectors: cheap MaxSim
//! prefetch on compact vectors, exact MaxSim rerank on `initial`.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VectorName;
use crate::par;
use crate::scoring::{maxsim_unchecked, QueryEmbedding};
use crate::store::Collection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// 1 = exhaustive exact, 2 = prefetch + rerank, 3 = global prefetch +
    /// pooled prefetch + rerank.
    pub stages: u8,
    pub stage1_vector: VectorName,
    pub prefetch_k: usize,
    pub global_prefetch_k: usize,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            stages: 2,
            stage1_vector: VectorName::MeanPooling,
            prefetch_k: 256,
            global_prefetch_k: 1024,
            top_k: 100,
        }
    }
}

impl SearchConfig {
    pub fn one_stage(top_k: usize) -> Self {
        Self {
            stages: 1,
            top_k,
            ..Self::default()
        }
    }

    pub fn two_stage(prefetch_k: usize, top_k: usize) -> Self {
        Self {
            stages: 2,
            prefetch_k,
            top_k,
            ..Self::default()
        }
    }

    pub fn three_stage(global_prefetch_k: usize, prefetch_k: usize, top_k: usize) -> Self {
        Self {
            stages: 3,
            global_prefetch_k,
            prefetch_k,
            top_k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=3).contains(&self.stages) {
            return bad(format!("stages must be 1, 2 or 3, got {}", self.stages));
        }
        if self.top_k == 0 {
            return bad("top_k must be >= 1".into());
        }
        if self.stages >= 2 && self.top_k > self.prefetch_k {
            return bad(format!(
                "top_k ({}) exceeds prefetch_k ({})",
                self.top_k, self.prefetch_k
            ));
        }
        if self.stages == 3 && self.prefetch_k > self.global_prefetch_k {
            return bad(format!(
                "prefetch_k ({}) exceeds global_prefetch_k ({})",
                self.prefetch_k, self.global_prefetch_k
            ));
        }
        Ok(())
    }

    /// `(vector, keep)` per stage, cheapest first.
    fn plan(&self) -> Vec<(VectorName, usize)> {
        match self.stages {
            1 => vec![(VectorName::Initial, self.top_k)],
            2 => vec![
                (self.stage1_vector, self.prefetch_k),
                (VectorName::Initial, self.top_k),
            ],
            _ => vec![
                (VectorName::GlobalPooling, self.global_prefetch_k),
                (self.stage1_vector, self.prefetch_k),
                (VectorName::Initial, self.top_k),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub page_id: String,
    pub score: f32,
    /// 1-based.
    pub rank: usize,
}

/// Hits ordered by score descending, ties broken by page id ascending.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    pub hits: Vec<RankedHit>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.page_id.as_str())
    }
}

/// What one stage scanned and kept.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub vector: VectorName,
    pub scanned: usize,
    /// Record positions kept, best first.
    pub kept: Vec<usize>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub list: RankedList,
    pub stages: Vec<StageTrace>,
}

/// Exhaustive MaxSim over `vector` on every record; top `k` by score.
pub fn search_1stage(
    col: &Collection,
    query: &QueryEmbedding,
    k: usize,
    vector: VectorName,
) -> Result<RankedList> {
    run_plan(col, query, &[(vector, k)]).map(|o| o.list)
}

pub fn search_2stage(col: &Collection, query: &QueryEmbedding, cfg: &SearchConfig) -> Result<RankedList> {
    search(col, query, &SearchConfig { stages: 2, ..cfg.clone() }).map(|o| o.list)
}

pub fn search_3stage(col: &Collection, query: &QueryEmbedding, cfg: &SearchConfig) -> Result<RankedList> {
    search(col, query, &SearchConfig { stages: 3, ..cfg.clone() }).map(|o| o.list)
}

/// Runs the cascade described by `cfg`. Returned scores come from the last
/// (exact) stage.
pub fn search(col: &Collection, query: &QueryEmbedding, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    run_plan(col, query, &cfg.plan())
}

fn run_plan(
    col: &Collection,
    query: &QueryEmbedding,
    plan: &[(VectorName, usize)],
) -> Result<SearchOutcome> {
    if query.tokens.dim() != col.dim() {
        return Err(Error::DimMismatch {
            expected: col.dim(),
            got: query.tokens.dim(),
        });
    }
    for &(vector, _) in plan {
        if let Some(r) = col.records().iter().find(|r| r.vector(vector).is_none()) {
            return Err(Error::MissingVector {
                page_id: r.page_id.clone(),
                name: vector.to_string(),
            });
        }
    }
    let mut candidates: Vec<usize> = (0..col.len()).collect();
    let mut scores: Vec<f32> = Vec::new();
    let mut traces = Vec::with_capacity(plan.len());
    for &(vector, keep) in plan {
        let start = Instant::now();
        let scanned = candidates.len();
        scores = par::map_slice(&candidates, |&i| {
            maxsim_unchecked(query, col.record(i).vector(vector).expect("checked above"))
        });
        let order = top_positions(col, &candidates, &scores, keep);
        scores = order.iter().map(|&j| scores[j]).collect();
        candidates = order.iter().map(|&j| candidates[j]).collect();
        traces.push(StageTrace {
            vector,
            scanned,
            kept: candidates.clone(),
            elapsed: start.elapsed(),
        });
    }
    let hits = candidates
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(rank, (&i, &score))| RankedHit {
            page_id: col.record(i).page_id.clone(),
            score,
            rank: rank + 1,
        })
        .collect();
    Ok(SearchOutcome {
        list: RankedList { hits },
        stages: traces,
    })
}

/// Positions into `candidates` of the best `keep`, in final order.
fn top_positions(col: &Collection, candidates: &[usize], scores: &[f32], keep: usize) -> Vec<usize> {
    let cmp = |&a: &usize, &b: &usize| -> Ordering {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| col.record(candidates[a]).page_id.cmp(&col.record(candidates[b]).page_id))
    };
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let keep = keep.min(order.len());
    if keep < order.len() && keep > 0 {
        order.select_nth_unstable_by(keep - 1, cmp);
        order.truncate(keep);
    }
    order.truncate(keep);
    order.sort_unstable_by(cmp);
    order
}

/// Throughput of a query batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpsReport {
    pub qps: f64,
    pub queries: usize,
    pub repeats: usize,
    /// Wall time of the median run, seconds.
    pub median_seconds: f64,
    /// Mean per-query latency per stage within the median run, milliseconds,
    /// keyed by the stage's vector name in execution order.
    pub stage_ms: Vec<(String, f64)>,
}

/// Times `repeats` passes over `queries` (after one untimed warmup query)
/// and reports the median. With `parallel_clients` queries run
/// concurrently; otherwise one after another.
pub fn measure_qps(
    col: &Collection,
    queries: &[QueryEmbedding],
    cfg: &SearchConfig,
    repeats: usize,
    parallel_clients: bool,
) -> Result<QpsReport> {
    if queries.is_empty() {
        return Err(Error::Config("measure_qps needs at least one query".into()));
    }
    cfg.validate()?;
    let repeats = repeats.max(1);
    search(col, &queries[0], cfg)?;
    let mut runs: Vec<(f64, Vec<Duration>)> = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let outcomes: Vec<Result<SearchOutcome>> = if parallel_clients {
            par::map_slice(queries, |q| search(col, q, cfg))
        } else {
            queries.iter().map(|q| search(col, q, cfg)).collect()
        };
        let wall = start.elapsed().as_secs_f64();
        let mut stage_sum: Vec<Duration> = Vec::new();
        for o in outcomes {
            let o = o?;
            stage_sum.resize(o.stages.len(), Duration::ZERO);
            for (acc, s) in stage_sum.iter_mut().zip(&o.stages) {
                *acc += s.elapsed;
            }
        }
        runs.push((wall, stage_sum));
    }
    runs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (wall, stage_sum) = runs.swap_remove(repeats / 2);
    let n = queries.len() as f64;
    let stage_ms = cfg
        .plan()
        .iter()
        .zip(stage_sum)
        .map(|((v, _), d)| (v.to_string(), d.as_secs_f64() * 1e3 / n))
        .collect();
    Ok(QpsReport {
        qps: n / wall.max(f64::MIN_POSITIVE),
        queries: queries.len(),
        repeats,
        median_seconds: wall,
        stage_ms,
    })
}
