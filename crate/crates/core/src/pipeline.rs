//! Index construction: hygiene, pooling and FP16 storage for a batch of raw
//! pages.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::Result;
use crate::hygiene::strip_nonvisual;
use crate::leb::EmbeddingBundle;
use crate::model::{ModelProfile, RawModelOutput, VectorName};
use crate::par;
use crate::pooling::{pool_page, PoolingOptions};
use crate::scoring::QueryEmbedding;
use crate::store::{Collection, PageRecord};

const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PageFailure {
    pub page_id: String,
    pub error: String,
}

/// Vector counts seen for one name across the indexed pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CountStats {
    pub pages: usize,
    pub min: usize,
    pub max: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub collection: String,
    pub pages: usize,
    pub counts: BTreeMap<VectorName, CountStats>,
    pub failures: Vec<PageFailure>,
}

#[derive(Debug)]
pub struct IndexBuild {
    pub collection: Collection,
    pub summary: IndexSummary,
}

/// Hygiene + pooling + quantization for one page.
pub fn process_page(raw: &RawModelOutput, profile: &ModelProfile, opts: &PoolingOptions) -> Result<PageRecord> {
    let set = strip_nonvisual(raw, profile)?;
    let named = pool_page(&set, profile, opts)?;
    PageRecord::from_named(raw.page_id.clone(), raw.dataset_id.clone(), &named)
}

/// Indexes pages `source(0..n)` in order. Pages are processed in parallel
/// chunks and inserted in index order, so the result does not depend on
/// the thread count. Pages that fail are listed in the summary.
pub fn build_index<F>(
    name: &str,
    profile: &ModelProfile,
    opts: &PoolingOptions,
    n: usize,
    source: F,
) -> Result<IndexBuild>
where
    F: Fn(usize) -> RawModelOutput + Sync + Send,
{
    let mut col = Collection::new(name, profile.d);
    let mut failures = Vec::new();
    for lo in (0..n).step_by(CHUNK) {
        let hi = (lo + CHUNK).min(n);
        let done = par::map_range(hi - lo, |j| {
            let raw = source(lo + j);
            (raw.page_id.clone(), process_page(&raw, profile, opts))
        });
        for (page_id, rec) in done {
            match rec.and_then(|r| col.insert(r)) {
                Ok(()) => {}
                Err(e) => failures.push(PageFailure {
                    page_id,
                    error: e.to_string(),
                }),
            }
        }
    }
    let summary = summarize(&col, failures);
    Ok(IndexBuild {
        collection: col,
        summary,
    })
}

pub fn index_bundle(
    name: &str,
    profile: &ModelProfile,
    opts: &PoolingOptions,
    bundle: &EmbeddingBundle,
) -> Result<IndexBuild> {
    build_index(name, profile, opts, bundle.pages.len(), |i| bundle.pages[i].clone())
}

pub fn summarize(col: &Collection, failures: Vec<PageFailure>) -> IndexSummary {
    let mut counts: BTreeMap<VectorName, CountStats> = BTreeMap::new();
    for r in col.records() {
        for (name, m) in r.named_vectors() {
            let c = m.rows();
            counts
                .entry(name)
                .and_modify(|s| {
                    s.pages += 1;
                    s.min = s.min.min(c);
                    s.max = s.max.max(c);
                    s.total += c;
                })
                .or_insert(CountStats {
                    pages: 1,
                    min: c,
                    max: c,
                    total: c,
                });
        }
    }
    IndexSummary {
        collection: col.name().to_string(),
        pages: col.len(),
        counts,
        failures,
    }
}

/// Queries from a bundle: masked tokens when a mask is present, otherwise
/// every token. The bundle's page id is the query id.
pub fn queries_from_bundle(bundle: &EmbeddingBundle) -> Result<Vec<QueryEmbedding>> {
    bundle
        .pages
        .iter()
        .map(|raw| {
            let tokens = match &raw.visual_mask {
                Some(mask) => {
                    let keep: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
                    raw.vectors.select_rows(&keep)
                }
                None => raw.vectors.clone(),
            };
            Ok(QueryEmbedding::new(raw.page_id.clone(), tokens)?.with_dataset(raw.dataset_id.clone()))
        })
        .collect()
}
