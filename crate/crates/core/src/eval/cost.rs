//! Search-cost accounting: multiply-adds per query for each stored vector
//! count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayoutFamily, ModelProfile};
use crate::scoring::count_multiply_adds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub vectors_per_page: u64,
    pub multiply_adds: u128,
    /// Baseline vectors per page divided by this row's.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub profile: String,
    pub n_pages: u64,
    pub query_tokens: u64,
    pub d: u64,
    pub rows: Vec<CostRow>,
}

/// One row per `(label, vectors_per_page)`; the first variant is the
/// baseline every ratio is taken against.
pub fn cost_report(
    profile: &ModelProfile,
    n_pages: u64,
    query_tokens: u64,
    variants: &[(String, u64)],
) -> Result<CostReport> {
    let base = variants
        .first()
        .ok_or_else(|| Error::Config("cost report needs at least one variant".into()))?
        .1;
    let d = profile.d as u64;
    let rows = variants
        .iter()
        .map(|(label, count)| {
            Ok(CostRow {
                label: label.clone(),
                vectors_per_page: *count,
                multiply_adds: count_multiply_adds(query_tokens, *count, n_pages, d)?,
                ratio: base as f64 / *count as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostReport {
        profile: profile.name.clone(),
        n_pages,
        query_tokens,
        d,
        rows,
    })
}

/// Typical per-page vector counts of a built-in profile.
pub fn typical_variants(profile: &ModelProfile) -> Vec<(String, u64)> {
    let v = |pairs: &[(&str, u64)]| pairs.iter().map(|(l, c)| (l.to_string(), *c)).collect();
    match profile.layout_family {
        LayoutFamily::FixedGrid => v(&[
            ("initial", 1024),
            ("mean_pooling", 32),
            ("smoothed", 34),
            ("global_pooling", 1),
        ]),
        LayoutFamily::TileGrid => v(&[("initial", 832), ("mean_pooling", 13), ("global_pooling", 1)]),
        LayoutFamily::MergedGrid => v(&[
            ("initial", 743),
            ("mean_pooling", profile.max_pooled_rows as u64),
            ("global_pooling", 1),
        ]),
    }
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "profile={} N={} Q={} d={}\n{:<16} {:>8} {:>18} {:>8}\n",
            self.profile, self.n_pages, self.query_tokens, self.d, "vectors", "D", "multiply-adds", "ratio"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16} {:>8} {:>18} {:>7.2}x\n",
                r.label, r.vectors_per_page, r.multiply_adds, r.ratio
            ));
        }
        s
    }
}
