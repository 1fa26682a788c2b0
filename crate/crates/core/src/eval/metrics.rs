//! Ranking metrics. Grades above zero count as relevant.

use std::collections::BTreeMap;

/// Relevance judgments of one query: page id → grade.
pub type Judgments = BTreeMap<String, u32>;

fn relevant_count(qrel: &Judgments) -> usize {
    qrel.values().filter(|&&g| g > 0).count()
}

/// Fraction of the relevant pages found in the first `k` ranked ids.
/// `None` when the query has no relevant page.
pub fn recall_at_k<'a>(ranked: impl IntoIterator<Item = &'a str>, qrel: &Judgments, k: usize) -> Option<f64> {
    let total = relevant_count(qrel);
    if total == 0 {
        return None;
    }
    let hit = ranked
        .into_iter()
        .take(k)
        .filter(|id| qrel.get(*id).is_some_and(|&g| g > 0))
        .count();
    Some(hit as f64 / total as f64)
}

/// NDCG with exponential gain `2^g - 1` and `log2(i + 1)` discount.
/// `None` when the query has no relevant page.
pub fn ndcg_at_k<'a>(ranked: impl IntoIterator<Item = &'a str>, qrel: &Judgments, k: usize) -> Option<f64> {
    if relevant_count(qrel) == 0 {
        return None;
    }
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let discount = |i: usize| (i as f64 + 2.0).log2();
    let dcg: f64 = ranked
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| gain(qrel.get(id).copied().unwrap_or(0)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = qrel.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(g) / discount(i))
        .sum();
    Some(dcg / idcg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qrel(pairs: &[(&str, u32)]) -> Judgments {
        pairs.iter().map(|(p, g)| (p.to_string(), *g)).collect()
    }

    #[test]
    fn recall_cases() {
        let q = qrel(&[("a", 1), ("b", 1), ("c", 2), ("z", 0)]);
        assert_eq!(recall_at_k(["a", "b", "c"], &q, 5), Some(1.0));
        assert_eq!(recall_at_k(["x", "y"], &q, 5), Some(0.0));
        let r = recall_at_k(["a", "x", "c", "y", "w", "b"], &q, 5).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at_k(["a"], &qrel(&[("a", 0)]), 5), None);
    }

    #[test]
    fn ndcg_cases() {
        let q = qrel(&[("a", 1)]);
        assert_eq!(ndcg_at_k(["a", "b"], &q, 10), Some(1.0));
        let v = ndcg_at_k(["b", "a"], &q, 10).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(ndcg_at_k(["b", "a"], &q, 1), Some(0.0));
        assert_eq!(ndcg_at_k(["x"], &q, 10), Some(0.0));
        assert_eq!(ndcg_at_k(["x"], &qrel(&[]), 10), None);
    }
}
