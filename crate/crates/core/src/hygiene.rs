//! Token hygiene: keep only visual patch tokens from raw encoder output.

use crate::error::{Error, Result};
use crate::model::{ModelProfile, PatchEmbeddingSet, RawModelOutput};

/// Length of the maximal trailing run of rows whose components are all
/// exactly zero.
pub fn detect_padding(raw: &RawModelOutput) -> usize {
    raw.vectors
        .iter_rows()
        .rev()
        .take_while(|row| row.iter().all(|&v| v == 0.0))
        .count()
}

/// Row indices of the visual tokens, in input order.
///
/// An explicit mask wins. Without one, tokens are assumed to be laid out as
/// `prefix | visual | suffix | padding`.
pub fn visual_indices(raw: &RawModelOutput, profile: &ModelProfile) -> Vec<usize> {
    if let Some(mask) = &raw.visual_mask {
        return mask
            .iter()
            .enumerate()
            .filter_map(|(i, &visual)| visual.then_some(i))
            .collect();
    }
    let total = raw.total_tokens();
    let end = total
        .saturating_sub(detect_padding(raw))
        .saturating_sub(profile.suffix_nonvisual);
    (profile.prefix_nonvisual..end.max(profile.prefix_nonvisual)).collect()
}

pub fn strip_nonvisual(raw: &RawModelOutput, profile: &ModelProfile) -> Result<PatchEmbeddingSet> {
    let fail = |reason: String| Error::Hygiene {
        page_id: raw.page_id.clone(),
        reason,
    };
    if raw.vectors.dim() != profile.d {
        return Err(fail(format!(
            "embedding dim {} does not match profile {} (d={})",
            raw.vectors.dim(),
            profile.name,
            profile.d
        )));
    }
    if raw.layout.family() != profile.layout_family {
        return Err(fail(format!(
            "layout {:?} is not a {:?} layout required by profile {}",
            raw.layout, profile.layout_family, profile.name
        )));
    }
    if let Some(mask) = &raw.visual_mask {
        if mask.len() != raw.total_tokens() {
            return Err(fail(format!(
                "visual mask has {} entries for {} tokens",
                mask.len(),
                raw.total_tokens()
            )));
        }
    }
    let keep = visual_indices(raw, profile);
    if keep.is_empty() {
        return Err(fail("no visual tokens remain after hygiene".into()));
    }
    let vectors = raw.vectors.select_rows(&keep);
    PatchEmbeddingSet::new(raw.page_id.clone(), vectors, raw.layout)
        .map_err(|e| fail(format!("{} visual tokens retained: {e}", keep.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::{Dtype, GridLayout};

    fn raw(rows: Vec<Vec<f32>>, layout: GridLayout, mask: Option<Vec<bool>>) -> RawModelOutput {
        RawModelOutput {
            page_id: "p".into(),
            dataset_id: "ds".into(),
            layout,
            vectors: Matrix::from_rows(&rows).unwrap(),
            visual_mask: mask,
            dtype: Dtype::F32,
        }
    }

    fn profile(d: usize, prefix: usize, suffix: usize) -> ModelProfile {
        ModelProfile::colpali().with_dim(d).with_nonvisual(prefix, suffix)
    }

    #[test]
    fn padding_counts() {
        let l = GridLayout::FixedGrid { height: 1, width: 5 };
        let r = raw(
            vec![vec![1.0], vec![0.0], vec![2.0], vec![0.0], vec![0.0]],
            l,
            None,
        );
        assert_eq!(detect_padding(&r), 2);
        let r = raw(vec![vec![1.0], vec![2.0]], l, None);
        assert_eq!(detect_padding(&r), 0);
        let r = raw(vec![vec![0.0, 0.0]; 4], l, None);
        assert_eq!(detect_padding(&r), 4);
    }

    #[test]
    fn negative_zero_counts_as_padding() {
        let l = GridLayout::FixedGrid { height: 1, width: 2 };
        let r = raw(vec![vec![1.0, 1.0], vec![-0.0, 0.0]], l, None);
        assert_eq!(detect_padding(&r), 1);
    }

    #[test]
    fn all_zero_page_fails() {
        let l = GridLayout::FixedGrid { height: 2, width: 2 };
        let r = raw(vec![vec![0.0, 0.0]; 4], l, None);
        assert!(strip_nonvisual(&r, &profile(2, 0, 0)).is_err());
    }

    #[test]
    fn heuristic_strips_prefix_suffix_and_padding() {
        // 1 prefix, 4 visual, 2 suffix, 3 padding
        let mut rows = vec![vec![9.0]];
        rows.extend((1..=4).map(|i| vec![i as f32]));
        rows.extend([vec![7.0], vec![8.0]]);
        rows.extend([vec![0.0], vec![0.0], vec![0.0]]);
        let l = GridLayout::FixedGrid { height: 2, width: 2 };
        let set = strip_nonvisual(&raw(rows, l, None), &profile(1, 1, 2)).unwrap();
        assert_eq!(set.vectors().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mask_takes_precedence_and_may_interleave() {
        let rows: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32 + 1.0]).collect();
        let mask = vec![false, true, false, true, true, false];
        let l = GridLayout::MergedGrid { h_eff: 3, w_eff: 1 };
        let p = ModelProfile::colqwen().with_dim(1).with_nonvisual(4, 4);
        let set = strip_nonvisual(&raw(rows, l, Some(mask)), &p).unwrap();
        assert_eq!(set.vectors().as_slice(), &[2.0, 4.0, 5.0]);
    }

    #[test]
    fn inconsistent_count_is_reported() {
        let rows: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32 + 1.0]).collect();
        let l = GridLayout::FixedGrid { height: 2, width: 2 };
        let err = strip_nonvisual(&raw(rows, l, None), &profile(1, 0, 0)).unwrap_err();
        assert!(err.to_string().contains("5 visual tokens"), "{err}");
    }

    #[test]
    fn wrong_family_is_rejected() {
        let rows: Vec<Vec<f32>> = (0..4).map(|i| vec![i as f32 + 1.0]).collect();
        let l = GridLayout::MergedGrid { h_eff: 2, w_eff: 2 };
        assert!(strip_nonvisual(&raw(rows, l, None), &profile(1, 0, 0)).is_err());
    }
}
