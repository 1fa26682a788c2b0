//! Shared domain types: spatial layouts, page embedding sets, raw encoder
//! output and backbone profiles.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Spatial arrangement of a page's visual tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridLayout {
    /// `height × width` patches in row-major order.
    FixedGrid { height: usize, width: usize },
    /// `n_rows × n_cols` tiles of `patches_per_tile` consecutive tokens each,
    /// optionally followed by one global (whole-image) tile.
    TileGrid {
        n_rows: usize,
        n_cols: usize,
        patches_per_tile: usize,
        has_global_tile: bool,
    },
    /// Merged-patch grid of variable size, row-major.
    MergedGrid { h_eff: usize, w_eff: usize },
}

impl GridLayout {
    pub fn family(&self) -> LayoutFamily {
        match self {
            GridLayout::FixedGrid { .. } => LayoutFamily::FixedGrid,
            GridLayout::TileGrid { .. } => LayoutFamily::TileGrid,
            GridLayout::MergedGrid { .. } => LayoutFamily::MergedGrid,
        }
    }

    /// Number of tokens the layout describes.
    pub fn token_count(&self) -> usize {
        match *self {
            GridLayout::FixedGrid { height, width } => height * width,
            GridLayout::TileGrid {
                n_rows,
                n_cols,
                patches_per_tile,
                has_global_tile,
            } => (n_rows * n_cols + usize::from(has_global_tile)) * patches_per_tile,
            GridLayout::MergedGrid { h_eff, w_eff } => h_eff * w_eff,
        }
    }

    /// Number of tile groups (grid tiles plus the global tile).
    pub fn tile_count(&self) -> Option<usize> {
        match *self {
            GridLayout::TileGrid {
                n_rows,
                n_cols,
                has_global_tile,
                ..
            } => Some(n_rows * n_cols + usize::from(has_global_tile)),
            _ => None,
        }
    }
}

/// Checks that `layout` describes exactly `count` tokens.
pub fn validate_layout(layout: &GridLayout, count: usize) -> Result<(), String> {
    if count == 0 {
        return Err("embedding set has no vectors".into());
    }
    let expected = layout.token_count();
    if expected != count {
        return Err(format!(
            "{layout:?} describes {expected} tokens but the set has {count}"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutFamily {
    FixedGrid,
    TileGrid,
    MergedGrid,
}

/// A page's clean visual tokens plus their spatial layout.
///
/// Construction enforces layout consistency, so every value of this type
/// satisfies [`validate_layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingSet {
    page_id: String,
    vectors: Matrix,
    layout: GridLayout,
}

impl PatchEmbeddingSet {
    pub fn new(page_id: impl Into<String>, vectors: Matrix, layout: GridLayout) -> Result<Self> {
        validate_layout(&layout, vectors.rows()).map_err(Error::Layout)?;
        Ok(Self {
            page_id: page_id.into(),
            vectors,
            layout,
        })
    }

    pub fn page_id(&self) -> &str {
        &self.page_id
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn validate(&self) -> Result<(), String> {
        validate_layout(&self.layout, self.len())
    }
}

/// Storage encoding of a payload in an embedding bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    #[default]
    F32,
    F16,
}

/// Encoder output for one page before token hygiene: all `T_total` tokens,
/// including special, prompt and padding tokens.
///
/// `layout` describes the visual tokens that remain after hygiene.
#[derive(Debug, Clone, PartialEq)]
pub struct RawModelOutput {
    pub page_id: String,
    pub dataset_id: String,
    pub layout: GridLayout,
    pub vectors: Matrix,
    /// `true` marks a visual patch token.
    pub visual_mask: Option<Vec<bool>>,
    pub dtype: Dtype,
}

impl RawModelOutput {
    pub fn total_tokens(&self) -> usize {
        self.vectors.rows()
    }
}

/// Identifiers of the pooling kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingStrategy {
    TileMean,
    RowMean,
    Conv1d,
    Gauss,
    Tri,
    Adaptive,
    Global,
}

impl PoolingStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolingStrategy::TileMean => "tile_mean",
            PoolingStrategy::RowMean => "row_mean",
            PoolingStrategy::Conv1d => "conv1d",
            PoolingStrategy::Gauss => "gauss",
            PoolingStrategy::Tri => "tri",
            PoolingStrategy::Adaptive => "adaptive",
            PoolingStrategy::Global => "global",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tile_mean" => PoolingStrategy::TileMean,
            "row_mean" => PoolingStrategy::RowMean,
            "conv1d" => PoolingStrategy::Conv1d,
            "gauss" => PoolingStrategy::Gauss,
            "tri" => PoolingStrategy::Tri,
            "adaptive" => PoolingStrategy::Adaptive,
            "global" => PoolingStrategy::Global,
            other => return Err(Error::Config(format!("unknown pooling strategy `{other}`"))),
        })
    }
}

/// Per-backbone rules for hygiene and pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub d: usize,
    pub layout_family: LayoutFamily,
    /// Leading non-visual tokens (special and prompt tokens).
    pub prefix_nonvisual: usize,
    /// Trailing non-visual tokens that sit before any batch padding.
    pub suffix_nonvisual: usize,
    pub default_pooling: PoolingStrategy,
    /// Smoothed variant produced when the caller asks for one.
    pub default_smoothing: Option<PoolingStrategy>,
    /// Row cap for adaptive pooling (merged grids only).
    pub max_pooled_rows: usize,
}

impl ModelProfile {
    /// ColPali v1.3: fixed 32×32 grid, 1030 tokens of which 1024 are visual.
    ///
    /// The 6 non-visual tokens are the `<bos>` + prompt text that the
    /// PaliGemma processor places after the image tokens. The split is
    /// configurable; verify against the real processor before ingesting
    /// unmasked output.
    pub fn colpali() -> Self {
        Self {
            name: "colpali".into(),
            d: 128,
            layout_family: LayoutFamily::FixedGrid,
            prefix_nonvisual: 0,
            suffix_nonvisual: 6,
            default_pooling: PoolingStrategy::RowMean,
            default_smoothing: Some(PoolingStrategy::Conv1d),
            max_pooled_rows: 32,
        }
    }

    /// ColSmol-500M: 512×512 tiles of 64 patches plus a global tile. Tile
    /// separator tokens are interleaved, so raw output should carry a mask.
    pub fn colsmol() -> Self {
        Self {
            name: "colsmol".into(),
            d: 128,
            layout_family: LayoutFamily::TileGrid,
            prefix_nonvisual: 0,
            suffix_nonvisual: 0,
            default_pooling: PoolingStrategy::TileMean,
            default_smoothing: None,
            max_pooled_rows: 32,
        }
    }

    /// ColQwen2.5: dynamic-resolution merged grid; raw output should carry a
    /// mask delimiting the vision span.
    pub fn colqwen() -> Self {
        Self {
            name: "colqwen".into(),
            d: 128,
            layout_family: LayoutFamily::MergedGrid,
            prefix_nonvisual: 0,
            suffix_nonvisual: 0,
            default_pooling: PoolingStrategy::Adaptive,
            default_smoothing: Some(PoolingStrategy::Gauss),
            max_pooled_rows: 32,
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "colpali" => Ok(Self::colpali()),
            "colsmol" => Ok(Self::colsmol()),
            "colqwen" => Ok(Self::colqwen()),
            other => Err(Error::Config(format!(
                "unknown model profile `{other}` (expected colpali, colsmol or colqwen)"
            ))),
        }
    }

    pub fn with_dim(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    pub fn with_nonvisual(mut self, prefix: usize, suffix: usize) -> Self {
        self.prefix_nonvisual = prefix;
        self.suffix_nonvisual = suffix;
        self
    }
}

/// Names under which a page's representations are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorName {
    Initial,
    MeanPooling,
    Smoothed,
    GlobalPooling,
}

impl VectorName {
    pub const ALL: [VectorName; 4] = [
        VectorName::Initial,
        VectorName::MeanPooling,
        VectorName::Smoothed,
        VectorName::GlobalPooling,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VectorName::Initial => "initial",
            VectorName::MeanPooling => "mean_pooling",
            VectorName::Smoothed => "smoothed",
            VectorName::GlobalPooling => "global_pooling",
        }
    }
}

impl fmt::Display for VectorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VectorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VectorName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownVector(s.to_string()))
    }
}

/// FP32 named representations of one page, as produced by pooling.
pub type NamedVectors = BTreeMap<VectorName, Matrix>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colpali_grid_is_consistent() {
        let l = GridLayout::FixedGrid {
            height: 32,
            width: 32,
        };
        assert!(validate_layout(&l, 1024).is_ok());
    }

    #[test]
    fn colsmol_tiles_are_consistent() {
        let l = GridLayout::TileGrid {
            n_rows: 4,
            n_cols: 3,
            patches_per_tile: 64,
            has_global_tile: true,
        };
        assert!(validate_layout(&l, 832).is_ok());
        assert_eq!(l.tile_count(), Some(13));
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let l = GridLayout::FixedGrid {
            height: 3,
            width: 3,
        };
        assert!(validate_layout(&l, 10).is_err());
        let m = Matrix::zeros(10, 2);
        assert!(PatchEmbeddingSet::new("p", m, l).is_err());
    }

    #[test]
    fn merged_grid_and_empty_set() {
        let l = GridLayout::MergedGrid { h_eff: 28, w_eff: 26 };
        assert!(validate_layout(&l, 728).is_ok());
        let l = GridLayout::MergedGrid { h_eff: 0, w_eff: 4 };
        assert!(validate_layout(&l, 0).is_err());
    }

    #[test]
    fn names_parse() {
        for n in VectorName::ALL {
            assert_eq!(n.as_str().parse::<VectorName>().unwrap(), n);
        }
        assert!("bogus".parse::<VectorName>().is_err());
        assert_eq!("gauss".parse::<PoolingStrategy>().unwrap(), PoolingStrategy::Gauss);
    }
}
