//! Training-free spatial pooling of patch embeddings.
//!
//! Kernels operate in FP32 storage with FP64 accumulation and return raw
//! (un-normalized) means. [`pool_page`] assembles a page's named vectors
//! and applies optional L2 renormalization to the pooled ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{l2_normalize, Matrix};
use crate::model::{
    GridLayout, LayoutFamily, ModelProfile, NamedVectors, PatchEmbeddingSet, PoolingStrategy,
    VectorName,
};

/// Pooled vectors plus the strategy that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSet {
    pub vectors: Matrix,
    pub source_strategy: PoolingStrategy,
    pub renormalized: bool,
}

impl PooledSet {
    fn raw(vectors: Matrix, source_strategy: PoolingStrategy) -> Self {
        Self {
            vectors,
            source_strategy,
            renormalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn renormalize(mut self) -> Self {
        self.vectors.normalize_rows();
        self.renormalized = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Triangular,
}

/// Symmetric weights over a window of odd width `k` (radius `r = (k-1)/2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingKernel {
    kind: KernelKind,
    window: usize,
    sigma: f64,
}

impl SmoothingKernel {
    /// `sigma` only matters for the Gaussian kind; `None` selects
    /// `max(0.5, r / 2)`.
    pub fn new(kind: KernelKind, window: usize, sigma: Option<f64>) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::Config(format!("smoothing window must be odd, got {window}")));
        }
        let r = (window - 1) / 2;
        let sigma = sigma.unwrap_or_else(|| default_sigma(r));
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("gaussian sigma must be positive, got {sigma}")));
        }
        Ok(Self {
            kind,
            window,
            sigma,
        })
    }

    pub fn gaussian(window: usize) -> Result<Self> {
        Self::new(KernelKind::Gaussian, window, None)
    }

    pub fn triangular(window: usize) -> Result<Self> {
        Self::new(KernelKind::Triangular, window, None)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn radius(&self) -> usize {
        (self.window - 1) / 2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Weight for an offset of `delta` rows from the centre.
    pub fn weight(&self, delta: usize) -> f64 {
        let d = delta as f64;
        match self.kind {
            KernelKind::Gaussian => (-(d * d) / (2.0 * self.sigma * self.sigma)).exp(),
            KernelKind::Triangular => (self.radius() + 1) as f64 - d,
        }
    }

    /// Full window of un-normalized weights, offsets `-r..=r`.
    pub fn weights(&self) -> Vec<f64> {
        let r = self.radius() as isize;
        (-r..=r).map(|o| self.weight(o.unsigned_abs())).collect()
    }
}

pub fn default_sigma(radius: usize) -> f64 {
    f64::max(0.5, radius as f64 / 2.0)
}

/// Mean of each tile's `P` consecutive tokens; the global tile, when
/// present, is the last group.
pub fn tile_mean_pool(set: &PatchEmbeddingSet) -> Result<PooledSet> {
    let GridLayout::TileGrid {
        patches_per_tile, ..
    } = set.layout()
    else {
        return Err(layout_mismatch("tile_mean", set));
    };
    let tiles = set.layout().tile_count().unwrap_or(0);
    let groups: Vec<(usize, usize)> = (0..tiles)
        .map(|t| (t * patches_per_tile, (t + 1) * patches_per_tile))
        .collect();
    Ok(PooledSet::raw(
        mean_of_groups(set.vectors(), &groups),
        PoolingStrategy::TileMean,
    ))
}

/// Mean over the columns of each grid row of a fixed grid.
pub fn row_mean_pool(set: &PatchEmbeddingSet) -> Result<PooledSet> {
    let GridLayout::FixedGrid { height, width } = set.layout() else {
        return Err(layout_mismatch("row_mean", set));
    };
    Ok(PooledSet::raw(
        grid_row_means(set.vectors(), height, width),
        PoolingStrategy::RowMean,
    ))
}

/// Uniform sliding-window mean with boundary extension: `N` rows become
/// `N + 2r` outputs, output `i` centred on row `i - r`, averaging only the
/// in-range rows of its window.
pub fn conv1d_extend(rows: &Matrix, window: usize) -> Result<Matrix> {
    if rows.rows() == 0 {
        return Err(Error::Pooling("conv1d over an empty row set".into()));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!("conv1d window must be odd, got {window}")));
    }
    let n = rows.rows() as isize;
    let r = ((window - 1) / 2) as isize;
    let groups: Vec<(usize, usize)> = (0..n + 2 * r)
        .map(|i| {
            let centre = i - r;
            let lo = (centre - r).max(0);
            let hi = (centre + r + 1).min(n);
            (lo as usize, hi as usize)
        })
        .collect();
    Ok(mean_of_groups(rows, &groups))
}

/// Same-length weighted smoothing; out-of-range neighbours are skipped and
/// the remaining weights renormalized.
pub fn weighted_smooth(rows: &Matrix, kernel: &SmoothingKernel) -> Matrix {
    let n = rows.rows();
    let d = rows.dim();
    let r = kernel.radius();
    let weights: Vec<f64> = (0..=r).map(|delta| kernel.weight(delta)).collect();
    let mut out = Matrix::zeros(n, d);
    let mut acc = vec![0.0f64; d];
    for i in 0..n {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut z = 0.0;
        for j in i.saturating_sub(r)..(i + r + 1).min(n) {
            let w = weights[i.abs_diff(j)];
            z += w;
            for (a, &v) in acc.iter_mut().zip(rows.row(j)) {
                *a += w * v as f64;
            }
        }
        for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = (a / z) as f32;
        }
    }
    out
}

/// Row means of a merged grid, downsampled to at most `max_rows` vectors.
pub fn adaptive_row_pool(set: &PatchEmbeddingSet, max_rows: usize) -> Result<PooledSet> {
    let GridLayout::MergedGrid { h_eff, w_eff } = set.layout() else {
        return Err(layout_mismatch("adaptive", set));
    };
    let rows = grid_row_means(set.vectors(), h_eff, w_eff);
    Ok(PooledSet::raw(
        bin_rows(&rows, max_rows)?,
        PoolingStrategy::Adaptive,
    ))
}

/// Averages rows into `max_rows` evenly spaced bins
/// `[floor(b*N/T), floor((b+1)*N/T))`. Inputs with `N <= T` are returned
/// as is; nothing is upsampled.
pub fn bin_rows(rows: &Matrix, max_rows: usize) -> Result<Matrix> {
    if max_rows == 0 {
        return Err(Error::Config("adaptive row cap must be positive".into()));
    }
    let n = rows.rows();
    if n <= max_rows {
        return Ok(rows.clone());
    }
    let groups: Vec<(usize, usize)> = (0..max_rows)
        .map(|b| (b * n / max_rows, (b + 1) * n / max_rows))
        .collect();
    Ok(mean_of_groups(rows, &groups))
}

/// Mean of every token, L2-normalized.
pub fn global_pool(set: &PatchEmbeddingSet) -> Vec<f32> {
    let mut v = global_mean(set);
    l2_normalize(&mut v);
    v
}

/// Mean of every token.
pub fn global_mean(set: &PatchEmbeddingSet) -> Vec<f32> {
    mean_of_groups(set.vectors(), &[(0, set.len())]).into_vec()
}

fn grid_row_means(tokens: &Matrix, height: usize, width: usize) -> Matrix {
    let groups: Vec<(usize, usize)> = (0..height).map(|h| (h * width, (h + 1) * width)).collect();
    mean_of_groups(tokens, &groups)
}

/// One output row per `[lo, hi)` range: the mean of those input rows.
fn mean_of_groups(rows: &Matrix, groups: &[(usize, usize)]) -> Matrix {
    let d = rows.dim();
    let mut out = Matrix::zeros(groups.len(), d);
    let mut acc = vec![0.0f64; d];
    for (g, &(lo, hi)) in groups.iter().enumerate() {
        debug_assert!(lo < hi);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for i in lo..hi {
            for (a, &v) in acc.iter_mut().zip(rows.row(i)) {
                *a += v as f64;
            }
        }
        let inv = (hi - lo) as f64;
        for (o, a) in out.row_mut(g).iter_mut().zip(&acc) {
            *o = (a / inv) as f32;
        }
    }
    out
}

fn layout_mismatch(kernel: &str, set: &PatchEmbeddingSet) -> Error {
    Error::Pooling(format!(
        "{kernel} pooling cannot handle layout {:?} of page {}",
        set.layout(),
        set.page_id()
    ))
}

/// Options controlling which named vectors [`pool_page`] emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolingOptions {
    /// Strategy for the `smoothed` vector (`conv1d`, `gauss` or `tri`);
    /// `None` skips it.
    pub smoothing: Option<PoolingStrategy>,
    /// Window for conv1d and weighted smoothing (odd).
    pub window: usize,
    /// Gaussian sigma; `None` uses `max(0.5, r / 2)`.
    pub sigma: Option<f64>,
    /// Overrides the profile's adaptive row cap.
    pub max_rows: Option<usize>,
    pub renormalize: bool,
}

impl Default for PoolingOptions {
    fn default() -> Self {
        Self {
            smoothing: None,
            window: 3,
            sigma: None,
            max_rows: None,
            renormalize: true,
        }
    }
}

impl PoolingOptions {
    pub fn with_smoothing(mut self, s: PoolingStrategy) -> Self {
        self.smoothing = Some(s);
        self
    }

    fn kernel(&self, strategy: PoolingStrategy) -> Result<SmoothingKernel> {
        let kind = match strategy {
            PoolingStrategy::Gauss => KernelKind::Gaussian,
            PoolingStrategy::Tri => KernelKind::Triangular,
            other => {
                return Err(Error::Config(format!("`{other}` is not a weighted smoothing kernel")))
            }
        };
        SmoothingKernel::new(kind, self.window, self.sigma)
    }

    fn smooth(&self, rows: &Matrix) -> Result<Option<Matrix>> {
        match self.smoothing {
            None => Ok(None),
            Some(PoolingStrategy::Conv1d) => conv1d_extend(rows, self.window).map(Some),
            Some(s @ (PoolingStrategy::Gauss | PoolingStrategy::Tri)) => {
                Ok(Some(weighted_smooth(rows, &self.kernel(s)?)))
            }
            Some(other) => Err(Error::Config(format!(
                "`{other}` cannot be used as the smoothed variant"
            ))),
        }
    }
}

/// Builds every named vector for one hygiene-clean page.
///
/// Fixed grids get row means (plus the smoothed variant over them), merged
/// grids get row means binned to the row cap (smoothing runs on the row
/// means before binning), tile grids get tile means.
pub fn pool_page(
    set: &PatchEmbeddingSet,
    profile: &ModelProfile,
    opts: &PoolingOptions,
) -> Result<NamedVectors> {
    let family = set.layout().family();
    if family != profile.layout_family {
        return Err(Error::Pooling(format!(
            "page {} has a {family:?} layout but profile {} expects {:?}",
            set.page_id(),
            profile.name,
            profile.layout_family
        )));
    }
    let (mean, smoothed) = match family {
        LayoutFamily::TileGrid => {
            if opts.smoothing.is_some() {
                return Err(Error::Pooling(
                    "no smoothed variant is defined for tile grids".into(),
                ));
            }
            (tile_mean_pool(set)?.vectors, None)
        }
        LayoutFamily::FixedGrid => {
            let rows = row_mean_pool(set)?.vectors;
            let smoothed = opts.smooth(&rows)?;
            (rows, smoothed)
        }
        LayoutFamily::MergedGrid => {
            let GridLayout::MergedGrid { h_eff, w_eff } = set.layout() else {
                unreachable!()
            };
            let cap = opts.max_rows.unwrap_or(profile.max_pooled_rows);
            let rows = grid_row_means(set.vectors(), h_eff, w_eff);
            let smoothed = match opts.smooth(&rows)? {
                Some(s) => Some(bin_rows(&s, cap)?),
                None => None,
            };
            (bin_rows(&rows, cap)?, smoothed)
        }
    };
    let mut global = Matrix::from_vec(1, set.dim(), global_mean(set))?;
    let finish = |mut m: Matrix| {
        if opts.renormalize {
            m.normalize_rows();
        }
        m
    };
    let mut out = NamedVectors::new();
    out.insert(VectorName::Initial, set.vectors().clone());
    out.insert(VectorName::MeanPooling, finish(mean));
    if let Some(s) = smoothed {
        out.insert(VectorName::Smoothed, finish(s));
    }
    if opts.renormalize {
        global.normalize_rows();
    }
    out.insert(VectorName::GlobalPooling, global);
    Ok(out)
}
