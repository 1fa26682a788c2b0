//! Naive reference implementations and seeded generators shared by the
//! integration tests. Oracles work in f64 straight from the definitions and
//! deliberately share no code with the library kernels.

#![allow(dead_code)]

use pagelens::preprocess::RasterImage;
use pagelens::{GridLayout, Matrix, PatchEmbeddingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_rows(m: &Matrix) -> Rows {
    m.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Matrix {
    let data = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Matrix::from_vec(rows, dim, data).unwrap()
}

pub fn unit_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Matrix {
    let mut m = random_matrix(rng, rows, dim);
    m.normalize_rows();
    m
}

pub fn set(vectors: Matrix, layout: GridLayout) -> PatchEmbeddingSet {
    PatchEmbeddingSet::new("page", vectors, layout).unwrap()
}

fn mean_of(rows: &[&[f64]]) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

pub fn oracle_row_means(tokens: &Rows, height: usize, width: usize) -> Rows {
    (0..height)
        .map(|h| {
            let row: Vec<&[f64]> = (0..width).map(|w| tokens[h * width + w].as_slice()).collect();
            mean_of(&row)
        })
        .collect()
}

pub fn oracle_tile_means(tokens: &Rows, tiles: usize, per_tile: usize) -> Rows {
    (0..tiles)
        .map(|t| {
            let tile: Vec<&[f64]> = (0..per_tile).map(|p| tokens[t * per_tile + p].as_slice()).collect();
            mean_of(&tile)
        })
        .collect()
}

pub fn oracle_conv1d(rows: &Rows, k: usize) -> Rows {
    let n = rows.len() as i64;
    let r = ((k - 1) / 2) as i64;
    (0..n + 2 * r)
        .map(|i| {
            let c = i - r;
            let window: Vec<&[f64]> = (0..n)
                .filter(|j| (j - c).abs() <= r)
                .map(|j| rows[j as usize].as_slice())
                .collect();
            mean_of(&window)
        })
        .collect()
}

pub fn gaussian_weight(delta: usize, sigma: f64) -> f64 {
    (-((delta * delta) as f64) / (2.0 * sigma * sigma)).exp()
}

pub fn triangular_weight(delta: usize, radius: usize) -> f64 {
    (radius + 1 - delta) as f64
}

pub fn oracle_smooth(rows: &Rows, radius: usize, weight: impl Fn(usize) -> f64) -> Rows {
    let n = rows.len() as i64;
    let d = rows[0].len();
    (0..n)
        .map(|i| {
            let mut acc = vec![0.0; d];
            let mut z = 0.0;
            for j in (i - radius as i64)..=(i + radius as i64) {
                if j < 0 || j >= n {
                    continue;
                }
                let w = weight((j - i).unsigned_abs() as usize);
                z += w;
                for (a, v) in acc.iter_mut().zip(&rows[j as usize]) {
                    *a += w * v;
                }
            }
            acc.iter().map(|a| a / z).collect()
        })
        .collect()
}

pub fn oracle_bins(rows: &Rows, t: usize) -> Rows {
    let n = rows.len();
    if n <= t {
        return rows.clone();
    }
    (0..t)
        .map(|b| {
            let lo = (b * n) / t;
            let hi = ((b + 1) * n) / t;
            let bin: Vec<&[f64]> = rows[lo..hi].iter().map(|r| r.as_slice()).collect();
            mean_of(&bin)
        })
        .collect()
}

pub fn oracle_normalize(rows: &Rows) -> Rows {
    rows.iter()
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                r.clone()
            } else {
                r.iter().map(|v| v / norm).collect()
            }
        })
        .collect()
}

pub fn oracle_global(tokens: &Rows) -> Vec<f64> {
    let all: Vec<&[f64]> = tokens.iter().map(|r| r.as_slice()).collect();
    oracle_normalize(&vec![mean_of(&all)]).remove(0)
}

/// `Σ_q max_p ⟨q, p⟩` by a plain double loop in f64.
pub fn oracle_maxsim(query: &Rows, doc: &Rows) -> f64 {
    query
        .iter()
        .map(|q| {
            doc.iter()
                .map(|p| q.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-6)
}

/// Largest elementwise relative error, or infinity on a shape mismatch.
pub fn max_rel_err(got: &Matrix, want: &Rows) -> f64 {
    if got.rows() != want.len() {
        return f64::INFINITY;
    }
    got.iter_rows()
        .zip(want)
        .flat_map(|(g, w)| g.iter().zip(w).map(|(&g, &w)| rel_err(g as f64, w)))
        .fold(0.0, f64::max)
}

/// White page with a black rectangle `[top, bottom) x [left, right)`.
pub fn block_image(h: usize, w: usize, top: usize, bottom: usize, left: usize, right: usize) -> RasterImage {
    let mut img = RasterImage::filled(h, w, 255).unwrap();
    for r in top..bottom {
        for c in left..right {
            img.set(r, c, 0);
        }
    }
    img
}

/// Bounding box of pixels that differ from the background, half-open.
pub fn oracle_bbox(img: &RasterImage, background: u8) -> Option<(usize, usize, usize, usize)> {
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for r in 0..img.height() {
        for c in 0..img.width() {
            if img.get(r, c) != background {
                let b = bbox.get_or_insert((r, r + 1, c, c + 1));
                b.0 = b.0.min(r);
                b.1 = b.1.max(r + 1);
                b.2 = b.2.min(c);
                b.3 = b.3.max(c + 1);
            }
        }
    }
    bbox
}

/// A page image with a few content blocks of random shade and texture on a
/// light background.
pub fn random_page_image(rng: &mut ChaCha8Rng) -> RasterImage {
    let h = rng.random_range(24..96);
    let w = rng.random_range(24..96);
    let bg = rng.random_range(200..=255u8);
    let mut img = RasterImage::filled(h, w, bg).unwrap();
    for _ in 0..rng.random_range(1..4) {
        let top = rng.random_range(0..h - 4);
        let left = rng.random_range(0..w - 4);
        let bottom = rng.random_range(top + 2..=h);
        let right = rng.random_range(left + 2..=w);
        let shade = rng.random_range(0..150u8);
        for r in top..bottom {
            for c in left..right {
                let jitter = rng.random_range(0..40u8);
                img.set(r, c, shade.saturating_add(jitter));
            }
        }
    }
    img
}
