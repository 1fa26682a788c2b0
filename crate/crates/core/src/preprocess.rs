//! Empty-region cropping of page images by row/column luma variance.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel luma image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Image(format!("empty image {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::Image(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Converts interleaved RGB with luma weights 0.299 / 0.587 / 0.114.
    pub fn from_rgb(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::Image(format!(
                "{} bytes for a {height}x{width} RGB image",
                rgb.len()
            )));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn fill_rect(&mut self, rect: CropRect, value: u8) {
        for r in rect.top..rect.bottom {
            for c in rect.left..rect.right {
                self.set(r, c, value);
            }
        }
    }

    pub fn full_rect(&self) -> CropRect {
        CropRect {
            top: 0,
            bottom: self.height,
            left: 0,
            right: self.width,
        }
    }

    pub fn crop(&self, rect: CropRect) -> RasterImage {
        let mut pixels = Vec::with_capacity(rect.height() * rect.width());
        for r in rect.top..rect.bottom {
            pixels.extend_from_slice(&self.pixels[r * self.width + rect.left..r * self.width + rect.right]);
        }
        RasterImage {
            height: rect.height(),
            width: rect.width(),
            pixels,
        }
    }

    /// Parses a binary PGM (`P5`, maxval ≤ 255).
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Image("truncated PGM header".into()));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
        }
        if fields[0] != "P5" {
            return Err(Error::Image(format!("not a binary PGM (magic `{}`)", fields[0])));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Image(format!("bad PGM header field `{s}`")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Image(format!("unsupported PGM maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height;
        if bytes.len() < pos + need {
            return Err(Error::Image("truncated PGM raster".into()));
        }
        let mut pixels = bytes[pos..pos + need].to_vec();
        if maxval != 255 {
            for p in &mut pixels {
                *p = ((*p as u32 * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8;
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 20);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height).unwrap();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pgm(&fs::read(path)?)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Half-open pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl CropRect {
    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn contains(&self, other: &CropRect) -> bool {
        self.top <= other.top
            && other.bottom <= self.bottom
            && self.left <= other.left
            && other.right <= self.right
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    pub row_std_thresh: f64,
    pub col_std_thresh: f64,
    /// Crops keeping less than this fraction of either dimension are rejected.
    pub min_keep_fraction: f64,
    /// Fraction of the height, at the bottom, scanned for a page number.
    pub page_number_strip_fraction: f64,
    pub strip_enabled: bool,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            row_std_thresh: 4.0,
            col_std_thresh: 4.0,
            min_keep_fraction: 0.1,
            page_number_strip_fraction: 0.06,
            strip_enabled: true,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.row_std_thresh >= 0.0 && self.col_std_thresh >= 0.0) {
            return bad("std thresholds must be >= 0");
        }
        if !(self.min_keep_fraction > 0.0 && self.min_keep_fraction <= 1.0) {
            return bad("min_keep_fraction must lie in (0, 1]");
        }
        if !(0.0..=0.2).contains(&self.page_number_strip_fraction) {
            return bad("page_number_strip_fraction must lie in [0, 0.2]");
        }
        Ok(())
    }
}

/// Column span (as a fraction of width) below which bottom-strip content is
/// treated as a page number.
const PAGE_NUMBER_MAX_SPAN: f64 = 0.10;

/// Population standard deviation of each row and each column.
pub fn row_col_std(img: &RasterImage) -> (Vec<f64>, Vec<f64>) {
    region_std(img, img.full_rect())
}

fn region_std(img: &RasterImage, rect: CropRect) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (rect.height(), rect.width());
    let mut row_sum = vec![0.0f64; h];
    let mut row_sq = vec![0.0f64; h];
    let mut col_sum = vec![0.0f64; w];
    let mut col_sq = vec![0.0f64; w];
    for r in 0..h {
        for c in 0..w {
            let v = img.get(rect.top + r, rect.left + c) as f64;
            row_sum[r] += v;
            row_sq[r] += v * v;
            col_sum[c] += v;
            col_sq[c] += v * v;
        }
    }
    let std = |sum: f64, sq: f64, n: usize| {
        let mean = sum / n as f64;
        (sq / n as f64 - mean * mean).max(0.0).sqrt()
    };
    let rows = (0..h).map(|r| std(row_sum[r], row_sq[r], w)).collect();
    let cols = (0..w).map(|c| std(col_sum[c], col_sq[c], h)).collect();
    (rows, cols)
}

/// Whether the bottom strip holds only narrow isolated content (a page
/// number). A blank strip is not reported.
fn strip_is_page_number(img: &RasterImage, strip: CropRect, cfg: &CropConfig) -> bool {
    let mut hist = [0usize; 256];
    for r in strip.top..strip.bottom {
        for c in strip.left..strip.right {
            hist[img.get(r, c) as usize] += 1;
        }
    }
    let half = (strip.height() * strip.width()).div_ceil(2);
    let mut acc = 0;
    let mut background = 0u8;
    for (v, &n) in hist.iter().enumerate() {
        acc += n;
        if acc >= half {
            background = v as u8;
            break;
        }
    }
    let mut first = None;
    let mut last = 0;
    for c in strip.left..strip.right {
        let content = (strip.top..strip.bottom)
            .any(|r| (img.get(r, c) as f64 - background as f64).abs() > cfg.col_std_thresh);
        if content {
            first.get_or_insert(c);
            last = c;
        }
    }
    match first {
        Some(first) => ((last - first + 1) as f64) < PAGE_NUMBER_MAX_SPAN * img.width() as f64,
        None => false,
    }
}

/// Tightest box around the rows/columns of `region` whose std-dev exceeds the
/// thresholds, in image coordinates. `None` when nothing passes or the box is
/// smaller than `min_keep_fraction` of the region.
fn shrink_once(img: &RasterImage, region: CropRect, cfg: &CropConfig) -> Option<CropRect> {
    let (rows, cols) = region_std(img, region);
    let top = rows.iter().position(|&s| s > cfg.row_std_thresh)?;
    let bottom = rows.iter().rposition(|&s| s > cfg.row_std_thresh)? + 1;
    let left = cols.iter().position(|&s| s > cfg.col_std_thresh)?;
    let right = cols.iter().rposition(|&s| s > cfg.col_std_thresh)? + 1;
    let keep_h = (bottom - top) as f64 / region.height() as f64;
    let keep_w = (right - left) as f64 / region.width() as f64;
    if keep_h < cfg.min_keep_fraction || keep_w < cfg.min_keep_fraction {
        return None;
    }
    Some(CropRect {
        top: region.top + top,
        bottom: region.top + bottom,
        left: region.left + left,
        right: region.left + right,
    })
}

/// Removes low-variance borders (and, optionally, a bottom page-number strip).
///
/// The bounding box is re-derived on each crop until it stops shrinking, so
/// cropping the output again with the same config returns the full image.
/// Degenerate results fall back to the full image.
pub fn crop_empty_regions(img: &RasterImage, cfg: &CropConfig) -> (CropRect, RasterImage) {
    let full = img.full_rect();
    let mut region = full;
    if cfg.strip_enabled {
        let strip_rows = (cfg.page_number_strip_fraction * img.height() as f64).floor() as usize;
        if strip_rows > 0 && strip_rows < img.height() {
            let strip = CropRect {
                top: img.height() - strip_rows,
                ..full
            };
            if strip_is_page_number(img, strip, cfg) {
                region.bottom = strip.top;
            }
        }
    }
    let mut shrunk = false;
    while let Some(next) = shrink_once(img, region, cfg) {
        if next == region {
            break;
        }
        region = next;
        shrunk = true;
    }
    if !shrunk {
        return (full, img.clone());
    }
    (region, img.crop(region))
}
