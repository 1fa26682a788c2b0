//! Dense row-major matrices in FP32 (compute) and FP16 (storage).

use half::f16;
use half::slice::HalfFloatSliceExt;

use crate::error::{Error, Result};

/// Row-major `rows × dim` FP32 matrix. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn from_vec(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Layout("matrix dimension must be positive".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::DimMismatch {
                expected: rows * dim,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Layout(format!(
                "non-finite component at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), dim, data)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// Copies the listed rows, in the listed order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            dim: self.dim,
            data,
        }
    }

    /// Scales every non-zero row to unit L2 norm. Zero rows stay zero.
    pub fn normalize_rows(&mut self) {
        let dim = self.dim;
        for row in self.data.chunks_exact_mut(dim) {
            l2_normalize(row);
        }
    }

    pub fn scale(&mut self, alpha: f32) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// Normalizes `v` in place; a zero vector is left untouched.
pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        let inv = (1.0 / norm) as f32;
        v.iter_mut().for_each(|x| *x *= inv);
    }
}

/// Row-major `rows × dim` half-precision matrix used for stored vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix16 {
    rows: usize,
    dim: usize,
    data: Vec<f16>,
}

impl Matrix16 {
    /// Quantizes with round-to-nearest-even.
    pub fn from_f32(m: &Matrix) -> Self {
        let mut data = vec![f16::ZERO; m.as_slice().len()];
        data.convert_from_f32_slice(m.as_slice());
        Self {
            rows: m.rows(),
            dim: m.dim(),
            data,
        }
    }

    pub fn from_raw(rows: usize, dim: usize, data: Vec<f16>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimMismatch {
                expected: rows * dim,
                got: data.len(),
            });
        }
        Ok(Self { rows, dim, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_raw(&self) -> &[f16] {
        &self.data
    }

    /// Widens into `buf`, replacing its contents.
    pub fn widen_into(&self, buf: &mut Vec<f32>) {
        buf.clear();
        buf.resize(self.data.len(), 0.0);
        widen(&self.data, buf);
    }

    pub fn to_f32(&self) -> Matrix {
        let mut data = Vec::new();
        self.widen_into(&mut data);
        Matrix {
            rows: self.rows,
            dim: self.dim,
            data,
        }
    }
}

/// FP16 to FP32 is exact, so the hardware path matches `half` bit for bit.
fn widen(src: &[f16], dst: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("f16c") && std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: both features were detected above.
            unsafe { widen_f16c(src, dst) };
            return;
        }
    }
    src.convert_to_f32_slice(dst);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,f16c")]
unsafe fn widen_f16c(src: &[f16], dst: &mut [f32]) {
    use std::arch::x86_64::{__m128i, _mm256_cvtph_ps, _mm256_storeu_ps, _mm_loadu_si128};
    assert_eq!(src.len(), dst.len());
    let n = src.len() / 8 * 8;
    for i in (0..n).step_by(8) {
        // SAFETY: `i + 8 <= len` for both slices; unaligned loads and stores.
        unsafe {
            let h = _mm_loadu_si128(src.as_ptr().add(i) as *const __m128i);
            _mm256_storeu_ps(dst.as_mut_ptr().add(i), _mm256_cvtph_ps(h));
        }
    }
    src[n..].convert_to_f32_slice(&mut dst[n..]);
}
