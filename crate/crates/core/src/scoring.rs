//! Exact MaxSim late-interaction scoring.
//!
//! Dot products accumulate in FP32 over eight fixed lanes that are reduced
//! in a fixed order, so a score depends only on its inputs: not on the
//! thread count, batch composition, or whether the AVX2 path is taken.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Matrix16};
use crate::par;

/// A query's token matrix (`Q × d`). Queries are never pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub query_id: String,
    /// Dataset the query belongs to; used to pick its corpus in per-dataset
    /// evaluation.
    pub dataset_id: String,
    pub tokens: Matrix,
}

impl QueryEmbedding {
    pub fn new(query_id: impl Into<String>, tokens: Matrix) -> Result<Self> {
        if tokens.rows() == 0 {
            return Err(Error::Layout("query has no tokens".into()));
        }
        Ok(Self {
            query_id: query_id.into(),
            dataset_id: String::new(),
            tokens,
        })
    }

    pub fn with_dataset(mut self, dataset_id: impl Into<String>) -> Self {
        self.dataset_id = dataset_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }
}

/// Something MaxSim can scan: a `count × dim` matrix readable as FP32.
pub trait DocVectors {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    /// Calls `f` with the row-major FP32 contents.
    fn with_f32<R>(&self, f: impl FnOnce(&[f32]) -> R) -> R;
}

impl DocVectors for Matrix {
    fn dim(&self) -> usize {
        Matrix::dim(self)
    }

    fn count(&self) -> usize {
        self.rows()
    }

    fn with_f32<R>(&self, f: impl FnOnce(&[f32]) -> R) -> R {
        f(self.as_slice())
    }
}

thread_local! {
    static WIDEN: RefCell<Vec<f32>> = const { RefCell::new(Vec::new()) };
}

impl DocVectors for Matrix16 {
    fn dim(&self) -> usize {
        Matrix16::dim(self)
    }

    fn count(&self) -> usize {
        self.rows()
    }

    fn with_f32<R>(&self, f: impl FnOnce(&[f32]) -> R) -> R {
        WIDEN.with(|buf| {
            let mut buf = buf.borrow_mut();
            self.widen_into(&mut buf);
            f(&buf)
        })
    }
}

/// `Σ_q max_p ⟨query_q, doc_p⟩`.
pub fn maxsim<D: DocVectors + ?Sized>(query: &QueryEmbedding, doc: &D) -> Result<f32> {
    check(query, doc)?;
    Ok(maxsim_unchecked(query, doc))
}

/// Scores every document; `out[i]` belongs to `docs[i]`.
pub fn maxsim_batch<D: DocVectors + Sync>(query: &QueryEmbedding, docs: &[D]) -> Result<Vec<f32>> {
    for doc in docs {
        check(query, doc)?;
    }
    Ok(par::map_slice(docs, |doc| maxsim_unchecked(query, doc)))
}

fn check<D: DocVectors + ?Sized>(query: &QueryEmbedding, doc: &D) -> Result<()> {
    if doc.dim() != query.tokens.dim() {
        return Err(Error::DimMismatch {
            expected: query.tokens.dim(),
            got: doc.dim(),
        });
    }
    if doc.count() == 0 {
        return Err(Error::Layout("document has no vectors".into()));
    }
    Ok(())
}

pub(crate) fn maxsim_unchecked<D: DocVectors + ?Sized>(query: &QueryEmbedding, doc: &D) -> f32 {
    let d = query.tokens.dim();
    doc.with_f32(|rows| maxsim_slices(query.tokens.as_slice(), rows, d))
}

/// MaxSim over raw row-major slices. Both must hold whole rows of width `d`.
pub fn maxsim_slices(query: &[f32], doc: &[f32], d: usize) -> f32 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked above.
            return unsafe { maxsim_avx2(query, doc, d) };
        }
    }
    maxsim_kernel(query, doc, d)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn maxsim_avx2(query: &[f32], doc: &[f32], d: usize) -> f32 {
    maxsim_kernel(query, doc, d)
}

const LANES: usize = 8;
const SMALL_Q: usize = 64;

#[inline(always)]
fn maxsim_kernel(query: &[f32], doc: &[f32], d: usize) -> f32 {
    let nq = query.len() / d;
    let mut small = [f32::NEG_INFINITY; SMALL_Q];
    let mut large = Vec::new();
    let best: &mut [f32] = if nq <= SMALL_Q {
        &mut small[..nq]
    } else {
        large.resize(nq, f32::NEG_INFINITY);
        &mut large
    };
    for p in doc.chunks_exact(d) {
        let mut q = 0;
        while q + 4 <= nq {
            let s = dot4(
                [
                    &query[q * d..(q + 1) * d],
                    &query[(q + 1) * d..(q + 2) * d],
                    &query[(q + 2) * d..(q + 3) * d],
                    &query[(q + 3) * d..(q + 4) * d],
                ],
                p,
            );
            for (k, v) in s.into_iter().enumerate() {
                if v > best[q + k] {
                    best[q + k] = v;
                }
            }
            q += 4;
        }
        while q < nq {
            let v = dot(&query[q * d..(q + 1) * d], p);
            if v > best[q] {
                best[q] = v;
            }
            q += 1;
        }
    }
    let mut total = 0.0f32;
    for &b in best.iter() {
        total += b;
    }
    total
}

#[inline(always)]
fn reduce(acc: [f32; LANES]) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Inner product with the fixed eight-lane accumulation order.
#[inline(always)]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    for i in 0..ra.len() {
        acc[i] += ra[i] * rb[i];
    }
    reduce(acc)
}

/// Four inner products against the same `b`, each bit-identical to
/// [`dot`]; the independent accumulators just overlap in the pipeline.
#[inline(always)]
fn dot4(a: [&[f32]; 4], b: &[f32]) -> [f32; 4] {
    let mut acc = [[0.0f32; LANES]; 4];
    let full = b.len() / LANES * LANES;
    let mut j = 0;
    while j < full {
        let y = &b[j..j + LANES];
        for k in 0..4 {
            let x = &a[k][j..j + LANES];
            for i in 0..LANES {
                acc[k][i] += x[i] * y[i];
            }
        }
        j += LANES;
    }
    for i in 0..b.len() - full {
        for k in 0..4 {
            acc[k][i] += a[k][full + i] * b[full + i];
        }
    }
    [reduce(acc[0]), reduce(acc[1]), reduce(acc[2]), reduce(acc[3])]
}

/// Multiply-adds for one exhaustive MaxSim scan: `Q × D × N × d`.
pub fn count_multiply_adds(q: u64, d_vectors: u64, n_pages: u64, dim: u64) -> Result<u128> {
    if q == 0 || d_vectors == 0 || n_pages == 0 || dim == 0 {
        return Err(Error::Config("cost model inputs must all be >= 1".into()));
    }
    [d_vectors, n_pages, dim]
        .into_iter()
        .try_fold(q as u128, |acc, x| acc.checked_mul(x as u128))
        .ok_or_else(|| Error::Overflow(format!("{q} x {d_vectors} x {n_pages} x {dim}")))
}
