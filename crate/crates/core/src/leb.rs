//! Embedding bundle (`LEB1`) reader and writer.
//!
//! Layout, little-endian:
//!
//! ```text
//! header  = "LEB1" | version u32 = 1 | d u32 | page_count u64
//! page    = id_len u32 | id | dataset_len u32 | dataset
//!         | layout_tag u8 (0 fixed, 1 tile, 2 merged) | layout u32s
//!         | T_total u32 | mask_present u8 | [T_total mask bytes]
//!         | dtype u8 (0 f32, 1 f16) | T_total * d values
//! ```

use std::fs;
use std::path::Path;

use half::f16;

use crate::codec::{put_len32, put_string32, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Dtype, GridLayout, RawModelOutput};

pub const MAGIC: &[u8; 4] = b"LEB1";
pub const VERSION: u32 = 1;

/// Contents of a bundle: the embedding dim and the pages in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub d: usize,
    pub pages: Vec<RawModelOutput>,
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    decode(&fs::read(path)?)
}

pub fn write_embedding_file(path: impl AsRef<Path>, d: usize, pages: &[RawModelOutput]) -> Result<()> {
    fs::write(path, encode(d, pages)?)?;
    Ok(())
}

pub fn encode(d: usize, pages: &[RawModelOutput]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_len32(&mut out, d)?;
    put_u64(&mut out, pages.len() as u64);
    for page in pages {
        if page.vectors.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: page.vectors.dim(),
            });
        }
        let total = page.vectors.rows();
        put_string32(&mut out, &page.page_id)?;
        put_string32(&mut out, &page.dataset_id)?;
        encode_layout(&mut out, &page.layout)?;
        put_len32(&mut out, total)?;
        match &page.visual_mask {
            Some(mask) => {
                if mask.len() != total {
                    return Err(Error::Layout(format!(
                        "page {}: visual mask has {} entries for {total} tokens",
                        page.page_id,
                        mask.len()
                    )));
                }
                out.push(1);
                out.extend(mask.iter().map(|&b| u8::from(b)));
            }
            None => out.push(0),
        }
        match page.dtype {
            Dtype::F32 => {
                out.push(0);
                for v in page.vectors.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F16 => {
                out.push(1);
                for v in page.vectors.as_slice() {
                    out.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

fn encode_layout(out: &mut Vec<u8>, layout: &GridLayout) -> Result<()> {
    match *layout {
        GridLayout::FixedGrid { height, width } => {
            out.push(0);
            put_len32(out, height)?;
            put_len32(out, width)?;
        }
        GridLayout::TileGrid {
            n_rows,
            n_cols,
            patches_per_tile,
            has_global_tile,
        } => {
            out.push(1);
            put_len32(out, n_rows)?;
            put_len32(out, n_cols)?;
            put_len32(out, patches_per_tile)?;
            put_u32(out, u32::from(has_global_tile));
        }
        GridLayout::MergedGrid { h_eff, w_eff } => {
            out.push(2);
            put_len32(out, h_eff)?;
            put_len32(out, w_eff)?;
        }
    }
    Ok(())
}

pub(crate) fn decode_layout(r: &mut Reader<'_>) -> Result<GridLayout> {
    let at = r.offset();
    Ok(match r.u8()? {
        0 => GridLayout::FixedGrid {
            height: r.usize32()?,
            width: r.usize32()?,
        },
        1 => {
            let n_rows = r.usize32()?;
            let n_cols = r.usize32()?;
            let patches_per_tile = r.usize32()?;
            let flag_at = r.offset();
            let has_global_tile = match r.u32()? {
                0 => false,
                1 => true,
                v => return Err(Error::format(format!("invalid global-tile flag {v}"), flag_at)),
            };
            GridLayout::TileGrid {
                n_rows,
                n_cols,
                patches_per_tile,
                has_global_tile,
            }
        }
        2 => GridLayout::MergedGrid {
            h_eff: r.usize32()?,
            w_eff: r.usize32()?,
        },
        tag => return Err(Error::format(format!("unknown layout tag {tag}"), at)),
    })
}

pub fn decode(buf: &[u8]) -> Result<EmbeddingBundle> {
    let mut r = Reader::new(buf);
    if r.take(4).map_err(|_| Error::format("bad magic", 0))? != MAGIC {
        return Err(Error::format("bad magic", 0));
    }
    let at = r.offset();
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            format!("unsupported version {version} (expected {VERSION})"),
            at,
        ));
    }
    let at = r.offset();
    let d = r.usize32()?;
    if d == 0 {
        return Err(Error::format("dim mismatch: d must be positive", at));
    }
    let page_count = r.u64()?;
    let mut pages = Vec::new();
    for _ in 0..page_count {
        pages.push(decode_page(&mut r, d)?);
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            format!("{} trailing bytes after last page", r.remaining()),
            r.offset(),
        ));
    }
    Ok(EmbeddingBundle { d, pages })
}

fn decode_page(r: &mut Reader<'_>, d: usize) -> Result<RawModelOutput> {
    let page_id = r.string32()?;
    let dataset_id = r.string32()?;
    let layout = decode_layout(r)?;
    let total = r.usize32()?;
    let at = r.offset();
    let visual_mask = match r.u8()? {
        0 => None,
        1 => {
            let at = r.offset();
            let bytes = r.take(total)?;
            let mut mask = Vec::with_capacity(total);
            for (i, &b) in bytes.iter().enumerate() {
                match b {
                    0 => mask.push(false),
                    1 => mask.push(true),
                    _ => {
                        return Err(Error::format(
                            format!("page {page_id}: mask byte {b} is not 0/1"),
                            at + i as u64,
                        ))
                    }
                }
            }
            Some(mask)
        }
        v => return Err(Error::format(format!("invalid mask flag {v}"), at)),
    };
    let at = r.offset();
    let dtype = match r.u8()? {
        0 => Dtype::F32,
        1 => Dtype::F16,
        v => return Err(Error::format(format!("page {page_id}: unknown dtype {v}"), at)),
    };
    let values_at = r.offset();
    let n = total
        .checked_mul(d)
        .ok_or_else(|| Error::format("payload size overflows", values_at))?;
    let data: Vec<f32> = match dtype {
        Dtype::F32 => {
            let bytes = r.take(r.need(n, 4)?)?;
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        Dtype::F16 => {
            let bytes = r.take(r.need(n, 2)?)?;
            bytes
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect()
        }
    };
    let vectors = Matrix::from_vec(total, d, data).map_err(|e| {
        Error::format(format!("page {page_id}: {e}"), values_at)
    })?;
    Ok(RawModelOutput {
        page_id,
        dataset_id,
        layout,
        vectors,
        visual_mask,
        dtype,
    })
}
