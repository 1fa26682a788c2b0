//! In-memory FP16 collections of named page vectors, index persistence and
//! union merging.
//!
//! Collections are built with [`Collection::insert`] and then only read;
//! search takes `&Collection`, so the borrow checker keeps writers out
//! while queries run. Scans are exhaustive; there is no ANN structure.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use half::f16;

use crate::codec::{put_len32, put_string32, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::matrix::Matrix16;
use crate::model::{NamedVectors, VectorName};

pub const INDEX_MAGIC: &[u8; 4] = b"LIX1";
pub const INDEX_VERSION: u32 = 1;

/// One page's stored representations.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub page_id: String,
    pub dataset_id: String,
    vectors: BTreeMap<VectorName, Matrix16>,
}

impl PageRecord {
    /// Quantizes pooled FP32 vectors to FP16 (round-to-nearest-even).
    pub fn from_named(
        page_id: impl Into<String>,
        dataset_id: impl Into<String>,
        named: &NamedVectors,
    ) -> Result<Self> {
        let vectors = named
            .iter()
            .map(|(name, m)| (*name, Matrix16::from_f32(m)))
            .collect();
        Self::from_parts(page_id.into(), dataset_id.into(), vectors)
    }

    pub fn from_parts(
        page_id: String,
        dataset_id: String,
        vectors: BTreeMap<VectorName, Matrix16>,
    ) -> Result<Self> {
        let missing = |name: VectorName| Error::MissingVector {
            page_id: page_id.clone(),
            name: name.to_string(),
        };
        let initial = vectors
            .get(&VectorName::Initial)
            .ok_or_else(|| missing(VectorName::Initial))?;
        if initial.rows() == 0 {
            return Err(Error::Layout(format!("page {page_id}: `initial` is empty")));
        }
        let d = initial.dim();
        for (name, m) in &vectors {
            if m.dim() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: m.dim(),
                });
            }
            if m.rows() == 0 {
                return Err(Error::Layout(format!("page {page_id}: `{name}` is empty")));
            }
        }
        if let Some(g) = vectors.get(&VectorName::GlobalPooling) {
            if g.rows() != 1 {
                return Err(Error::Layout(format!(
                    "page {page_id}: `global_pooling` has {} vectors, expected 1",
                    g.rows()
                )));
            }
        }
        if let Some(m) = vectors.get(&VectorName::MeanPooling) {
            if m.rows() > initial.rows() {
                return Err(Error::Layout(format!(
                    "page {page_id}: `mean_pooling` has more vectors ({}) than `initial` ({})",
                    m.rows(),
                    initial.rows()
                )));
            }
        }
        Ok(Self {
            page_id,
            dataset_id,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors[&VectorName::Initial].dim()
    }

    pub fn vector(&self, name: VectorName) -> Option<&Matrix16> {
        self.vectors.get(&name)
    }

    pub fn initial(&self) -> &Matrix16 {
        &self.vectors[&VectorName::Initial]
    }

    pub fn named_vectors(&self) -> impl Iterator<Item = (VectorName, &Matrix16)> {
        self.vectors.iter().map(|(n, m)| (*n, m))
    }

    /// Vector counts per name, e.g. `{initial: 1024, mean_pooling: 32, ...}`.
    pub fn counts(&self) -> BTreeMap<VectorName, usize> {
        self.vectors.iter().map(|(n, m)| (*n, m.rows())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    name: String,
    d: usize,
    records: Vec<PageRecord>,
    positions: HashMap<String, usize>,
}

impl Collection {
    pub fn new(name: impl Into<String>, d: usize) -> Self {
        Self {
            name: name.into(),
            d,
            records: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in insertion order.
    pub fn records(&self) -> &[PageRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &PageRecord {
        &self.records[idx]
    }

    pub fn position(&self, page_id: &str) -> Option<usize> {
        self.positions.get(page_id).copied()
    }

    pub fn get(&self, page_id: &str) -> Option<&PageRecord> {
        self.position(page_id).map(|i| &self.records[i])
    }

    pub fn insert(&mut self, record: PageRecord) -> Result<()> {
        if record.dim() != self.d {
            return Err(Error::DimMismatch {
                expected: self.d,
                got: record.dim(),
            });
        }
        if self.positions.contains_key(&record.page_id) {
            return Err(Error::DuplicateId(record.page_id));
        }
        self.positions
            .insert(record.page_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn insert_named(
        &mut self,
        page_id: impl Into<String>,
        dataset_id: impl Into<String>,
        named: &NamedVectors,
    ) -> Result<()> {
        self.insert(PageRecord::from_named(page_id, dataset_id, named)?)
    }

    /// Whether every record stores `name`.
    pub fn has_vector(&self, name: VectorName) -> bool {
        self.records.iter().all(|r| r.vector(name).is_some())
    }

    /// Id under which a page of `dataset_id` originally named `page_id` is
    /// stored, accounting for union prefixing.
    pub fn resolve(&self, dataset_id: &str, page_id: &str) -> Option<&str> {
        let prefixed = format!("{dataset_id}/{page_id}");
        for candidate in [prefixed.as_str(), page_id] {
            if let Some(r) = self.get(candidate) {
                if r.dataset_id == dataset_id || dataset_id.is_empty() {
                    return Some(&r.page_id);
                }
            }
        }
        None
    }

    /// Unions collections for distractor evaluation. Ids that occur in more
    /// than one input are rewritten to `dataset_id/page_id`.
    pub fn merge(name: impl Into<String>, cols: &[&Collection]) -> Result<Collection> {
        let d = cols.first().map(|c| c.d).ok_or_else(|| {
            Error::Config("merge needs at least one collection".into())
        })?;
        if let Some(c) = cols.iter().find(|c| c.d != d) {
            return Err(Error::DimMismatch {
                expected: d,
                got: c.d,
            });
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for c in cols {
            for r in &c.records {
                *seen.entry(r.page_id.as_str()).or_default() += 1;
            }
        }
        let mut out = Collection::new(name, d);
        for c in cols {
            for r in &c.records {
                let mut r = r.clone();
                if seen[r.page_id.as_str()] > 1 {
                    r.page_id = format!("{}/{}", r.dataset_id, r.page_id);
                }
                out.insert(r)?;
            }
        }
        Ok(out)
    }

    pub fn save_index(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    /// Loads an index; the collection is named after the file stem.
    pub fn load_index(path: impl AsRef<Path>) -> Result<Collection> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "index".into());
        Self::decode(name, &fs::read(path)?)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, INDEX_VERSION);
        put_len32(&mut out, self.d)?;
        put_u64(&mut out, self.records.len() as u64);
        for r in &self.records {
            put_string32(&mut out, &r.page_id)?;
            put_string32(&mut out, &r.dataset_id)?;
            out.push(r.vectors.len() as u8);
            for (name, m) in &r.vectors {
                let n = name.as_str();
                out.push(n.len() as u8);
                out.extend_from_slice(n.as_bytes());
                put_len32(&mut out, m.rows())?;
                for v in m.as_raw() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(name: impl Into<String>, buf: &[u8]) -> Result<Collection> {
        let mut r = Reader::new(buf);
        if r.take(4).map_err(|_| Error::format("bad magic", 0))? != INDEX_MAGIC {
            return Err(Error::format("bad magic", 0));
        }
        let at = r.offset();
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::format(
                format!("unsupported index version {version} (expected {INDEX_VERSION})"),
                at,
            ));
        }
        let at = r.offset();
        let d = r.usize32()?;
        if d == 0 {
            return Err(Error::format("dim mismatch: d must be positive", at));
        }
        let count = r.u64()?;
        let mut col = Collection::new(name, d);
        for _ in 0..count {
            let at = r.offset();
            let page_id = r.string32()?;
            let dataset_id = r.string32()?;
            let n_vec = r.u8()?;
            let mut vectors = BTreeMap::new();
            for _ in 0..n_vec {
                let name_at = r.offset();
                let vname: VectorName = r
                    .string8()?
                    .parse()
                    .map_err(|e: Error| Error::format(e.to_string(), name_at))?;
                let rows = r.usize32()?;
                let n = rows
                    .checked_mul(d)
                    .ok_or_else(|| Error::format("payload size overflows", r.offset()))?;
                let bytes = r.take(r.need(n, 2)?)?;
                let data = bytes
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes([c[0], c[1]]))
                    .collect();
                if vectors
                    .insert(vname, Matrix16::from_raw(rows, d, data)?)
                    .is_some()
                {
                    return Err(Error::format(format!("vector `{vname}` repeated"), name_at));
                }
            }
            let rec = PageRecord::from_parts(page_id, dataset_id, vectors)
                .map_err(|e| Error::format(e.to_string(), at))?;
            col.insert(rec).map_err(|e| Error::format(e.to_string(), at))?;
        }
        if r.remaining() != 0 {
            return Err(Error::format(
                format!("{} trailing bytes after last page", r.remaining()),
                r.offset(),
            ));
        }
        Ok(col)
    }
}
