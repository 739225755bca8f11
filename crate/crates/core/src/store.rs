//! Unit-norm embedding vectors and the flat binary embedding store.
//!
//! Store layout (all integers little-endian):
//!
//! ```text
//! magic "WVRG" | version u16 = 1 | dim u32 | count u64
//! count * dim f32 rows, row-major
//! count * (u32 byte length, UTF-8 id)
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const STORE_MAGIC: [u8; 4] = *b"WVRG";
pub const STORE_VERSION: u16 = 1;
pub const STORE_HEADER_LEN: usize = 4 + 2 + 4 + 8;

/// Tolerance on the L2 norm of every constructed embedding.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// A finite, unit-L2-norm embedding. Normalization happens at construction,
/// so holding one of these is proof of the invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length. Accumulation is done in f64.
    pub fn normalized(values: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        Self::from_f64(&wide)
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("embedding must have dim >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm("embedding"));
        }
        Ok(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    /// Wraps values that are already known to be unit-norm (e.g. a stored row).
    /// Fails if the norm is off by more than [`UNIT_NORM_TOL`].
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("embedding must have dim >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "embedding is not unit-norm (norm = {norm})"
            )));
        }
        Ok(Self(values))
    }

    /// The unit basis vector e_0, used as the normalization of an all-zero input.
    pub fn basis(dim: usize) -> Self {
        let mut v = vec![0.0; dim.max(1)];
        v[0] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Row-major table of embeddings keyed by caller-supplied ids.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    rows: Vec<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && self.rows == other.rows
    }
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::format("dim", format!("dim must be in 1..=2^32-1, got {dim}")));
        }
        Ok(Self {
            dim,
            rows: Vec::new(),
            ids: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.rows.chunks_exact(self.dim))
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn push(&mut self, id: impl Into<String>, v: &EmbeddingVector) -> Result<()> {
        self.push_raw(id, v.as_slice())
    }

    /// Appends a row without re-normalizing it. Rows must be finite.
    pub fn push_raw(&mut self, id: impl Into<String>, row: &[f32]) -> Result<()> {
        let id = id.into();
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("store row"));
        }
        if self.index.contains_key(&id) {
            return Err(Error::format("ids", format!("duplicate id {id:?}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.rows.extend_from_slice(row);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|s| 4 + s.len()).sum();
        let mut out = Vec::with_capacity(STORE_HEADER_LEN + self.rows.len() * 4 + id_bytes);
        out.extend_from_slice(&STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "store");
        let magic = r.take(4)?;
        if magic != STORE_MAGIC {
            return Err(Error::format("magic", format!("expected \"WVRG\", found {magic:02x?}")));
        }
        let version = r.u16()?;
        if version != STORE_VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::format("dim", "dim must be positive"));
        }
        let count = r.u64()?;
        let n_floats = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(dim))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::format("count", format!("count {count} overflows")))?;
        let raw = r.take(n_floats * 4)?;
        let rows: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("rows", "non-finite value"));
        }
        let mut ids = Vec::with_capacity(count as usize);
        let mut index = HashMap::with_capacity(count as usize);
        for i in 0..count as usize {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let id = std::str::from_utf8(raw)
                .map_err(|e| Error::format("ids", format!("id {i} is not UTF-8: {e}")))?
                .to_owned();
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::format("ids", format!("duplicate id {id:?}")));
            }
            ids.push(id);
        }
        if r.remaining() != 0 {
            return Err(Error::format(
                "trailing",
                format!("{} unexpected bytes after id table", r.remaining()),
            ));
        }
        Ok(Self {
            dim,
            rows,
            ids,
            index,
        })
    }
}

pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    write_atomic(path, &store.to_bytes())
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}

/// Reads a store and checks that its dimension is `dim`.
pub fn read_store_with_dim(path: &Path, dim: usize) -> Result<EmbeddingStore> {
    let store = read_store(path)?;
    if store.dim() != dim {
        return Err(Error::format(
            "dim",
            format!("expected dim {dim}, file has {}", store.dim()),
        ));
    }
    Ok(store)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Bounds-checked little-endian cursor. Running off the end reports the
/// total byte count the read needed.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.saturating_add(n);
        if end > self.buf.len() {
            return Err(Error::Truncated {
                what: self.what,
                expected: end as u64,
                found: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}
