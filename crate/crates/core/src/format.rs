//! Binary embedding and index files.
//!
//! Both formats share one little-endian header:
//!
//! ```text
//! magic    4 bytes  "CBIR"
//! version  u32      1
//! dim      u32      D
//! count    u64      M
//! M x { record_id u64, D x f32 }
//! ```
//!
//! An embedding file ends there. An index file appends a metadata block:
//! a `u64` byte length followed by that many bytes holding
//!
//! ```text
//! classes  u32
//! classes x { kind u8 (0 pathological, 1 anatomical), name_len u32, name utf-8 }
//! M x label u32
//! M x record_id u64   (must repeat the record section's ids)
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::store::{ClassKind, ClassTable, EmbeddingRecord, VectorIndex};

pub const MAGIC: [u8; 4] = *b"CBIR";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Rows whose norms are re-checked when an index is loaded.
pub const SPOT_CHECK_ROWS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub dimension: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingFile {
    pub fn new(dimension: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dimension == 0 && !records.is_empty() {
            return Err(Error::InvalidConfig("zero dimension with records".into()));
        }
        if let Some(bad) = records.iter().find(|r| r.vector.len() != dimension) {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                found: bad.vector.len(),
            });
        }
        Ok(Self { dimension, records })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.dimension == 0 && !self.records.is_empty() {
            return Err(Error::InvalidConfig("zero dimension with records".into()));
        }
        write_header(&mut w, self.dimension, self.records.len())?;
        for r in &self.records {
            if r.vector.len() != self.dimension {
                return Err(Error::DimensionMismatch {
                    expected: self.dimension,
                    found: r.vector.len(),
                });
            }
            write_record(&mut w, r.record_id, &r.vector)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.records.len() * (8 + 4 * self.dimension));
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let (dimension, count) = read_header(&mut cur)?;
        let records = read_records(&mut cur, dimension, count)?
            .into_iter()
            .map(|(record_id, vector)| EmbeddingRecord { record_id, vector })
            .collect();
        if cur.remaining() != 0 {
            return Err(Error::CorruptFile(format!(
                "{} trailing bytes after embedding records",
                cur.remaining()
            )));
        }
        Ok(Self { dimension, records })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn write_index<W: Write>(index: &VectorIndex, mut w: W) -> Result<()> {
    write_header(&mut w, index.dimension(), index.len())?;
    for row in 0..index.len() {
        write_record(&mut w, index.record_id(row), index.vector(row))?;
    }

    let mut meta = Vec::new();
    let classes = index.classes();
    meta.extend_from_slice(&(classes.len() as u32).to_le_bytes());
    for (name, kind) in classes.names().iter().zip(classes.kinds()) {
        meta.push(match kind {
            ClassKind::Pathological => 0,
            ClassKind::Anatomical => 1,
        });
        meta.extend_from_slice(&(name.len() as u32).to_le_bytes());
        meta.extend_from_slice(name.as_bytes());
    }
    for &label in index.labels() {
        meta.extend_from_slice(&label.to_le_bytes());
    }
    for &id in index.record_ids() {
        meta.extend_from_slice(&id.to_le_bytes());
    }
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(&meta)?;
    w.flush()?;
    Ok(())
}

pub fn index_to_bytes(index: &VectorIndex) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_index(index, &mut buf)?;
    Ok(buf)
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<VectorIndex> {
    let mut cur = Cursor::new(bytes);
    let (dimension, count) = read_header(&mut cur)?;
    let records = read_records(&mut cur, dimension, count)?;

    let meta_len = cur.u64()?;
    if meta_len != cur.remaining() as u64 {
        return Err(Error::CorruptFile(format!(
            "metadata block declares {meta_len} bytes, {} present",
            cur.remaining()
        )));
    }
    let class_count = cur.u32()? as usize;
    let mut names = Vec::with_capacity(class_count.min(1 << 16));
    let mut kinds = Vec::with_capacity(class_count.min(1 << 16));
    for _ in 0..class_count {
        kinds.push(match cur.u8()? {
            0 => ClassKind::Pathological,
            1 => ClassKind::Anatomical,
            other => return Err(Error::CorruptFile(format!("bad class kind byte {other}"))),
        });
        let len = cur.u32()? as usize;
        let name =
            std::str::from_utf8(cur.take(len)?).map_err(|_| Error::CorruptFile("class name is not utf-8".into()))?;
        names.push(name.to_string());
    }
    let classes = ClassTable::from_parts(names, kinds).map_err(|e| Error::CorruptFile(format!("class table: {e}")))?;

    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(cur.u32()?);
    }
    for (row, (id, _)) in records.iter().enumerate() {
        if cur.u64()? != *id {
            return Err(Error::CorruptFile(format!("metadata record id mismatch at row {row}")));
        }
    }
    if cur.remaining() != 0 {
        return Err(Error::CorruptFile("trailing bytes after metadata".into()));
    }

    let mut vectors = Vec::with_capacity(count * dimension);
    let mut record_ids = Vec::with_capacity(count);
    for (id, v) in records {
        record_ids.push(id);
        vectors.extend(v);
    }
    let spot_rows = spot_check_rows(count);
    VectorIndex::assemble_spot_checked(dimension, vectors, labels, record_ids, Arc::new(classes), spot_rows).map_err(
        |e| match e {
            e @ Error::NormViolation { .. } => e,
            other => Error::CorruptFile(other.to_string()),
        },
    )
}

/// Evenly spaced rows, at most [`SPOT_CHECK_ROWS`] of them.
fn spot_check_rows(count: usize) -> Vec<usize> {
    let n = count.min(SPOT_CHECK_ROWS);
    let mut rows: Vec<usize> = (0..n).map(|i| i * count / n).collect();
    rows.dedup();
    rows
}

pub fn save_index(index: &VectorIndex, path: impl AsRef<Path>) -> Result<()> {
    write_index(index, BufWriter::new(File::create(path)?))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<VectorIndex> {
    index_from_bytes(&std::fs::read(path)?)
}

fn write_header<W: Write>(w: &mut W, dimension: usize, count: usize) -> Result<()> {
    let dim =
        u32::try_from(dimension).map_err(|_| Error::InvalidConfig(format!("dimension {dimension} exceeds u32")))?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())?;
    Ok(())
}

fn write_record<W: Write>(w: &mut W, id: u64, vector: &[f32]) -> Result<()> {
    w.write_all(&id.to_le_bytes())?;
    for x in vector {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_header(cur: &mut Cursor<'_>) -> Result<(usize, usize)> {
    if cur.remaining() < HEADER_LEN {
        return Err(Error::CorruptFile("truncated header".into()));
    }
    if cur.take(4)? != MAGIC {
        return Err(Error::CorruptFile("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::CorruptFile(format!("unsupported version {version}")));
    }
    let dimension = cur.u32()? as usize;
    let count = cur.u64()?;
    if dimension == 0 && count > 0 {
        return Err(Error::CorruptFile("zero dimension with records".into()));
    }
    let record_len = 8 + 4 * dimension as u64;
    match count.checked_mul(record_len) {
        Some(need) if need <= cur.remaining() as u64 => Ok((dimension, count as usize)),
        _ => Err(Error::CorruptFile(format!(
            "truncated: {count} records of dimension {dimension} declared, {} bytes present",
            cur.remaining()
        ))),
    }
}

fn read_records(cur: &mut Cursor<'_>, dimension: usize, count: usize) -> Result<Vec<(u64, Vec<f32>)>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = cur.u64()?;
        let raw = cur.take(4 * dimension)?;
        let vector = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((id, vector));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptFile(format!(
                "truncated at byte {}: needed {n}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
