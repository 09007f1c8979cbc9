//! Binary store file.
//!
//! ```text
//! header: magic[8] version:u32 dim:u32 count:u64 checksum:u32
//! body:   mode:u8 then `count` records of
//!         segment_id:u64 scope:u8 label:str user_id:str feature_text:str vector:f32[dim]
//! str:    len:u32 utf8[len]
//! ```
//! All integers and floats little-endian; the checksum is CRC-32 of the body.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{EmbeddingRecord, SegmentEntry, StoreError, TextMode, VectorStore};
use crate::embed::EmbeddingVector;
use crate::ingest::Scope;

pub const STORE_MAGIC: [u8; 8] = *b"STATRAG\x01";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 4;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn write_store<W: Write>(store: &VectorStore, mut w: W) -> Result<(), StoreError> {
    let per_record = 8 + 1 + 12 + 4 * store.dim();
    let mut body = Vec::with_capacity(1 + store.len() * per_record);
    body.push(match store.mode() {
        None => 0,
        Some(TextMode::Template) => 1,
        Some(TextMode::Descriptor) => 2,
    });
    for r in store.records() {
        body.extend_from_slice(&r.segment_id.to_le_bytes());
        body.push(r.scope.index() as u8);
        put_str(&mut body, &r.label);
        put_str(&mut body, &r.user_id);
        put_str(&mut body, &r.feature_text);
        for v in &r.vector {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&STORE_MAGIC);
    header.extend_from_slice(&STORE_VERSION.to_le_bytes());
    header.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    header.extend_from_slice(&(store.len() as u64).to_le_bytes());
    header.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Writes to a sibling temp file and renames, so a crash never leaves a
/// half-written store at `path`.
pub fn save_store(store: &VectorStore, path: &Path) -> Result<(), StoreError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let f = fs::File::create(&tmp)?;
        write_store(store, std::io::BufWriter::new(f))?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<VectorStore, StoreError> {
    read_store(fs::File::open(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of data"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn str(&mut self) -> Result<String, StoreError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::CorruptStore(msg.into())
}

pub fn read_store<R: Read>(mut r: R) -> Result<VectorStore, StoreError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut head = Cursor { buf: &bytes, pos: 0 };
    if head.array::<8>()? != STORE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = head.u32()?;
    if version != STORE_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let dim = head.u32()? as usize;
    let count = head.u64()?;
    let checksum = head.u32()?;
    let body = &bytes[HEADER_LEN..];
    if crc32fast::hash(body) != checksum {
        return Err(corrupt("checksum mismatch"));
    }
    if count % 4 != 0 {
        return Err(corrupt(format!("record count {count} is not a multiple of 4")));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    let mode = match c.u8()? {
        0 => None,
        1 => Some(TextMode::Template),
        2 => Some(TextMode::Descriptor),
        m => return Err(corrupt(format!("unknown mode {m}"))),
    };
    let mut store = VectorStore::new(dim);
    let mut group: Vec<EmbeddingRecord> = Vec::with_capacity(4);
    for _ in 0..count {
        let segment_id = c.u64()?;
        let scope = Scope::from_index(c.u8()? as usize).ok_or_else(|| corrupt("bad scope"))?;
        let label = c.str()?;
        let user_id = c.str()?;
        let feature_text = c.str()?;
        let raw = c.take(4 * dim)?;
        let vector = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
            .collect();
        group.push(EmbeddingRecord {
            segment_id,
            scope,
            label,
            user_id,
            feature_text,
            vector,
        });
        if group.len() == 4 {
            let entry = segment_entry(std::mem::take(&mut group))?;
            let mode = mode.ok_or_else(|| corrupt("records present but mode unset"))?;
            store
                .index_segment(entry, mode)
                .map_err(|e| corrupt(format!("inconsistent records: {e}")))?;
        }
    }
    if c.pos != body.len() {
        return Err(corrupt("trailing bytes after last record"));
    }
    Ok(store)
}

fn segment_entry(group: Vec<EmbeddingRecord>) -> Result<SegmentEntry, StoreError> {
    let first = &group[0];
    for (k, r) in group.iter().enumerate() {
        if r.scope.index() != k
            || r.segment_id != first.segment_id
            || r.label != first.label
            || r.user_id != first.user_id
        {
            return Err(corrupt(format!(
                "segment {} records out of order",
                first.segment_id
            )));
        }
    }
    let segment_id = first.segment_id;
    let label = first.label.clone();
    let user_id = first.user_id.clone();
    let mut texts: [String; 4] = Default::default();
    let mut vectors: Vec<EmbeddingVector> = Vec::with_capacity(4);
    for (k, r) in group.into_iter().enumerate() {
        texts[k] = r.feature_text;
        vectors.push(EmbeddingVector {
            values: r.vector,
            provider_id: String::new(),
        });
    }
    Ok(SegmentEntry {
        segment_id,
        label,
        user_id,
        texts,
        vectors: vectors.try_into().expect("four vectors"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n: u64, dim: usize) -> VectorStore {
        let mut s = VectorStore::new(dim);
        for id in 0..n {
            let vectors = std::array::from_fn(|k| {
                let raw: Vec<f64> = (0..dim)
                    .map(|j| ((id as f64 + 1.0) * (j as f64 + 1.0) + k as f64).sin())
                    .collect();
                EmbeddingVector::normalized(&raw, "t").unwrap()
            });
            s.index_segment(
                SegmentEntry {
                    segment_id: id * 3,
                    label: format!("act_{}", id % 2),
                    user_id: "subject_ü".into(),
                    texts: std::array::from_fn(|k| format!("segment={}\nx: mean={id}", Scope::ALL[k])),
                    vectors,
                },
                TextMode::Template,
            )
            .unwrap();
        }
        s
    }

    fn round_trip(s: &VectorStore) -> VectorStore {
        let mut buf = Vec::new();
        write_store(s, &mut buf).unwrap();
        read_store(buf.as_slice()).unwrap()
    }

    #[test]
    fn twelve_records() {
        let s = store(3, 8);
        assert_eq!(s.len(), 12);
        assert_eq!(round_trip(&s), s);
    }

    #[test]
    fn empty() {
        let s = VectorStore::new(16);
        let back = round_trip(&s);
        assert!(back.is_empty());
        assert_eq!(back.dim(), 16);
    }

    #[test]
    fn truncated_is_corrupt() {
        let mut buf = Vec::new();
        write_store(&store(2, 4), &mut buf).unwrap();
        for cut in [buf.len() - 1, buf.len() / 2, HEADER_LEN, 10] {
            assert!(
                matches!(read_store(&buf[..cut]), Err(StoreError::CorruptStore(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut buf = Vec::new();
        write_store(&store(2, 4), &mut buf).unwrap();
        let last = buf.len() - 3;
        buf[last] ^= 0x40;
        assert!(matches!(
            read_store(buf.as_slice()),
            Err(StoreError::CorruptStore(m)) if m.contains("checksum")
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        let s = store(5, 6);
        save_store(&s, &path).unwrap();
        assert_eq!(load_store(&path).unwrap(), s);
        assert!(matches!(
            load_store(&dir.path().join("missing.bin")),
            Err(StoreError::Io(_))
        ));
    }
}
