//! Binary index file.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! magic    4 bytes  "RGDX"
//! version  u32
//! dim      u32
//! count    u64
//! checksum u32      CRC-32 (IEEE) of every record byte that follows
//! records  count × { id_len u32, id UTF-8 bytes, dim × f32 }
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{IndexBackendDescriptor, IndexError, MemoryIndex, VectorStore};
use crate::embed::EmbeddingVector;

pub const INDEX_MAGIC: &[u8; 4] = b"RGDX";
pub const INDEX_VERSION: u32 = 1;
pub(crate) const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4;

pub(crate) fn encode_records(entries: &[(String, EmbeddingVector)]) -> Vec<u8> {
    let dim = entries.first().map(|(_, v)| v.dim()).unwrap_or(0);
    let mut body = Vec::with_capacity(entries.len() * (16 + dim * 4));
    for (id, v) in entries {
        body.extend_from_slice(&(id.len() as u32).to_le_bytes());
        body.extend_from_slice(id.as_bytes());
        for x in v.values() {
            body.extend_from_slice(&x.to_le_bytes());
        }
    }
    body
}

pub(crate) fn encode_header(dim: usize, count: usize, body: &[u8]) -> [u8; HEADER_LEN] {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(INDEX_MAGIC);
    header[4..8].copy_from_slice(&INDEX_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(dim as u32).to_le_bytes());
    header[12..20].copy_from_slice(&(count as u64).to_le_bytes());
    header[20..24].copy_from_slice(&crc32fast::hash(body).to_le_bytes());
    header
}

/// Writes entries to `path` via a temporary sibling file and rename.
pub fn write_index_file(
    path: &Path,
    dim: usize,
    entries: &[(String, EmbeddingVector)],
) -> Result<(), IndexError> {
    let body = encode_records(entries);
    let header = encode_header(dim, entries.len(), &body);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("rgdx.tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(&header)?;
        w.write_all(&body)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) struct Header {
    pub dim: usize,
    pub count: u64,
    pub checksum: u32,
}

pub(crate) fn parse_header(bytes: &[u8]) -> Result<Header, IndexError> {
    if bytes.len() < HEADER_LEN {
        return Err(IndexError::Corrupt("truncated header".into()));
    }
    if &bytes[0..4] != INDEX_MAGIC {
        return Err(IndexError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != INDEX_VERSION {
        return Err(IndexError::Corrupt(format!("unsupported version {version}")));
    }
    Ok(Header {
        dim: u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize,
        count: u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")),
        checksum: u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes")),
    })
}

/// Decodes one record starting at `pos`; returns the entry and the next offset.
pub(crate) fn decode_record(
    body: &[u8],
    pos: usize,
    dim: usize,
) -> Result<((String, Vec<f32>), usize), IndexError> {
    let truncated = || IndexError::Corrupt("truncated record".into());
    let len_end = pos.checked_add(4).filter(|&e| e <= body.len()).ok_or_else(truncated)?;
    let id_len = u32::from_le_bytes(body[pos..len_end].try_into().expect("4 bytes")) as usize;
    let id_end = len_end.checked_add(id_len).filter(|&e| e <= body.len()).ok_or_else(truncated)?;
    let id = std::str::from_utf8(&body[len_end..id_end])
        .map_err(|_| IndexError::Corrupt("id is not UTF-8".into()))?
        .to_string();
    let vec_end = id_end
        .checked_add(dim * 4)
        .filter(|&e| e <= body.len())
        .ok_or_else(truncated)?;
    let values = body[id_end..vec_end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok(((id, values), vec_end))
}

/// Reads and verifies an index file, returning its dim and entries.
pub fn read_index_file(path: &Path) -> Result<(usize, Vec<(String, EmbeddingVector)>), IndexError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(IndexError::NotFound),
        Err(e) => return Err(e.into()),
    };
    let header = parse_header(&bytes)?;
    let body = &bytes[HEADER_LEN..];
    if crc32fast::hash(body) != header.checksum {
        return Err(IndexError::Checksum);
    }
    let mut entries = Vec::with_capacity(header.count.min(1 << 20) as usize);
    let mut pos = 0;
    for _ in 0..header.count {
        let ((id, values), next) = decode_record(body, pos, header.dim)?;
        let v = EmbeddingVector::new(values).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        entries.push((id, v));
        pos = next;
    }
    if pos != body.len() {
        return Err(IndexError::Corrupt("trailing bytes after records".into()));
    }
    Ok((header.dim, entries))
}

pub fn save_index(store: &dyn VectorStore, path: &Path) -> Result<IndexBackendDescriptor, IndexError> {
    write_index_file(path, store.dim(), &store.entries()?)?;
    Ok(IndexBackendDescriptor {
        backend_name: store.descriptor().backend_name,
        supports_persistence: true,
    })
}

/// Loads a saved index into memory. Fails without a partial index on any
/// checksum or format error.
pub fn load_index(path: &Path) -> Result<(MemoryIndex, IndexBackendDescriptor), IndexError> {
    let (dim, entries) = read_index_file(path)?;
    let idx = MemoryIndex::from_entries(dim, entries)?;
    let descriptor = IndexBackendDescriptor {
        backend_name: super::BACKEND_IN_MEMORY.to_string(),
        supports_persistence: true,
    };
    Ok((idx, descriptor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use proptest::prelude::*;

    fn sample(n: usize, dim: usize) -> MemoryIndex {
        let e = HashEmbedder::new(dim);
        let mut idx = MemoryIndex::new(dim);
        idx.upsert(
            (0..n)
                .map(|i| {
                    let id = format!("chunk-{i:04}");
                    let v = EmbeddingVector::new(e.vector(&id)).unwrap();
                    (id, v)
                })
                .collect(),
        )
        .unwrap();
        idx
    }

    #[test]
    fn round_trip_preserves_search() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.rgdx");
        let idx = sample(1000, 64);
        save_index(&idx, &path).unwrap();
        assert!(fs::metadata(&path).unwrap().len() > 0);
        let (loaded, desc) = load_index(&path).unwrap();
        assert!(desc.supports_persistence);
        assert_eq!(loaded.len(), 1000);
        let e = HashEmbedder::new(64);
        for q in ["alpha", "beta", "chunk-0007"] {
            let qv = EmbeddingVector::new(e.vector(q)).unwrap();
            assert_eq!(
                idx.search_topk(&qv, 10).unwrap(),
                loaded.search_topk(&qv, 10).unwrap()
            );
        }
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.rgdx");
        save_index(&sample(2, 3), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"RGDX");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        // two records of 4 + 10 id bytes + 12 vector bytes
        assert_eq!(bytes.len(), HEADER_LEN + 2 * (4 + 10 + 12));
    }

    #[test]
    fn missing_file() {
        let err = load_index(Path::new("/nonexistent/idx.rgdx")).unwrap_err();
        assert_eq!(err.to_string(), "index file not found");
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.rgdx");
        save_index(&sample(5, 8), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_index(&path), Err(IndexError::Checksum)));
    }

    proptest! {
        #[test]
        fn encode_decode_bit_exact(
            raw in prop::collection::vec(("[a-z0-9é]{1,12}", prop::collection::vec(-1e3f32..1e3, 4)), 1..20)
        ) {
            let mut entries: Vec<(String, EmbeddingVector)> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (id, vals) in raw {
                if vals.iter().all(|v| *v == 0.0) || !seen.insert(id.clone()) {
                    continue;
                }
                entries.push((id, EmbeddingVector::new(vals).unwrap()));
            }
            prop_assume!(!entries.is_empty());
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.rgdx");
            write_index_file(&path, 4, &entries).unwrap();
            let (dim, back) = read_index_file(&path).unwrap();
            prop_assert_eq!(dim, 4);
            prop_assert_eq!(back, entries);
        }
    }
}
