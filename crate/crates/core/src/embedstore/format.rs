//! `EMBS` binary layout, little-endian throughout:
//!
//! ```text
//! header:  "EMBS" | u32 version (=1) | u32 dim | u64 record count
//! record:  u16 id_len | id (UTF-8) | u8 role | i32 class_index
//!          | u16 tag_count | (u16 key_len | key | u16 val_len | val)*
//!          | dim * f32
//! ```

use std::collections::BTreeMap;

use super::{check_dim, Embedding, EmbeddingRecord, Role};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMBS";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_records(dim: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::Corrupt(format!("dim {dim} too large")))?;
    let mut out = Vec::with_capacity(20 + records.len() * (dim * 4 + 32));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for rec in records {
        check_dim(dim, rec.embedding.dim())?;
        put_str(&mut out, &rec.id)?;
        out.push(rec.role.code());
        out.extend_from_slice(&rec.class_index.to_le_bytes());
        let tag_count = u16::try_from(rec.axis_tags.len())
            .map_err(|_| Error::Corrupt(format!("record {:?} has too many tags", rec.id)))?;
        out.extend_from_slice(&tag_count.to_le_bytes());
        for (k, v) in &rec.axis_tags {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        for v in rec.embedding.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Corrupt(format!("string of {} bytes exceeds u16 length", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        let slice = self.buf.get(self.pos..end).ok_or(Error::TruncatedFile)?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn str(&mut self) -> Result<String> {
        let len = usize::from(self.u16()?);
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8 string".into()))
    }
}

/// Decodes a whole EMBS buffer, returning the header dim and the records.
pub fn decode_records(bytes: &[u8]) -> Result<(usize, Vec<EmbeddingRecord>)> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::TruncatedFile);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dim = r.u32()? as usize;
    let count = u64::from_le_bytes(r.array()?);
    if dim == 0 && count > 0 {
        return Err(Error::Corrupt("zero dimension".into()));
    }
    // each record needs at least 9 header bytes plus its floats
    let min_record = 9 + dim as u64 * 4;
    if count.saturating_mul(min_record) > (bytes.len() - r.pos) as u64 {
        return Err(Error::TruncatedFile);
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = r.str()?;
        let role_code = r.array::<1>()?[0];
        let role = Role::from_code(role_code)
            .ok_or_else(|| Error::Corrupt(format!("unknown role code {role_code}")))?;
        let class_index = i32::from_le_bytes(r.array()?);
        let tag_count = r.u16()?;
        let mut axis_tags = BTreeMap::new();
        for _ in 0..tag_count {
            let k = r.str()?;
            let v = r.str()?;
            axis_tags.insert(k, v);
        }
        let values = r
            .take(dim * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(EmbeddingRecord {
            id,
            role,
            class_index,
            axis_tags,
            embedding: Embedding::new(values)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after last record",
            bytes.len() - r.pos
        )));
    }
    Ok((dim, records))
}
