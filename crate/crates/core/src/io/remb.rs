//! REMB: a little-endian container of per-residue embedding matrices.
//!
//! Layout: `b"REMB"`, version `u16 = 1`, `D: u32`, record count `u64`, then
//! per record the id length `u16`, the UTF-8 id, `L: u32` and `L·D` `f32`
//! values row-major.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::ResidueEmbeddingMatrix;

pub const MAGIC: &[u8; 4] = b"REMB";
pub const VERSION: u16 = 1;

pub fn encode_remb(dim: usize, mats: &[ResidueEmbeddingMatrix]) -> Result<Vec<u8>> {
    if dim == 0 || dim > u32::MAX as usize {
        return Err(Error::Input(format!(
            "embedding dimension {dim} is not representable"
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(mats.len() as u64).to_le_bytes());
    for m in mats {
        if m.dim != dim {
            return Err(Error::Dimension(format!(
                "matrix {} has dimension {}, expected {dim}",
                m.id, m.dim
            )));
        }
        let id = m.id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::Input(format!("id {} is too long", m.id)))?;
        let rows = u32::try_from(m.rows)
            .map_err(|_| Error::Input(format!("matrix {} has too many rows", m.id)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&rows.to_le_bytes());
        for v in &m.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_remb(path: &Path, dim: usize, mats: &[ResidueEmbeddingMatrix]) -> Result<()> {
    super::write_file(path, &encode_remb(dim, mats)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.origin,
                format!(
                    "truncated at byte offset {} while reading {what} ({n} bytes needed, {} left)",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes a REMB byte buffer, preserving record order.
pub fn decode_remb(bytes: &[u8], origin: &Path) -> Result<(usize, Vec<ResidueEmbeddingMatrix>)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        origin,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(origin, "bad magic bytes, not a REMB file"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported REMB version {version}"),
        ));
    }
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::format(origin, "embedding dimension is 0"));
    }
    let count = r.u64("record count")?;
    let mut seen = std::collections::BTreeSet::new();
    let mut mats = Vec::new();
    for rec in 0..count {
        let start = r.pos;
        let id_len = r.u16("id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "id")?)
            .map_err(|_| {
                Error::format(
                    origin,
                    format!("record {rec} at byte offset {start}: id is not UTF-8"),
                )
            })?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::format(
                origin,
                format!("duplicate id {id} at byte offset {start}"),
            ));
        }
        let rows = r.u32("row count")? as usize;
        let n = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(origin, format!("record {id}: size overflow")))?;
        let raw = r.take(n, "embedding values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        mats.push(ResidueEmbeddingMatrix {
            id,
            rows,
            dim,
            values,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            origin,
            format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            ),
        ));
    }
    Ok((dim, mats))
}

pub fn read_remb(path: &Path) -> Result<BTreeMap<String, ResidueEmbeddingMatrix>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, mats) = decode_remb(&bytes, path)?;
    Ok(mats.into_iter().map(|m| (m.id.clone(), m)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{toy_residue_embedder, ProteinSequence};

    fn mats() -> Vec<ResidueEmbeddingMatrix> {
        ["MKVLA", "ACDEFGHIK", "WY"]
            .iter()
            .enumerate()
            .map(|(i, s)| {
                toy_residue_embedder(
                    &ProteinSequence::new(format!("p{i}"), s, false).unwrap(),
                    4,
                    3,
                )
            })
            .collect()
    }

    #[test]
    fn round_trip_bit_identical() {
        let bytes = encode_remb(4, &mats()).unwrap();
        let (dim, back) = decode_remb(&bytes, Path::new("x")).unwrap();
        assert_eq!(dim, 4);
        assert_eq!(back, mats());
        assert_eq!(encode_remb(4, &back).unwrap(), bytes);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_remb(4, &mats()).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        let err = decode_remb(cut, Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("truncated at byte offset"), "{err}");
    }

    #[test]
    fn zero_dim_header() {
        let mut bytes = encode_remb(4, &[]).unwrap();
        bytes[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_remb(&bytes, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn bad_magic_version_and_duplicates() {
        let mut bytes = encode_remb(4, &mats()).unwrap();
        bytes[0] = b'X';
        assert!(decode_remb(&bytes, Path::new("x")).is_err());
        let mut bytes = encode_remb(4, &mats()).unwrap();
        bytes[4] = 2;
        assert!(decode_remb(&bytes, Path::new("x")).is_err());
        let mut m = mats();
        m[1].id = "p0".into();
        let bytes = encode_remb(4, &m).unwrap();
        assert!(decode_remb(&bytes, Path::new("x"))
            .unwrap_err()
            .to_string()
            .contains("duplicate id p0"));
    }
}
