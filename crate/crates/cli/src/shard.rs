//! Shard files: a fixed 60-byte header followed by little-endian symbols. The
//! header carries the config digest so a shard can never be fed to a decoder
//! built from a different configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pgbk_core::piggyback::Payload;
use pgbk_core::Width;
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"PGBK";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 60;
/// Header flag: the shard was written under an unbalanced injection table.
pub const FLAG_SUBOPTIMAL: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u16,
    /// 0 systematic, 1 parity, 2 mixed.
    pub role: u8,
    pub flags: u8,
    /// 1-based node id.
    pub node: u32,
    pub payload_symbols: u64,
    pub original_len: u64,
    pub digest: [u8; 32],
}

impl ShardHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6] = self.role;
        out[7] = self.flags;
        out[8..12].copy_from_slice(&self.node.to_le_bytes());
        out[12..20].copy_from_slice(&self.payload_symbols.to_le_bytes());
        out[20..28].copy_from_slice(&self.original_len.to_le_bytes());
        out[28..60].copy_from_slice(&self.digest);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<ShardHeader> {
        if bytes.len() < HEADER_LEN {
            bail!("shard too short for a header ({} bytes)", bytes.len());
        }
        if bytes[0..4] != MAGIC {
            bail!("not a shard file (bad magic)");
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            bail!("unsupported shard version {version}");
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&bytes[28..60]);
        Ok(ShardHeader {
            version,
            role: bytes[6],
            flags: bytes[7],
            node: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            payload_symbols: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
            original_len: u64::from_le_bytes(bytes[20..28].try_into().unwrap()),
            digest,
        })
    }
}

pub fn shard_filename(node1: usize) -> String {
    format!("shard-{node1:03}.pgbk")
}

/// Writes through a sibling temp file and renames, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .context("target path has no file name")?;
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn symbols_to_bytes<'a>(symbols: impl Iterator<Item = &'a u16>, width: Width) -> Vec<u8> {
    let mut out = Vec::new();
    match width {
        Width::W8 => out.extend(symbols.map(|&s| s as u8)),
        Width::W16 => {
            for &s in symbols {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    out
}

/// Packs bytes into exactly `total_symbols` symbols, zero-padding the tail.
pub fn bytes_to_symbols(bytes: &[u8], width: Width, total_symbols: usize) -> Result<Vec<u16>> {
    let sb = width.symbol_bytes();
    let needed = bytes.len().div_ceil(sb);
    if needed > total_symbols {
        bail!(
            "input of {} bytes needs {needed} symbols but the code carries {total_symbols} per codeword",
            bytes.len()
        );
    }
    let mut out = vec![0u16; total_symbols];
    for (slot, chunk) in out.iter_mut().zip(bytes.chunks(sb)) {
        *slot = match width {
            Width::W8 => chunk[0] as u16,
            Width::W16 => u16::from_le_bytes([chunk[0], chunk.get(1).copied().unwrap_or(0)]),
        };
    }
    Ok(out)
}

pub fn write_shard(
    dir: &Path,
    header: &ShardHeader,
    cells: &[Vec<u16>],
    width: Width,
) -> Result<PathBuf> {
    let mut bytes = header.to_bytes().to_vec();
    bytes.extend(symbols_to_bytes(cells.iter().flatten(), width));
    let path = dir.join(shard_filename(header.node as usize));
    write_atomic(&path, &bytes)?;
    Ok(path)
}

pub struct ReadShard {
    pub header: ShardHeader,
    pub payload: Payload,
}

pub fn read_shard(path: &Path, width: Width, cells: usize, cell_len: usize) -> Result<ReadShard> {
    let bytes = fs::read(path).with_context(|| format!("reading shard {}", path.display()))?;
    let header = ShardHeader::parse(&bytes)?;
    let sb = width.symbol_bytes();
    let expected = HEADER_LEN + cells * cell_len * sb;
    if bytes.len() != expected || header.payload_symbols != (cells * cell_len) as u64 {
        bail!(
            "shard {} holds {} payload symbols in {} bytes, expected {} symbols",
            path.display(),
            header.payload_symbols,
            bytes.len(),
            cells * cell_len
        );
    }
    let body = &bytes[HEADER_LEN..];
    let cells_vec: Vec<Vec<u16>> = (0..cells)
        .map(|c| {
            (0..cell_len)
                .map(|t| {
                    let o = (c * cell_len + t) * sb;
                    match width {
                        Width::W8 => body[o] as u16,
                        Width::W16 => u16::from_le_bytes([body[o], body[o + 1]]),
                    }
                })
                .collect()
        })
        .collect();
    Ok(ReadShard {
        header,
        payload: Payload { cells: cells_vec },
    })
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub mode: String,
    pub nodes: usize,
    pub original_len: u64,
    pub payload_symbols_per_node: u64,
    pub shards: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trips() {
        let h = ShardHeader {
            version: VERSION,
            role: 1,
            flags: FLAG_SUBOPTIMAL,
            node: 7,
            payload_symbols: 243,
            original_len: 1000,
            digest: [0xAB; 32],
        };
        assert_eq!(ShardHeader::parse(&h.to_bytes()).unwrap(), h);
        let mut bad = h.to_bytes();
        bad[0] = b'X';
        assert!(ShardHeader::parse(&bad).is_err());
    }

    #[test]
    fn symbol_packing_round_trips_and_pads() {
        let bytes = [1u8, 2, 3];
        let w8 = bytes_to_symbols(&bytes, Width::W8, 5).unwrap();
        assert_eq!(w8, vec![1, 2, 3, 0, 0]);
        let w16 = bytes_to_symbols(&bytes, Width::W16, 3).unwrap();
        assert_eq!(w16, vec![0x0201, 0x0003, 0]);
        assert_eq!(symbols_to_bytes(w16.iter(), Width::W16)[..3], bytes);
        assert!(bytes_to_symbols(&bytes, Width::W8, 2).is_err());
    }
}
