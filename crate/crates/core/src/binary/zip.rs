//! Classic (non-ZIP64) PKWARE archive reader.

use std::io::Read;

use flate2::read::DeflateDecoder;
use thiserror::Error;

use super::LeBytes;

const EOCD_SIG: u32 = 0x0605_4B50;
const CDH_SIG: u32 = 0x0201_4B50;
const LFH_SIG: u32 = 0x0403_4B50;

const EOCD_LEN: usize = 22;
const CDH_LEN: usize = 46;
const LFH_LEN: usize = 30;
const MAX_COMMENT: usize = 0xFFFF;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt zip: {0}")]
pub struct ZipError(pub String);

fn corrupt(msg: impl Into<String>) -> ZipError {
    ZipError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompressionMethod {
    Stored,
    Deflate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZipEntry {
    pub name: String,
    pub uncompressed_size: u64,
    pub crc32: u32,
    pub method: CompressionMethod,
    pub data: Vec<u8>,
}

impl ZipEntry {
    pub fn is_dir(&self) -> bool {
        self.name.ends_with('/')
    }
}

struct Eocd {
    total_entries: usize,
    cd_size: usize,
    cd_offset: usize,
}

fn find_eocd(bytes: &[u8]) -> Result<Eocd, ZipError> {
    if bytes.len() < EOCD_LEN {
        return Err(corrupt("missing end of central directory"));
    }
    let last = bytes.len() - EOCD_LEN;
    let first = last.saturating_sub(MAX_COMMENT);
    let pos = (first..=last)
        .rev()
        .find(|&p| bytes.u32_at(p) == Some(EOCD_SIG))
        .ok_or_else(|| corrupt("missing end of central directory"))?;

    // fields are all in range: pos <= len - 22
    let entries_here = bytes.u16_at(pos + 8).unwrap_or_default();
    let total_entries = bytes.u16_at(pos + 10).unwrap_or_default();
    let cd_size = bytes.u32_at(pos + 12).unwrap_or_default();
    let cd_offset = bytes.u32_at(pos + 16).unwrap_or_default();

    if cd_size == u32::MAX || cd_offset == u32::MAX || total_entries == u16::MAX {
        return Err(corrupt("zip64 unsupported"));
    }
    if entries_here != total_entries {
        return Err(corrupt("multi-disk archives unsupported"));
    }
    Ok(Eocd {
        total_entries: total_entries as usize,
        cd_size: cd_size as usize,
        cd_offset: cd_offset as usize,
    })
}

/// Reads every entry of a ZIP archive, in central-directory order.
///
/// Stored entries are copied, deflated entries are inflated, and every
/// entry's CRC-32 is checked against the central directory.
pub fn read_zip_entries(bytes: &[u8]) -> Result<Vec<ZipEntry>, ZipError> {
    if bytes.is_empty() {
        return Err(corrupt("empty input"));
    }
    let eocd = find_eocd(bytes)?;
    let cd_end = eocd
        .cd_offset
        .checked_add(eocd.cd_size)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("central directory out of bounds"))?;

    let mut entries = Vec::with_capacity(eocd.total_entries.min(cd_end / CDH_LEN + 1));
    let mut pos = eocd.cd_offset;
    for i in 0..eocd.total_entries {
        let hdr = bytes
            .get(pos..)
            .filter(|rest| rest.len() >= CDH_LEN && pos + CDH_LEN <= cd_end)
            .ok_or_else(|| corrupt(format!("central directory entry {i} truncated")))?;
        if hdr.u32_at(0) != Some(CDH_SIG) {
            return Err(corrupt(format!("bad central directory signature at entry {i}")));
        }
        let field16 = |o: usize| hdr.u16_at(o).unwrap_or_default() as usize;
        let field32 = |o: usize| hdr.u32_at(o).unwrap_or_default();
        let flags = field16(8);
        let method = field16(10);
        let crc32 = field32(16);
        let compressed_size = field32(20) as usize;
        let uncompressed_size = field32(24);
        let name_len = field16(28);
        let extra_len = field16(30);
        let comment_len = field16(32);
        let local_offset = field32(42) as usize;

        let name_bytes = hdr
            .get(CDH_LEN..CDH_LEN + name_len)
            .ok_or_else(|| corrupt(format!("entry {i} name out of bounds")))?;
        let name = String::from_utf8_lossy(name_bytes).into_owned();
        pos += CDH_LEN + name_len + extra_len + comment_len;
        if pos > cd_end {
            return Err(corrupt(format!("entry {name:?} overruns central directory")));
        }

        if compressed_size == u32::MAX as usize || uncompressed_size == u32::MAX {
            return Err(corrupt("zip64 unsupported"));
        }
        if flags & 0x1 != 0 {
            return Err(corrupt(format!("entry {name:?} is encrypted")));
        }
        let method = match method {
            0 => CompressionMethod::Stored,
            8 => CompressionMethod::Deflate,
            other => {
                return Err(corrupt(format!(
                    "entry {name:?} uses unsupported compression method {other}"
                )))
            }
        };

        let local = bytes
            .get(local_offset..)
            .filter(|rest| rest.len() >= LFH_LEN)
            .ok_or_else(|| corrupt(format!("local header of {name:?} out of bounds")))?;
        if local.u32_at(0) != Some(LFH_SIG) {
            return Err(corrupt(format!("bad local header signature for {name:?}")));
        }
        let data_start =
            LFH_LEN + local.u16_at(26).unwrap_or_default() as usize + local.u16_at(28).unwrap_or_default() as usize;
        let raw = data_start
            .checked_add(compressed_size)
            .and_then(|end| local.get(data_start..end))
            .ok_or_else(|| corrupt(format!("data of {name:?} out of bounds")))?;

        let data = match method {
            CompressionMethod::Stored => {
                if raw.len() != uncompressed_size as usize {
                    return Err(corrupt(format!("stored entry {name:?} has mismatched sizes")));
                }
                raw.to_vec()
            }
            CompressionMethod::Deflate => {
                inflate(raw, uncompressed_size as usize).map_err(|e| corrupt(format!("entry {name:?}: {e}")))?
            }
        };

        let actual = crc32fast::hash(&data);
        if actual != crc32 {
            return Err(corrupt(format!(
                "crc mismatch for {name:?}: expected {crc32:08x}, got {actual:08x}"
            )));
        }
        entries.push(ZipEntry {
            name,
            uncompressed_size: uncompressed_size as u64,
            crc32,
            method,
            data,
        });
    }
    Ok(entries)
}

fn inflate(raw: &[u8], expected: usize) -> Result<Vec<u8>, String> {
    // one extra byte detects streams that inflate past the declared size
    let mut out = Vec::with_capacity(expected.min(raw.len().saturating_mul(16)));
    DeflateDecoder::new(raw)
        .take(expected as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| format!("inflate failed: {e}"))?;
    if out.len() != expected {
        return Err(format!(
            "inflated size {} does not match declared size {expected}",
            out.len()
        ));
    }
    Ok(out)
}
