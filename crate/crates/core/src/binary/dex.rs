//! DEX constant-pool extraction: strings, type descriptors and method
//! references. Prototypes, fields, class definitions and code items are not
//! read.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LeBytes;

const HEADER_SIZE: usize = 0x70;
const ENDIAN_CONSTANT: u32 = 0x1234_5678;

const STRING_IDS: usize = 0x38;
const TYPE_IDS: usize = 0x40;
const METHOD_IDS: usize = 0x58;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt dex: {0}")]
pub struct DexError(pub String);

fn corrupt(msg: impl Into<String>) -> DexError {
    DexError(msg.into())
}

/// A method reference reduced to its owning class and simple name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MethodSig {
    pub class_descriptor: String,
    pub name: String,
}

impl MethodSig {
    pub fn new(class_descriptor: impl Into<String>, name: impl Into<String>) -> Self {
        MethodSig {
            class_descriptor: class_descriptor.into(),
            name: name.into(),
        }
    }
}

impl std::fmt::Display for MethodSig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.class_descriptor, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DexPool {
    pub strings: Vec<String>,
    pub type_descriptors: Vec<String>,
    pub method_refs: Vec<MethodSig>,
}

impl DexPool {
    /// `(string_count, type_count, method_count)`
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.strings.len(), self.type_descriptors.len(), self.method_refs.len())
    }
}

/// Reads the `(size, offset)` pair of an id section and checks that
/// `size * item_size` bytes starting at `offset` lie inside the file.
fn section(bytes: &[u8], at: usize, item_size: usize, what: &str) -> Result<(usize, usize), DexError> {
    let size = bytes.u32_at(at).unwrap_or_default() as usize;
    let off = bytes.u32_at(at + 4).unwrap_or_default() as usize;
    if size == 0 {
        return Ok((0, off));
    }
    size.checked_mul(item_size)
        .and_then(|len| off.checked_add(len))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt(format!("{what} section ({size} items at {off:#x}) out of bounds")))?;
    Ok((size, off))
}

/// Parses the header and constant pools of a DEX image.
pub fn extract_dex_pool(bytes: &[u8]) -> Result<DexPool, DexError> {
    if bytes.len() < HEADER_SIZE {
        return Err(corrupt(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != b"dex\n" || bytes[7] != 0 {
        return Err(corrupt("bad magic"));
    }
    match &bytes[4..7] {
        b"035" | b"036" | b"037" | b"038" | b"039" => {}
        v => return Err(corrupt(format!("unsupported version {:?}", String::from_utf8_lossy(v)))),
    }
    let endian = bytes.u32_at(0x28).unwrap_or_default();
    if endian != ENDIAN_CONSTANT {
        return Err(corrupt(format!("unsupported endian tag {endian:#010x}")));
    }

    let (string_count, string_off) = section(bytes, STRING_IDS, 4, "string_ids")?;
    let (type_count, type_off) = section(bytes, TYPE_IDS, 4, "type_ids")?;
    let (method_count, method_off) = section(bytes, METHOD_IDS, 8, "method_ids")?;

    let mut strings = Vec::with_capacity(string_count);
    for i in 0..string_count {
        let data_off = bytes.u32_at(string_off + 4 * i).unwrap_or_default() as usize;
        let s = read_string_data(bytes, data_off)
            .ok_or_else(|| corrupt(format!("string_data_item {i} at {data_off:#x} out of bounds")))?;
        strings.push(s);
    }

    let mut type_descriptors = Vec::with_capacity(type_count);
    for i in 0..type_count {
        let idx = bytes.u32_at(type_off + 4 * i).unwrap_or_default() as usize;
        let desc = strings
            .get(idx)
            .ok_or_else(|| corrupt(format!("type_id {i} references string {idx} out of bounds")))?;
        if !desc.starts_with(['L', '[', 'Z', 'B', 'S', 'C', 'I', 'J', 'F', 'D', 'V']) {
            return Err(corrupt(format!("type_id {i} has invalid descriptor {desc:?}")));
        }
        type_descriptors.push(desc.clone());
    }

    let mut method_refs = Vec::with_capacity(method_count);
    for i in 0..method_count {
        let base = method_off + 8 * i;
        let class_idx = bytes.u16_at(base).unwrap_or_default() as usize;
        let name_idx = bytes.u32_at(base + 4).unwrap_or_default() as usize;
        let class_descriptor = type_descriptors
            .get(class_idx)
            .ok_or_else(|| corrupt(format!("method_id {i} class index {class_idx} out of bounds")))?;
        let name = strings
            .get(name_idx)
            .ok_or_else(|| corrupt(format!("method_id {i} name index {name_idx} out of bounds")))?;
        method_refs.push(MethodSig::new(class_descriptor.clone(), name.clone()));
    }

    Ok(DexPool {
        strings,
        type_descriptors,
        method_refs,
    })
}

/// ULEB128 length prefix followed by NUL-terminated MUTF-8 data. The length
/// prefix is only used for validation of the encoding, never for slicing.
fn read_string_data(bytes: &[u8], off: usize) -> Option<String> {
    let (_utf16_len, n) = read_uleb128(bytes.get(off..)?)?;
    let start = off + n;
    let rest = bytes.get(start..)?;
    let end = rest.iter().position(|&b| b == 0)?;
    Some(decode_mutf8(&rest[..end]))
}

fn read_uleb128(bytes: &[u8]) -> Option<(u32, usize)> {
    let mut value: u32 = 0;
    for (i, &b) in bytes.iter().take(5).enumerate() {
        value |= ((b & 0x7F) as u32) << (7 * i);
        if b & 0x80 == 0 {
            return Some((value, i + 1));
        }
    }
    None
}

/// Decodes modified UTF-8: NUL may appear as `C0 80` and supplementary
/// characters arrive as two separately encoded surrogates. Invalid sequences
/// and unpaired surrogates become U+FFFD.
pub fn decode_mutf8(bytes: &[u8]) -> String {
    let mut units: Vec<u16> = Vec::with_capacity(bytes.len());
    let cont = |b: Option<&u8>| b.filter(|&&b| b & 0xC0 == 0x80).map(|&b| (b & 0x3F) as u16);
    let mut i = 0;
    while i < bytes.len() {
        let b0 = bytes[i];
        if b0 < 0x80 {
            units.push(b0 as u16);
            i += 1;
        } else if b0 & 0xE0 == 0xC0 {
            match cont(bytes.get(i + 1)) {
                Some(c1) => {
                    units.push(((b0 & 0x1F) as u16) << 6 | c1);
                    i += 2;
                }
                None => {
                    units.push(0xFFFD);
                    i += 1;
                }
            }
        } else if b0 & 0xF0 == 0xE0 {
            match (cont(bytes.get(i + 1)), cont(bytes.get(i + 2))) {
                (Some(c1), Some(c2)) => {
                    units.push(((b0 & 0x0F) as u16) << 12 | c1 << 6 | c2);
                    i += 3;
                }
                _ => {
                    units.push(0xFFFD);
                    i += 1;
                }
            }
        } else {
            units.push(0xFFFD);
            i += 1;
        }
    }
    String::from_utf16_lossy(&units)
}
