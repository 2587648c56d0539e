//! Android binary XML decoder.
//!
//! The format is a flat stream of chunks, each starting with
//! `{type: u16, header_size: u16, chunk_size: u32}`. The document chunk
//! (0x0003) wraps a string pool, an optional resource map and a sequence of
//! namespace/element/CDATA chunks that encode the tree in document order.
//! Styles and resource ids are not needed for manifest facts and are skipped.

use std::collections::HashMap;

use thiserror::Error;

use super::LeBytes;

const RES_XML_TYPE: u16 = 0x0003;
const RES_STRING_POOL_TYPE: u16 = 0x0001;
const RES_XML_RESOURCE_MAP_TYPE: u16 = 0x0180;
const RES_XML_START_NAMESPACE_TYPE: u16 = 0x0100;
const RES_XML_END_NAMESPACE_TYPE: u16 = 0x0101;
const RES_XML_START_ELEMENT_TYPE: u16 = 0x0102;
const RES_XML_END_ELEMENT_TYPE: u16 = 0x0103;
const RES_XML_CDATA_TYPE: u16 = 0x0104;

const UTF8_FLAG: u32 = 0x100;
const NO_INDEX: u32 = 0xFFFF_FFFF;

/// Element nesting deeper than this is rejected; manifests are shallow.
const MAX_DEPTH: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt binary xml: {0}")]
pub struct AxmlError(pub String);

fn corrupt(msg: impl Into<String>) -> AxmlError {
    AxmlError(msg.into())
}

/// A typed attribute value as stored in `Res_value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrValue {
    String(String),
    Int(i32),
    Hex(u32),
    Bool(bool),
    Reference(u32),
    Other { data_type: u8, data: u32 },
}

impl AttrValue {
    fn from_typed(data_type: u8, data: u32, raw: Option<String>, pool: &StringPool) -> Result<Self, AxmlError> {
        Ok(match data_type {
            0x03 => match raw {
                Some(s) => AttrValue::String(s),
                None => AttrValue::String(pool.get(data)?.to_owned()),
            },
            0x10 => AttrValue::Int(data as i32),
            0x11 => AttrValue::Hex(data),
            0x12 => AttrValue::Bool(data != 0),
            0x01 => AttrValue::Reference(data),
            other => AttrValue::Other { data_type: other, data },
        })
    }

    /// Text rendering used when the value is compared against text XML.
    pub fn render(&self) -> String {
        match self {
            AttrValue::String(s) => s.clone(),
            AttrValue::Int(v) => v.to_string(),
            AttrValue::Hex(v) => format!("0x{v:08x}"),
            AttrValue::Bool(b) => b.to_string(),
            AttrValue::Reference(v) => format!("@{v:08x}"),
            AttrValue::Other { data, .. } => data.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlAttribute {
    pub namespace: Option<String>,
    pub name: String,
    pub value: AttrValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlNode {
    pub name: String,
    pub namespace: Option<String>,
    pub attributes: Vec<XmlAttribute>,
    pub children: Vec<XmlNode>,
}

impl XmlNode {
    /// First attribute with the given local name, any namespace.
    pub fn attr(&self, local_name: &str) -> Option<&AttrValue> {
        self.attributes.iter().find(|a| a.name == local_name).map(|a| &a.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlTree {
    pub root: XmlNode,
}

#[derive(Debug, Default)]
struct StringPool {
    strings: Vec<String>,
}

impl StringPool {
    fn get(&self, idx: u32) -> Result<&str, AxmlError> {
        self.strings.get(idx as usize).map(String::as_str).ok_or_else(|| {
            corrupt(format!(
                "string index {idx} out of pool bounds ({})",
                self.strings.len()
            ))
        })
    }

    fn get_opt(&self, idx: u32) -> Result<Option<&str>, AxmlError> {
        if idx == NO_INDEX {
            Ok(None)
        } else {
            self.get(idx).map(Some)
        }
    }

    fn parse(chunk: &[u8], header_size: usize) -> Result<Self, AxmlError> {
        let count = chunk.u32_at(8).ok_or_else(|| corrupt("string pool header truncated"))? as usize;
        let flags = chunk
            .u32_at(16)
            .ok_or_else(|| corrupt("string pool header truncated"))?;
        let strings_start = chunk
            .u32_at(20)
            .ok_or_else(|| corrupt("string pool header truncated"))? as usize;
        let utf8 = flags & UTF8_FLAG != 0;

        let offsets_end = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(header_size))
            .filter(|&end| end <= chunk.len())
            .ok_or_else(|| corrupt("string offsets overrun pool chunk"))?;
        let data = chunk
            .get(strings_start..)
            .filter(|_| count == 0 || strings_start >= offsets_end)
            .ok_or_else(|| corrupt("string data start out of bounds"))?;

        let mut strings = Vec::with_capacity(count);
        for i in 0..count {
            let off = chunk.u32_at(header_size + 4 * i).unwrap_or_default() as usize;
            let s = if utf8 {
                read_utf8(data, off)
            } else {
                read_utf16(data, off)
            }
            .ok_or_else(|| corrupt(format!("string {i} overruns pool")))?;
            strings.push(s);
        }
        Ok(StringPool { strings })
    }
}

fn read_utf8_len(data: &[u8], off: usize) -> Option<(usize, usize)> {
    let b0 = data.u8_at(off)? as usize;
    if b0 & 0x80 != 0 {
        let b1 = data.u8_at(off + 1)? as usize;
        Some((((b0 & 0x7F) << 8) | b1, 2))
    } else {
        Some((b0, 1))
    }
}

fn read_utf8(data: &[u8], off: usize) -> Option<String> {
    let (_utf16_len, n1) = read_utf8_len(data, off)?;
    let (byte_len, n2) = read_utf8_len(data, off + n1)?;
    let start = off + n1 + n2;
    let bytes = data.get(start..start.checked_add(byte_len)?)?;
    Some(String::from_utf8_lossy(bytes).into_owned())
}

fn read_utf16(data: &[u8], off: usize) -> Option<String> {
    let first = data.u16_at(off)? as usize;
    let (len, start) = if first & 0x8000 != 0 {
        let second = data.u16_at(off + 2)? as usize;
        (((first & 0x7FFF) << 16) | second, off + 4)
    } else {
        (first, off + 2)
    };
    let bytes = data.get(start..start.checked_add(len.checked_mul(2)?)?)?;
    let units: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Some(String::from_utf16_lossy(&units))
}

struct ChunkHeader {
    kind: u16,
    header_size: usize,
    size: usize,
}

fn chunk_header(buf: &[u8], pos: usize) -> Result<ChunkHeader, AxmlError> {
    let kind = buf.u16_at(pos);
    let header_size = buf.u16_at(pos + 2);
    let size = buf.u32_at(pos + 4);
    let (Some(kind), Some(header_size), Some(size)) = (kind, header_size, size) else {
        return Err(corrupt(format!("chunk header at offset {pos} truncated")));
    };
    let (header_size, size) = (header_size as usize, size as usize);
    if header_size < 8 || size < header_size {
        return Err(corrupt(format!(
            "chunk at offset {pos} has invalid sizes (header {header_size}, chunk {size})"
        )));
    }
    if size > buf.len() - pos {
        return Err(corrupt(format!(
            "chunk at offset {pos} declares {size} bytes but only {} remain",
            buf.len() - pos
        )));
    }
    Ok(ChunkHeader {
        kind,
        header_size,
        size,
    })
}

/// Decodes an AXML document into an element tree.
pub fn decode_axml(bytes: &[u8]) -> Result<XmlTree, AxmlError> {
    let doc = chunk_header(bytes, 0)?;
    if doc.kind != RES_XML_TYPE {
        return Err(corrupt(format!("bad magic: first chunk type {:#06x}", doc.kind)));
    }
    let buf = &bytes[..doc.size];

    let mut pool: Option<StringPool> = None;
    let mut namespaces: HashMap<String, Vec<String>> = HashMap::new();
    let mut stack: Vec<XmlNode> = Vec::new();
    let mut root: Option<XmlNode> = None;

    let mut pos = doc.header_size;
    while pos < buf.len() {
        let hdr = chunk_header(buf, pos)?;
        let chunk = &buf[pos..pos + hdr.size];
        let body = &chunk[hdr.header_size..];
        pos += hdr.size;

        match hdr.kind {
            RES_STRING_POOL_TYPE => {
                if pool.is_some() {
                    return Err(corrupt("duplicate string pool"));
                }
                if hdr.header_size < 0x1C {
                    return Err(corrupt("string pool header too small"));
                }
                pool = Some(StringPool::parse(chunk, hdr.header_size)?);
            }
            RES_XML_RESOURCE_MAP_TYPE => {}
            RES_XML_START_NAMESPACE_TYPE | RES_XML_END_NAMESPACE_TYPE => {
                let pool = pool.as_ref().ok_or_else(|| corrupt("namespace before string pool"))?;
                let prefix = body.u32_at(0).ok_or_else(|| corrupt("namespace chunk truncated"))?;
                let uri = body.u32_at(4).ok_or_else(|| corrupt("namespace chunk truncated"))?;
                let prefix = pool.get_opt(prefix)?.unwrap_or_default().to_owned();
                let uri = pool.get(uri)?.to_owned();
                if hdr.kind == RES_XML_START_NAMESPACE_TYPE {
                    namespaces.entry(uri).or_default().push(prefix);
                } else if let Some(prefixes) = namespaces.get_mut(&uri) {
                    prefixes.pop();
                }
            }
            RES_XML_START_ELEMENT_TYPE => {
                let pool = pool.as_ref().ok_or_else(|| corrupt("element before string pool"))?;
                if root.is_some() {
                    return Err(corrupt("content after the root element"));
                }
                if stack.len() >= MAX_DEPTH {
                    return Err(corrupt("element nesting too deep"));
                }
                stack.push(start_element(body, pool)?);
            }
            RES_XML_END_ELEMENT_TYPE => {
                let pool = pool.as_ref().ok_or_else(|| corrupt("element before string pool"))?;
                let name = body.u32_at(4).ok_or_else(|| corrupt("end element truncated"))?;
                let name = pool.get(name)?;
                let node = stack
                    .pop()
                    .ok_or_else(|| corrupt(format!("end of element {name:?} without a start")))?;
                if node.name != name {
                    return Err(corrupt(format!(
                        "unbalanced elements: {:?} closed by {name:?}",
                        node.name
                    )));
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            RES_XML_CDATA_TYPE => {
                let pool = pool.as_ref().ok_or_else(|| corrupt("cdata before string pool"))?;
                let text = body.u32_at(0).ok_or_else(|| corrupt("cdata chunk truncated"))?;
                pool.get_opt(text)?;
            }
            _ => {}
        }
    }

    if let Some(open) = stack.last() {
        return Err(corrupt(format!("element {:?} never closed", open.name)));
    }
    root.map(|root| XmlTree { root })
        .ok_or_else(|| corrupt("document has no root element"))
}

fn start_element(body: &[u8], pool: &StringPool) -> Result<XmlNode, AxmlError> {
    let truncated = || corrupt("start element truncated");
    let ns = body.u32_at(0).ok_or_else(truncated)?;
    let name = body.u32_at(4).ok_or_else(truncated)?;
    let attr_start = body.u16_at(8).ok_or_else(truncated)? as usize;
    let attr_size = body.u16_at(10).ok_or_else(truncated)? as usize;
    let attr_count = body.u16_at(12).ok_or_else(truncated)? as usize;
    if attr_count > 0 && attr_size < 20 {
        return Err(corrupt(format!("attribute record size {attr_size} too small")));
    }

    let mut attributes = Vec::with_capacity(attr_count);
    for i in 0..attr_count {
        let rec = attr_size
            .checked_mul(i)
            .and_then(|o| o.checked_add(attr_start))
            .and_then(|o| body.get(o..o + 20))
            .ok_or_else(|| corrupt(format!("attribute {i} overruns element chunk")))?;
        let a_ns = rec.u32_at(0).unwrap_or(NO_INDEX);
        let a_name = rec.u32_at(4).unwrap_or(NO_INDEX);
        let raw = rec.u32_at(8).unwrap_or(NO_INDEX);
        let data_type = rec.u8_at(15).unwrap_or_default();
        let data = rec.u32_at(16).unwrap_or_default();
        let raw = pool.get_opt(raw)?.map(str::to_owned);
        attributes.push(XmlAttribute {
            namespace: pool.get_opt(a_ns)?.map(str::to_owned),
            name: pool.get(a_name)?.to_owned(),
            value: AttrValue::from_typed(data_type, data, raw, pool)?,
        });
    }

    Ok(XmlNode {
        name: pool.get(name)?.to_owned(),
        namespace: pool.get_opt(ns)?.map(str::to_owned),
        attributes,
        children: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(kind: u16, header: &[u8], body: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&((8 + header.len()) as u16).to_le_bytes());
        out.extend_from_slice(&((8 + header.len() + body.len()) as u32).to_le_bytes());
        out.extend_from_slice(header);
        out.extend_from_slice(body);
        out
    }

    fn le(words: &[u32]) -> Vec<u8> {
        words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    /// `<a x="1"/>` with a UTF-16 pool ["a", "x"].
    fn tiny_doc() -> Vec<u8> {
        let mut data = Vec::new();
        for s in ["a", "x"] {
            data.extend_from_slice(&1u16.to_le_bytes());
            data.extend_from_slice(&(s.as_bytes()[0] as u16).to_le_bytes());
            data.extend_from_slice(&0u16.to_le_bytes());
        }
        let mut pool_body = le(&[0, 6]);
        pool_body.extend_from_slice(&data);
        let pool = chunk(RES_STRING_POOL_TYPE, &le(&[2, 0, 0, 0x1C + 8, 0]), &pool_body);

        let node = le(&[1, NO_INDEX]);
        let mut start_body = le(&[NO_INDEX, 0]);
        start_body.extend_from_slice(&[0x14, 0, 0x14, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        start_body.extend_from_slice(&le(&[NO_INDEX, 1, NO_INDEX]));
        start_body.extend_from_slice(&[8, 0, 0, 0x10]);
        start_body.extend_from_slice(&le(&[1]));
        let start = chunk(RES_XML_START_ELEMENT_TYPE, &node, &start_body);
        let end = chunk(RES_XML_END_ELEMENT_TYPE, &node, &le(&[NO_INDEX, 0]));

        let inner: Vec<u8> = [pool, start, end].concat();
        let mut doc = Vec::new();
        doc.extend_from_slice(&RES_XML_TYPE.to_le_bytes());
        doc.extend_from_slice(&8u16.to_le_bytes());
        doc.extend_from_slice(&((8 + inner.len()) as u32).to_le_bytes());
        doc.extend_from_slice(&inner);
        doc
    }

    #[test]
    fn decodes_tiny_document() {
        let tree = decode_axml(&tiny_doc()).unwrap();
        assert_eq!(tree.root.name, "a");
        assert_eq!(tree.root.attr("x"), Some(&AttrValue::Int(1)));
    }

    #[test]
    fn chunk_overrun_is_corrupt() {
        let mut doc = tiny_doc();
        // enlarge the string pool chunk past the end of the buffer
        doc[12..16].copy_from_slice(&10_000u32.to_le_bytes());
        let err = decode_axml(&doc).unwrap_err();
        assert!(err.0.contains("declares"), "{err}");
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let mut doc = tiny_doc();
        doc[0] = 0x02;
        assert!(decode_axml(&doc).unwrap_err().0.contains("bad magic"));
    }

    #[test]
    fn string_index_out_of_bounds_is_corrupt() {
        let mut doc = tiny_doc();
        // attribute name index lives after doc(8) + pool + node hdr(16) + ext(20) + ns(4)
        let pool_len = u32::from_le_bytes(doc[12..16].try_into().unwrap()) as usize;
        let off = 8 + pool_len + 16 + 20 + 4;
        doc[off..off + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(decode_axml(&doc).unwrap_err().0.contains("out of pool bounds"));
    }

    #[test]
    fn unbalanced_end_is_corrupt() {
        let mut doc = tiny_doc();
        let len = doc.len();
        // end element names "x" instead of "a"
        doc[len - 4..].copy_from_slice(&1u32.to_le_bytes());
        assert!(decode_axml(&doc).unwrap_err().0.contains("unbalanced"));
    }

    #[test]
    fn value_rendering() {
        assert_eq!(AttrValue::Int(-3).render(), "-3");
        assert_eq!(AttrValue::Bool(true).render(), "true");
        assert_eq!(AttrValue::Hex(0x10).render(), "0x00000010");
        assert_eq!(AttrValue::Reference(0x7f02_0000).render(), "@7f020000");
        assert_eq!(AttrValue::Other { data_type: 4, data: 7 }.render(), "7");
    }
}
