//! Decoders for the binary formats found inside a raw APK: the ZIP container,
//! Android binary XML (AXML) and the DEX constant pools.
//!
//! All decoders are pure functions over byte slices. Every offset read from
//! the input is bounds-checked, so corrupt or hostile input produces an error
//! value rather than a panic.

pub mod axml;
pub mod dex;
pub mod zip;

pub use axml::{decode_axml, AttrValue, AxmlError, XmlAttribute, XmlNode, XmlTree};
pub use dex::{extract_dex_pool, DexError, DexPool, MethodSig};
pub use zip::{read_zip_entries, CompressionMethod, ZipEntry, ZipError};

/// Little-endian reads that return `None` instead of panicking when the
/// requested range leaves the buffer.
pub(crate) trait LeBytes {
    fn u8_at(&self, off: usize) -> Option<u8>;
    fn u16_at(&self, off: usize) -> Option<u16>;
    fn u32_at(&self, off: usize) -> Option<u32>;
}

impl LeBytes for [u8] {
    fn u8_at(&self, off: usize) -> Option<u8> {
        self.get(off).copied()
    }

    fn u16_at(&self, off: usize) -> Option<u16> {
        let b = self.get(off..off.checked_add(2)?)?;
        Some(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_at(&self, off: usize) -> Option<u32> {
        let b = self.get(off..off.checked_add(4)?)?;
        Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
