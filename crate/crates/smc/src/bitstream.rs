//! Wire format for encoded token streams.
//!
//! A packet is a fixed header, a bit-packed payload of interleaved token
//! pairs, and a trailing CRC32. Every multi-byte integer is little-endian;
//! token fields are packed back-to-back MSB-first starting at the most
//! significant bit of the first payload byte, zero-padded to a byte
//! boundary. Fixed widths of ⌈log₂N⌉ bits per token keep the serialized
//! rate equal to the published allocation table. The byte-level layout is
//! documented in `docs/bitstream.md`.

use crate::error::{Error, Result};

pub const PACKET_MAGIC: &[u8; 4] = b"SMC1";
pub const PACKET_VERSION: u16 = 1;

/// Header byte length: magic + version + sample_rate + stack_factor +
/// both vocab sizes + token_pairs + original_sample_count + window_config.
pub const HEADER_LEN: usize = 4 + 2 + 4 + 1 + 4 + 4 + 4 + 8 + 2;

/// Frame rate of the mel front end (hop 160 at 16 kHz); with 1024 frames
/// per 10.24 s segment this fixes the token pair rate at 50/K per second.
const FRAMES_PER_SECOND: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketHeader {
    pub version: u16,
    pub sample_rate: u32,
    /// Patch stack factor K.
    pub stack_factor: u8,
    pub semantic_vocab: u32,
    pub acoustic_vocab: u32,
    pub token_pairs: u32,
    pub original_sample_count: u64,
    /// Identifies the decode window geometry: 0 = 10.24 s, 1 = 2.56 s.
    pub window_config: u16,
}

impl PacketHeader {
    pub fn validate(&self) -> Result<()> {
        if self.version != PACKET_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.version,
                supported: PACKET_VERSION,
            });
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if ![1, 2, 4].contains(&self.stack_factor) {
            return Err(Error::Config(format!(
                "stack factor {} not one of 1, 2, 4",
                self.stack_factor
            )));
        }
        token_bits(self.semantic_vocab)?;
        token_bits(self.acoustic_vocab)?;
        if self.token_pairs == 0 {
            return Err(Error::Config("packet carries no token pairs".into()));
        }
        Ok(())
    }

    pub fn semantic_bits(&self) -> u32 {
        self.semantic_vocab.trailing_zeros()
    }

    pub fn acoustic_bits(&self) -> u32 {
        self.acoustic_vocab.trailing_zeros()
    }

    pub fn payload_len(&self) -> usize {
        let bits = self.token_pairs as usize
            * (self.semantic_bits() as usize + self.acoustic_bits() as usize);
        bits.div_ceil(8)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(PACKET_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.push(self.stack_factor);
        out.extend_from_slice(&self.semantic_vocab.to_le_bytes());
        out.extend_from_slice(&self.acoustic_vocab.to_le_bytes());
        out.extend_from_slice(&self.token_pairs.to_le_bytes());
        out.extend_from_slice(&self.original_sample_count.to_le_bytes());
        out.extend_from_slice(&self.window_config.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Result<PacketHeader> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "packet truncated: {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != PACKET_MAGIC {
            return Err(Error::Format(format!(
                "bad packet magic {:02x?}",
                &bytes[0..4]
            )));
        }
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = u16_at(4);
        if version != PACKET_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: PACKET_VERSION,
            });
        }
        let header = PacketHeader {
            version,
            sample_rate: u32_at(6),
            stack_factor: bytes[10],
            semantic_vocab: u32_at(11),
            acoustic_vocab: u32_at(15),
            token_pairs: u32_at(19),
            original_sample_count: u64::from_le_bytes(bytes[23..31].try_into().unwrap()),
            window_config: u16_at(31),
        };
        header
            .validate()
            .map_err(|e| Error::Format(format!("packet header: {e}")))?;
        Ok(header)
    }
}

/// Bits per token for a power-of-two vocabulary.
pub fn token_bits(vocab: u32) -> Result<u32> {
    if vocab < 2 || !vocab.is_power_of_two() {
        return Err(Error::Config(format!(
            "vocabulary size {vocab} is not a power of two >= 2"
        )));
    }
    Ok(vocab.trailing_zeros())
}

struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn new() -> BitWriter {
        BitWriter {
            bytes: Vec::new(),
            used: 8,
        }
    }

    fn push(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            if self.used == 8 {
                self.bytes.push(0);
                self.used = 0;
            }
            let bit = ((value >> i) & 1) as u8;
            *self.bytes.last_mut().unwrap() |= bit << (7 - self.used);
            self.used += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> BitReader<'a> {
        BitReader { bytes, pos: 0 }
    }

    fn read(&mut self, width: u32) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..width {
            let byte = self.pos / 8;
            if byte >= self.bytes.len() {
                return Err(Error::Format("packet payload truncated".into()));
            }
            let shift = 7 - (self.pos % 8) as u32;
            v = (v << 1) | ((self.bytes[byte] >> shift) as u32 & 1);
            self.pos += 1;
        }
        Ok(v)
    }
}

/// Serialize interleaved token pairs (s0, a0, s1, a1, ...) behind the
/// header, then append CRC32 over everything written so far.
pub fn pack(semantic: &[u32], acoustic: &[u32], header: &PacketHeader) -> Result<Vec<u8>> {
    header.validate()?;
    if semantic.len() != acoustic.len() || semantic.len() != header.token_pairs as usize {
        return Err(Error::Shape(format!(
            "token streams of {} and {} pairs, header says {}",
            semantic.len(),
            acoustic.len(),
            header.token_pairs
        )));
    }
    let sb = header.semantic_bits();
    let ab = header.acoustic_bits();
    let mut w = BitWriter::new();
    for (i, (&s, &a)) in semantic.iter().zip(acoustic).enumerate() {
        if s >= header.semantic_vocab {
            return Err(Error::Config(format!(
                "semantic token {s} at pair {i} exceeds vocabulary {}",
                header.semantic_vocab
            )));
        }
        if a >= header.acoustic_vocab {
            return Err(Error::Config(format!(
                "acoustic token {a} at pair {i} exceeds vocabulary {}",
                header.acoustic_vocab
            )));
        }
        w.push(s, sb);
        w.push(a, ab);
    }
    let mut out = header.encode();
    out.extend_from_slice(&w.bytes);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Exact inverse of [`pack`].
pub fn unpack(bytes: &[u8]) -> Result<(PacketHeader, Vec<u32>, Vec<u32>)> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Format(format!(
            "packet truncated: {} bytes",
            bytes.len()
        )));
    }
    let header = PacketHeader::decode(bytes)?;
    let expected = HEADER_LEN + header.payload_len() + 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "packet length {} does not match header (expected {expected})",
            bytes.len()
        )));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corruption(format!(
            "packet CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = BitReader::new(&bytes[HEADER_LEN..bytes.len() - 4]);
    let (sb, ab) = (header.semantic_bits(), header.acoustic_bits());
    let pairs = header.token_pairs as usize;
    let mut semantic = Vec::with_capacity(pairs);
    let mut acoustic = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        semantic.push(r.read(sb)?);
        acoustic.push(r.read(ab)?);
    }
    Ok((header, semantic, acoustic))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitrateReport {
    pub pairs_per_second: f64,
    pub tokens_per_second: f64,
    pub kbps_semantic: f64,
    pub kbps_acoustic: f64,
    pub kbps_total: f64,
}

/// Rate arithmetic for a header. A 10.24 s segment yields 512/K token
/// pairs, so pairs_per_second = (512/K)·(100/1024) = 50/K; both factors are
/// dyadic rationals, keeping the result exact in floating point. Each kbps
/// figure is produced by a single division so it agrees bit-for-bit with
/// the correctly rounded decimal constants of the published table.
pub fn bitrate_report(header: &PacketHeader) -> Result<BitrateReport> {
    header.validate()?;
    let pairs_per_second =
        (512.0 / header.stack_factor as f64) * (FRAMES_PER_SECOND / 1024.0);
    let sb = header.semantic_bits() as f64;
    let ab = header.acoustic_bits() as f64;
    Ok(BitrateReport {
        pairs_per_second,
        tokens_per_second: 2.0 * pairs_per_second,
        kbps_semantic: pairs_per_second * sb / 1000.0,
        kbps_acoustic: pairs_per_second * ab / 1000.0,
        kbps_total: pairs_per_second * (sb + ab) / 1000.0,
    })
}

/// The twelve published configurations: every stack factor crossed with
/// every semantic vocabulary, acoustic vocabulary fixed at 8192.
pub fn published_configs() -> Vec<(u8, u32, u32)> {
    let mut out = Vec::with_capacity(12);
    for &k in &[1u8, 2, 4] {
        for &sem in &[32768u32, 16384, 8192, 4096] {
            out.push((k, sem, 8192));
        }
    }
    out
}
