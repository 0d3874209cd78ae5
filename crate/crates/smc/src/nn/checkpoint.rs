//! Flat named-tensor checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   "SMCW"
//! version u16
//! count   u32                       number of records
//! record  name_len u16, name utf-8
//!         ndim u8, dims u32 × ndim
//!         data f64 × product(dims)
//! crc32   u32                       over every preceding byte
//! ```
//!
//! Records are written and read in order, so two checkpoints of identical
//! state are byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMCW";
pub const CHECKPOINT_VERSION: u16 = 1;

pub type Record = (String, Vec<usize>, Vec<f64>);

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = u32::try_from(records.len())
        .map_err(|_| Error::Format("checkpoint has too many records".into()))?;
    bytes.extend_from_slice(&count.to_le_bytes());
    for (name, shape, data) in records {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("record name too long: {name:?}")))?;
        bytes.extend_from_slice(&name_len.to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(shape.len())
            .map_err(|_| Error::Format(format!("record {name:?} has too many dims")))?;
        bytes.push(ndim);
        let mut expect = 1usize;
        for &d in shape {
            let dim = u32::try_from(d)
                .map_err(|_| Error::Format(format!("record {name:?} dim {d} too large")))?;
            bytes.extend_from_slice(&dim.to_le_bytes());
            expect = expect.saturating_mul(d);
        }
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "record {name:?}: shape {shape:?} implies {expect} values, got {}",
                data.len()
            )));
        }
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    Ok(bytes)
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let need = |cond: bool, what: &str| -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::Format(format!("checkpoint truncated in {what}")))
        }
    };
    need(bytes.len() >= 14, "header")?;
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..body_end]);
    if stored != actual {
        return Err(Error::Corruption(format!(
            "checkpoint CRC mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let mut pos = 10;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        need(pos + 2 <= body_end, "record name length")?;
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        need(pos + name_len <= body_end, "record name")?;
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?
            .to_string();
        pos += name_len;
        need(pos + 1 <= body_end, "record rank")?;
        let ndim = bytes[pos] as usize;
        pos += 1;
        need(pos + 4 * ndim <= body_end, "record dims")?;
        let mut shape = Vec::with_capacity(ndim);
        let mut len = 1usize;
        for _ in 0..ndim {
            let d = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            shape.push(d);
            len = len.saturating_mul(d);
            pos += 4;
        }
        need(pos + 8 * len <= body_end, &format!("record {name:?} data"))?;
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            data.push(f64::from_le_bytes(
                bytes[pos + 8 * i..pos + 8 * i + 8].try_into().unwrap(),
            ));
        }
        pos += 8 * len;
        out.push((name, shape, data));
    }
    if pos != body_end {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes after last record",
            body_end - pos
        )));
    }
    Ok(out)
}

pub fn save_records(path: &Path, records: &[Record]) -> Result<()> {
    let bytes = encode_records(records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes)
}

/// Encode a u64 (seed or counter) losslessly in an f64 record slot.
pub fn u64_to_record_value(x: u64) -> f64 {
    f64::from_bits(x)
}

pub fn record_value_to_u64(x: f64) -> u64 {
    x.to_bits()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Record> {
        vec![
            ("enc.w".into(), vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-9, 7.25]),
            ("enc.b".into(), vec![1, 3], vec![0.0, 0.5, -0.5]),
            ("step".into(), vec![1, 1], vec![42.0]),
        ]
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = encode_records(&sample()).unwrap();
        let decoded = decode_records(&bytes).unwrap();
        assert_eq!(decoded, sample());
        let re = encode_records(&decoded).unwrap();
        assert_eq!(re, bytes);
    }

    #[test]
    fn corruption_and_truncation_detected() {
        let mut bytes = encode_records(&sample()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(decode_records(&bytes), Err(Error::Corruption(_))));

        let bytes = encode_records(&sample()).unwrap();
        assert!(matches!(
            decode_records(&bytes[..bytes.len() - 9]),
            Err(Error::Corruption(_)) | Err(Error::Format(_))
        ));
        assert!(matches!(decode_records(&bytes[..6]), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_reports_found_and_supported() {
        let mut bytes = encode_records(&sample()).unwrap();
        let v = CHECKPOINT_VERSION + 1;
        bytes[4..6].copy_from_slice(&v.to_le_bytes());
        let body_end = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_end]);
        bytes[body_end..].copy_from_slice(&crc.to_le_bytes());
        match decode_records(&bytes) {
            Err(Error::UnsupportedVersion { found, supported }) => {
                assert_eq!(found, CHECKPOINT_VERSION + 1);
                assert_eq!(supported, CHECKPOINT_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn u64_round_trips_through_f64_bits() {
        for x in [0u64, 1, u64::MAX, 0x8000_0000_0000_0001, 1234567890123456789] {
            assert_eq!(record_value_to_u64(u64_to_record_value(x)), x);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.smcw");
        save_records(&path, &sample()).unwrap();
        assert_eq!(load_records(&path).unwrap(), sample());
    }
}
