//! Binary fold files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSCL"                      4 bytes
//! version = 1                 u16
//! n_train, n_val, n_test      3 × u32
//! for each split in order train, val, test:
//!     records                 n × (u8 label, f32 scale, 784 × f32 pixels)
//!     crc32 of those records  u32
//! ```

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::{SampleRecord, PIXELS};
use crate::error::{Error, Result};

pub const FOLD_MAGIC: &[u8; 4] = b"MSCL";
pub const FOLD_VERSION: u16 = 1;
const RECORD_BYTES: usize = 1 + 4 + 4 * PIXELS;
const HEADER_BYTES: usize = 4 + 2 + 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!(
                "unknown split '{other}' (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Fold {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Fold {
    pub fn split(&self, s: Split) -> &[SampleRecord] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn bitwise_eq(&self, other: &Fold) -> bool {
        Split::ALL.iter().all(|&s| {
            let (a, b) = (self.split(s), other.split(s));
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bitwise_eq(y))
        })
    }

    /// CRC32 of each split's serialized records.
    pub fn checksums(&self) -> [u32; 3] {
        Split::ALL.map(|s| crc32fast::hash(&encode_records(self.split(s))))
    }
}

/// A fold together with the provenance that the file format does not carry.
#[derive(Clone, Debug)]
pub struct GeneratedFold {
    pub index: usize,
    pub seed: u64,
    pub fold: Fold,
    /// Pool indices of the train, val and test records.
    pub sources: [Vec<u32>; 3],
}

fn encode_records(records: &[SampleRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.scale.to_le_bytes());
        for p in &r.image {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

pub fn encode_fold(fold: &Fold) -> Result<Vec<u8>> {
    for s in Split::ALL {
        if let Some(r) = fold.split(s).iter().find(|r| r.image.len() != PIXELS) {
            return Err(Error::Input(format!(
                "{s} record has {} pixels, expected {PIXELS}",
                r.image.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(
        HEADER_BYTES + 12 + (fold.train.len() + fold.val.len() + fold.test.len()) * RECORD_BYTES,
    );
    out.extend_from_slice(FOLD_MAGIC);
    out.extend_from_slice(&FOLD_VERSION.to_le_bytes());
    for s in Split::ALL {
        out.extend_from_slice(&(fold.split(s).len() as u32).to_le_bytes());
    }
    for s in Split::ALL {
        let body = encode_records(fold.split(s));
        let crc = crc32fast::hash(&body);
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

fn le_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len(), "unexpected end of fold file"))
}

pub fn decode_fold(bytes: &[u8]) -> Result<Fold> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::parse(bytes.len(), "fold file shorter than its header"));
    }
    if &bytes[..4] != FOLD_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"MSCL\"", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FOLD_VERSION {
        return Err(Error::Format(format!(
            "unsupported fold version {version} (this build reads {FOLD_VERSION})"
        )));
    }
    let counts = [le_u32(bytes, 6)?, le_u32(bytes, 10)?, le_u32(bytes, 14)?];
    let mut at = HEADER_BYTES;
    let mut splits: Vec<Vec<SampleRecord>> = Vec::with_capacity(3);
    for (s, &n) in Split::ALL.iter().zip(&counts) {
        let len = n as usize * RECORD_BYTES;
        let body = bytes
            .get(at..at + len)
            .ok_or_else(|| Error::parse(bytes.len(), format!("truncated {s} split")))?;
        let stored = le_u32(bytes, at + len)?;
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum {
                section: s.name().to_string(),
                stored,
                computed,
            });
        }
        let records = body
            .chunks_exact(RECORD_BYTES)
            .map(|rec| SampleRecord {
                label: rec[0],
                scale: f32::from_le_bytes([rec[1], rec[2], rec[3], rec[4]]),
                image: rec[5..]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            })
            .collect();
        splits.push(records);
        at += len + 4;
    }
    if at != bytes.len() {
        return Err(Error::parse(at, format!("{} trailing bytes", bytes.len() - at)));
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Fold { train, val, test })
}

pub fn save_fold(path: &Path, fold: &Fold) -> Result<()> {
    let bytes = encode_fold(fold)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_fold(path: &Path) -> Result<Fold> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Input(format!("cannot read fold {}: {e}", path.display())))?;
    decode_fold(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize) -> SampleRecord {
        SampleRecord {
            image: (0..PIXELS).map(|p| ((p * 31 + i) % 256) as f32 / 255.0).collect(),
            label: (i % 10) as u8,
            scale: 0.3 + 0.01 * i as f32,
        }
    }

    fn tiny() -> Fold {
        Fold {
            train: (0..3).map(record).collect(),
            val: vec![record(3)],
            test: (4..6).map(record).collect(),
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = encode_fold(&tiny()).unwrap();
        bytes[HEADER_BYTES + RECORD_BYTES + 9] ^= 0x40;
        assert!(matches!(
            decode_fold(&bytes),
            Err(Error::Checksum { ref section, .. }) if section == "train"
        ));
    }

    #[test]
    fn header_errors() {
        let good = encode_fold(&tiny()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_fold(&bad_magic), Err(Error::Format(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(decode_fold(&bad_version).unwrap_err().to_string().contains("version"));
        assert!(decode_fold(&good[..good.len() - 3]).is_err());
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!(matches!("dev".parse::<Split>(), Err(Error::Usage(_))));
    }
}
