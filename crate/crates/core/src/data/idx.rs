//! Big-endian IDX files as distributed with MNIST (uncompressed).

use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxData {
    Images {
        rows: usize,
        cols: usize,
        /// `count × rows × cols` raw bytes.
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::Images { rows, cols, pixels } => pixels.len() / (rows * cols),
            IdxData::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Option<Vec<f32>> {
        match self {
            IdxData::Images { rows, cols, pixels } => {
                let n = rows * cols;
                pixels
                    .get(i * n..(i + 1) * n)
                    .map(|p| p.iter().map(|&b| b as f32 / 255.0).collect())
            }
            IdxData::Labels(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            IdxData::Images { rows, cols, pixels } => {
                out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
                out.extend_from_slice(&(self.len() as u32).to_be_bytes());
                out.extend_from_slice(&(*rows as u32).to_be_bytes());
                out.extend_from_slice(&(*cols as u32).to_be_bytes());
                out.extend_from_slice(pixels);
            }
            IdxData::Labels(labels) => {
                out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
                out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
                out.extend_from_slice(labels);
            }
        }
        out
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len(), format!("truncated header: need 4 bytes at {offset}")))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0)?;
    let (header, dims) = match magic {
        IMAGES_MAGIC => (16, 3),
        LABELS_MAGIC => (8, 1),
        other => return Err(Error::parse(0, format!("unknown magic {other:#010x} ({other})"))),
    };
    let extents: Vec<usize> = (0..dims)
        .map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<_>>()?;
    if extents[1..].contains(&0) {
        return Err(Error::parse(8, format!("zero image dimension in {extents:?}")));
    }
    let payload: usize = extents.iter().product();
    let body = &bytes[header..];
    if body.len() < payload {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: header promises {payload} bytes, found {}", body.len()),
        ));
    }
    if body.len() > payload {
        return Err(Error::parse(
            header + payload,
            format!(
                "dimension mismatch: {} trailing bytes after {payload}-byte payload",
                body.len() - payload
            ),
        ));
    }
    Ok(if dims == 3 {
        IdxData::Images {
            rows: extents[1],
            cols: extents[2],
            pixels: body.to_vec(),
        }
    } else {
        IdxData::Labels(body.to_vec())
    })
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_idx(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn minimal_image_file() {
        let mut bytes = header(2051, &[1, 28, 28]);
        bytes.extend((0..784).map(|i| (i % 256) as u8));
        let parsed = parse_idx(&bytes).unwrap();
        assert_eq!(parsed.len(), 1);
        let img = parsed.image(0).unwrap();
        assert_eq!(img.len(), 784);
        assert_eq!(img[255], 1.0);
        assert_eq!(img[0], 0.0);
    }

    #[test]
    fn unknown_magic() {
        let bytes = header(2052, &[1, 28, 28]);
        let err = parse_idx(&bytes).unwrap_err();
        assert!(err.to_string().contains("unknown magic"));
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn truncated_and_oversized_payloads() {
        let mut bytes = header(2049, &[5]);
        bytes.extend([1, 2, 3]);
        assert!(parse_idx(&bytes).unwrap_err().to_string().contains("truncated"));
        bytes.extend([4, 5, 6]);
        assert!(parse_idx(&bytes).unwrap_err().to_string().contains("dimension mismatch"));
        assert!(parse_idx(&[0, 0, 8]).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let labels = IdxData::Labels(vec![3, 1, 4, 1, 5]);
        assert_eq!(parse_idx(&labels.to_bytes()).unwrap(), labels);
    }
}
