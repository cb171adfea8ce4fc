//! Model checkpoints.
//!
//! ```text
//! "MSCKPT"                         6 bytes
//! version = 1                      u16
//! config echo                      u32 length + UTF-8 JSON
//! parameter count                  u32
//! per parameter:
//!     name                         u16 length + UTF-8
//!     rank                         u8
//!     dims                         rank × u32
//!     values                       f32 × product(dims)
//! crc32 of every preceding byte    u32
//! ```
//! All integers and floats little-endian.

use std::path::Path;
use std::sync::Arc;

use super::config::ModelConfig;
use super::network::{Network, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CKPT_MAGIC: &[u8; 6] = b"MSCKPT";
pub const CKPT_VERSION: u16 = 1;

/// Serializes a network. `echo` is an arbitrary JSON document recorded for
/// provenance; it must contain the model config under `"model"`.
pub fn encode_checkpoint<T: Scalar>(net: &Network<T>, echo: &serde_json::Value) -> Result<Vec<u8>> {
    let mut echo = echo.clone();
    if !echo.is_object() {
        echo = serde_json::json!({});
    }
    echo["model"] = serde_json::to_value(&net.config)?;
    let json = serde_json::to_vec(&echo)?;

    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.params.len() as u32).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::parse(self.at, "unexpected end of checkpoint"))?;
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub struct Checkpoint<T> {
    pub network: Network<T>,
    pub echo: serde_json::Value,
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < CKPT_MAGIC.len() + 2 + 4 {
        return Err(Error::parse(bytes.len(), "checkpoint too short"));
    }
    if &bytes[..6] != CKPT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            section: "checkpoint".into(),
            stored,
            computed,
        });
    }
    let mut r = Reader { bytes: body, at: 6 };
    let version = r.u16()?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u32()? as usize;
    let echo: serde_json::Value = serde_json::from_slice(r.take(json_len)?)?;
    let config: ModelConfig = serde_json::from_value(
        echo.get("model")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint config lacks a model section".into()))?,
    )?;
    let n = r.u32()? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(4 * len)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        params.push(Param {
            name,
            value: Arc::new(Tensor::new(shape, data)?),
        });
    }
    if r.at != body.len() {
        return Err(Error::parse(r.at, "trailing bytes in checkpoint"));
    }
    Ok(Checkpoint {
        network: Network::from_params(config, params)?,
        echo,
    })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, net: &Network<T>, echo: &serde_json::Value) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net, echo)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Input(format!("cannot read checkpoint {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_preserves_parameters_and_echo() {
        let net = Network::<f32>::new(ModelConfig::new(Variant::Equivariant), 5).unwrap();
        let echo = serde_json::json!({"train": {"epochs": 3}});
        let bytes = encode_checkpoint(&net, &echo).unwrap();
        let ck = decode_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(ck.network.config, net.config);
        assert_eq!(ck.echo["train"]["epochs"], 3);
        for (a, b) in ck.network.params.iter().zip(&net.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let net = Network::<f32>::new(ModelConfig::new(Variant::Standard), 5).unwrap();
        let mut bytes = encode_checkpoint(&net, &serde_json::json!({})).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Checksum { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format(_))));
    }
}
