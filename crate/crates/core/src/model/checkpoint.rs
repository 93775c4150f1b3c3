//! Weight archive: a magic line, one JSON header line, then every tensor as
//! little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8] = b"LIFCKPT1\n";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<M> {
    metadata: M,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<M: Serialize>(metadata: &M, tensors: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let header = Header {
        metadata,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header)?);
    out.push(b'\n');
    for (_, t) in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, BTreeMap<String, Tensor>)> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Data("not a checkpoint file".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Data("checkpoint header is not terminated".into()))?;
    let header: Header<M> =
        serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
    let mut payload = &rest[nl + 1..];
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        if payload.len() < 4 * n {
            return Err(Error::Data(format!("checkpoint truncated in tensor '{}'", e.name)));
        }
        let data = payload[..4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        payload = &payload[4 * n..];
        if tensors.insert(e.name.clone(), Tensor::from_vec(&e.shape, data)).is_some() {
            return Err(Error::Data(format!("duplicate tensor '{}'", e.name)));
        }
    }
    if !payload.is_empty() {
        return Err(Error::Data("trailing bytes after checkpoint payload".into()));
    }
    Ok((header.metadata, tensors))
}

pub fn write_checkpoint<M: Serialize>(path: &Path, metadata: &M, tensors: &[(String, &Tensor)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_checkpoint(metadata, tensors)?)?;
    Ok(())
}

pub fn read_checkpoint<M: DeserializeOwned>(path: &Path) -> Result<(M, BTreeMap<String, Tensor>)> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f32_values() {
        let a = Tensor::from_vec(&[2, 2], vec![0.5, -1.25, 3.0, 1e-3f32 as f64]);
        let b = Tensor::from_vec(&[1], vec![7.0]);
        let bytes = encode_checkpoint(&"meta", &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let (m, t): (String, _) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(m, "meta");
        assert_eq!(t["a"], a);
        assert_eq!(t["b"], b);
        assert!(decode_checkpoint::<String>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint::<String>(b"nope").is_err());
    }
}
