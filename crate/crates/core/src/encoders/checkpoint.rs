//! Flat named-tensor archive.
//!
//! Layout: `u64` little-endian index length, the JSON index, then every
//! tensor's row-major `f64` data in little-endian order at the offsets the
//! index records (in values, relative to the start of the data section).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EncoderSpec;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: &str = "lossbench-ckpt-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    version: String,
    init_seed: u64,
    spec: EncoderSpec,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

pub fn write_checkpoint(
    mut w: impl Write,
    spec: &EncoderSpec,
    params: &ParameterSet,
) -> Result<()> {
    let mut offset = 0;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.to_string(),
                shape: [t.rows(), t.cols()],
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let index = Index {
        version: CHECKPOINT_VERSION.into(),
        init_seed: params.init_seed(),
        spec: spec.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&index)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 8 * offset);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in params.iter() {
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(EncoderSpec, ParameterSet)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let corrupt = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(corrupt("truncated header"));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let data_start = 8usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated index"))?;
    let index: Index = serde_json::from_slice(&bytes[8..data_start])?;
    if index.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {:?}",
            index.version
        )));
    }
    let data = &bytes[data_start..];
    if data.len() % 8 != 0 {
        return Err(corrupt("data section is not a whole number of f64 values"));
    }
    let mut params = ParameterSet::new(index.init_seed);
    for e in index.tensors {
        let count = e.shape[0] * e.shape[1];
        let (start, end) = (8 * e.offset, 8 * (e.offset + count));
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} runs past the data section",
                e.name
            )));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(e.name, Tensor::from_vec(e.shape[0], e.shape[1], values)?);
    }
    Ok((index.spec, params))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    spec: &EncoderSpec,
    params: &ParameterSet,
) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(f), spec, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EncoderSpec, ParameterSet)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
