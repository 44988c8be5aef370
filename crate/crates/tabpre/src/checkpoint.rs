//! Checkpoint file format: one JSON manifest line (parameter names, shapes,
//! optimizer step, optional caller metadata) followed by the raw
//! little-endian float64 arrays in manifest order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::TabError;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Vec<ParamEntry>,
    optimizer_step: u64,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save(
    path: &Path,
    params: &ParamSet,
    optimizer_step: u64,
    meta: serde_json::Value,
) -> Result<(), TabError> {
    let manifest = Manifest {
        params: (0..params.len())
            .map(|i| ParamEntry {
                name: params.name(i).to_string(),
                shape: params.tensor(i).shape().to_vec(),
            })
            .collect(),
        optimizer_step,
        meta,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    for i in 0..params.len() {
        for v in params.tensor(i).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct Checkpoint {
    pub params: ParamSet,
    pub optimizer_step: u64,
    pub meta: serde_json::Value,
}

pub fn load(path: &Path) -> Result<Checkpoint, TabError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let manifest: Manifest = serde_json::from_str(header.trim_end())?;
    let mut params = ParamSet::new();
    for entry in &manifest.params {
        let numel: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        r.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok(Checkpoint {
        params,
        optimizer_step: manifest.optimizer_step,
        meta: manifest.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut params = ParamSet::new();
        params.add("w1", Tensor::matrix(2, 3, vec![1.5, -2.25, 0.0, 1e-300, f64::MIN_POSITIVE, 3.7]).unwrap());
        params.add("b1", Tensor::from_vec(vec![0.1, 0.2, 0.3]));
        save(&path, &params, 42, serde_json::json!({"kind": "test"})).unwrap();
        let ck = load(&path).unwrap();
        assert_eq!(ck.optimizer_step, 42);
        assert_eq!(ck.meta["kind"], "test");
        assert_eq!(ck.params.len(), 2);
        for i in 0..2 {
            assert_eq!(ck.params.name(i), params.name(i));
            assert_eq!(ck.params.tensor(i), params.tensor(i));
        }
    }
}
