//! Checkpoints: a text manifest naming each tensor and its shape, plus one
//! little-endian `f32` blob holding the tensors back to back in manifest
//! order (each tensor column-major).
//!
//! ```text
//! cgnn-checkpoint 1
//! dtype f32-le
//! layout column-major
//! tensor enc_weight 1433 16
//! tensor enc_bias 16
//! ...
//! ```

use std::fs;
use std::path::Path;

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::spectral::WeightSpec;
use crate::{Mat, Vector};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.manifest";
pub const CHECKPOINT_BLOB: &str = "checkpoint.bin";

const MAGIC: &str = "cgnn-checkpoint 1";

pub fn save_checkpoint(params: &ModelParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("{MAGIC}\ndtype f32-le\nlayout column-major\n");
    let mut blob = Vec::new();
    for (name, shape, data) in params.tensors() {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        manifest.push_str(&format!("tensor {name} {}\n", dims.join(" ")));
        for &x in data {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(CHECKPOINT_BLOB);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelParams> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(CHECKPOINT_BLOB);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("blob length {} is not a multiple of 4", blob.len())));
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();

    let mut lines = text.lines();
    let header: Vec<&str> = lines.by_ref().take(3).collect();
    if header != [MAGIC, "dtype f32-le", "layout column-major"] {
        return Err(Error::Checkpoint(format!("unrecognized manifest header {header:?}")));
    }
    let mut offset = 0;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut fields = line.split_whitespace();
        let (Some("tensor"), Some(name)) = (fields.next(), fields.next()) else {
            return Err(Error::Checkpoint(format!("bad manifest line {line:?}")));
        };
        let shape = fields
            .map(|f| f.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad dimension {f:?} in {line:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let end = offset + len;
        if end > values.len() {
            return Err(Error::Checkpoint(format!("blob too short for tensor {name}")));
        }
        tensors.push((name.to_string(), shape, values[offset..end].to_vec()));
        offset = end;
    }
    if offset != values.len() {
        return Err(Error::Checkpoint(format!("{} trailing values in blob", values.len() - offset)));
    }

    let mut take = |want: &str, rank: usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let pos = tensors
            .iter()
            .position(|(name, _, _)| name == want)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {want}")))?;
        let (_, shape, data) = tensors.remove(pos);
        if shape.len() != rank {
            return Err(Error::Checkpoint(format!("tensor {want} has rank {}, expected {rank}", shape.len())));
        }
        Ok((shape, data))
    };
    let matrix = |(shape, data): (Vec<usize>, Vec<f64>)| Mat::from_vec(shape[0], shape[1], data);
    let vector = |(_, data): (Vec<usize>, Vec<f64>)| Vector::from_vec(data);

    let enc_weight = matrix(take("enc_weight", 2)?);
    let enc_bias = vector(take("enc_bias", 1)?);
    let dec_weight = matrix(take("dec_weight", 2)?);
    let dec_bias = vector(take("dec_bias", 1)?);
    let alpha_raw = vector(take("alpha_raw", 1)?);
    let weight = match take("weight_basis", 2) {
        Ok(basis) => Some(WeightSpec::new(matrix(basis), vector(take("weight_eigen", 1)?))?),
        Err(_) => None,
    };
    if let Some((name, _, _)) = tensors.first() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok(ModelParams {
        enc_weight,
        enc_bias,
        dec_weight,
        dec_bias,
        alpha_raw,
        weight,
    })
}
