//! Model checkpoints: one JSON header line, then raw little-endian f64 parameters.

use std::path::Path;

use rangeaug_core::refmodel::MlpClassifier;
use serde::{Deserialize, Serialize};

use crate::error::{read, write, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub layer_dims: Vec<usize>,
    pub seed: u64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: MlpClassifier,
}

pub fn encode_checkpoint(model: &MlpClassifier, seed: u64, step: u64) -> Vec<u8> {
    let header = CheckpointHeader { layer_dims: model.dims().to_vec(), seed, step };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for v in model.flat_params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let end = bytes.iter().position(|&b| b == b'\n').ok_or("missing header line")?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..end]).map_err(|e| format!("bad header: {e}"))?;
    let payload = &bytes[end + 1..];
    if !payload.len().is_multiple_of(8) {
        return Err(format!("payload of {} bytes is not a whole number of f64 values", payload.len()));
    }
    let flat: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let model = MlpClassifier::from_flat(&header.layer_dims, &flat).map_err(|e| e.to_string())?;
    Ok(Checkpoint { header, model })
}

pub fn save_checkpoint(path: &Path, model: &MlpClassifier, seed: u64, step: u64) -> Result<()> {
    write(path, &encode_checkpoint(model, seed, step))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read(path)?).map_err(|msg| Error::format(path, msg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let model = MlpClassifier::init_params(&[12, 5, 3], 4).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&model, 4, 17)).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.header, CheckpointHeader { layer_dims: vec![12, 5, 3], seed: 4, step: 17 });
    }

    #[test]
    fn rejects_short_payload() {
        let model = MlpClassifier::init_params(&[4, 2], 0).unwrap();
        let bytes = encode_checkpoint(&model, 0, 0);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).unwrap_err().contains("parameters"));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint(b"{\"layer_dims\":[2,2]}\n").unwrap_err().contains("header"));
    }
}
