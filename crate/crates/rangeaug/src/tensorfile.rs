//! `.ratf` dataset files.
//!
//! Layout, all integers little-endian:
//! magic `RATF`, version byte (1), axis count byte, one u64 per axis,
//! the image payload as f64 values, then the labels block:
//! u64 class count, u64 label count, one u64 per label.

use std::path::Path;

use rangeaug_core::data::{Dataset, Split};
use rangeaug_core::Array;

use crate::error::{read, write, Error, Result};

const MAGIC: &[u8; 4] = b"RATF";
const VERSION: u8 = 1;

pub fn save_tensorfile(path: &Path, dataset: &Dataset) -> Result<()> {
    write(path, &encode_tensorfile(dataset))
}

pub fn load_tensorfile(path: &Path) -> Result<Dataset> {
    decode_tensorfile(&read(path)?).map_err(|msg| Error::format(path, msg))
}

pub fn encode_tensorfile(dataset: &Dataset) -> Vec<u8> {
    let shape = dataset.images.shape();
    let mut out = Vec::with_capacity(6 + 8 * (shape.len() + dataset.images.len() + dataset.len() + 2));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(shape.len() as u8);
    shape.iter().for_each(|&d| out.extend_from_slice(&(d as u64).to_le_bytes()));
    dataset.images.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out.extend_from_slice(&(dataset.classes as u64).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    dataset.labels.iter().for_each(|&l| out.extend_from_slice(&(l as u64).to_le_bytes()));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&[u8], String> {
        if self.bytes.len() < n {
            return Err(format!("length mismatch: {what} needs {n} bytes, {} left", self.bytes.len()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensorfile(bytes: &[u8]) -> std::result::Result<Dataset, String> {
    let mut r = Reader { bytes };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err("bad magic, not a RATF file".into());
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let axes = r.take(1, "axis count")?[0] as usize;
    let mut shape = Vec::with_capacity(axes);
    for _ in 0..axes {
        shape.push(usize::try_from(r.u64("axis length")?).map_err(|_| "axis length overflows")?);
    }
    if shape.len() < 2 {
        return Err(format!("dataset needs at least 2 axes, got {shape:?}"));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= r.bytes.len()))
        .ok_or_else(|| format!("length mismatch: shape {shape:?} exceeds the {}-byte payload", r.bytes.len()))?;
    let data: Vec<f64> =
        r.take(8 * count, "payload")?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("pixel value {v} outside [0, 1]"));
    }
    let classes = r.u64("class count")? as usize;
    let n = r.u64("label count")? as usize;
    if n != shape[0] {
        return Err(format!("length mismatch: {n} labels for {} images", shape[0]));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u64("labels")? as usize);
    }
    if !r.bytes.is_empty() {
        return Err(format!("length mismatch: {} trailing bytes", r.bytes.len()));
    }
    let images = Array::new(shape, data).map_err(|e| e.to_string())?;
    Dataset::new(images, labels, classes, Split::Train).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rangeaug_core::data::generate_synthetic;

    #[test]
    fn round_trip_is_exact() {
        let d = generate_synthetic(8, 4, 3).unwrap();
        let back = decode_tensorfile(&encode_tensorfile(&d)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_corruption() {
        let d = generate_synthetic(4, 4, 3).unwrap();
        let bytes = encode_tensorfile(&d);
        assert!(decode_tensorfile(&bytes[..bytes.len() - 3]).unwrap_err().contains("length mismatch"));
        assert!(decode_tensorfile(&bytes[..100]).unwrap_err().contains("length mismatch"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_tensorfile(&bad).unwrap_err().contains("magic"));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_tensorfile(&extra).is_err());
    }
}
