//! Binary PPM (P6, maxval 255) images as `[3, height, width]` arrays in `[0, 1]`.

use std::path::Path;

use rangeaug_core::Array;

use crate::error::{read, write, Error, Result};

pub fn load_ppm(path: &Path) -> Result<Array> {
    decode_ppm(&read(path)?).map_err(|msg| Error::format(path, msg))
}

pub fn save_ppm(path: &Path, image: &Array) -> Result<()> {
    let bytes = encode_ppm(image).map_err(|msg| Error::format(path, msg))?;
    write(path, &bytes)
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        loop {
            match self.rest.first() {
                Some(b) if b.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self.rest.iter().position(|&b| b == b'\n').unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_space();
        let len = self.rest.iter().take_while(|b| b.is_ascii_digit()).count();
        let text = std::str::from_utf8(&self.rest[..len]).unwrap_or_default();
        self.rest = &self.rest[len..];
        text.parse().map_err(|_| format!("malformed header: missing {what}"))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Array, String> {
    match bytes.get(..2) {
        Some(b"P6") => {}
        Some(magic) => return Err(format!("unsupported format {:?}, expected P6", String::from_utf8_lossy(magic))),
        None => return Err("empty file".into()),
    }
    let mut h = Header { rest: &bytes[2..] };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    match h.rest.first() {
        Some(b) if b.is_ascii_whitespace() => h.rest = &h.rest[1..],
        _ => return Err("malformed header: no whitespace before pixel data".into()),
    }
    let plane = width * height;
    if h.rest.len() < 3 * plane {
        return Err(format!("truncated payload: {} of {} bytes", h.rest.len(), 3 * plane));
    }
    let mut data = vec![0.0; 3 * plane];
    for (p, rgb) in h.rest[..3 * plane].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = rgb[c] as f64 / 255.0;
        }
    }
    Array::new(vec![3, height, width], data).map_err(|e| e.to_string())
}

pub fn encode_ppm(image: &Array) -> std::result::Result<Vec<u8>, String> {
    let &[3, height, width] = image.shape() else {
        return Err(format!("expected a [3, height, width] image, got {:?}", image.shape()));
    };
    let plane = width * height;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    let data = image.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push(quantize(data[c * plane + p]));
        }
    }
    Ok(out)
}

/// Round half up onto `0..=255`.
fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}
