//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::{Path, PathBuf};

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn byte_to_value<T: Scalar>(b: u8) -> T {
    T::lit(2.0 * b as f64 / 255.0 - 1.0)
}

fn value_to_byte<T: Scalar>(v: T) -> u8 {
    ((v.as_f64() + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    payload_at: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let bad = |why: &str| Error::format(path, why);
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero image extent"));
    }
    Ok(Header { channels, width, height, payload_at: pos + 1 })
}

/// Read a P5/P6 file as a batch of one image; byte `b` maps to `2b/255 - 1`.
pub fn read_image<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageBatch<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = parse_header(&bytes, path)?;
    let plane = h.width * h.height;
    let need = plane * h.channels;
    let payload = bytes
        .get(h.payload_at..h.payload_at + need)
        .ok_or_else(|| Error::format(path, format!("truncated payload: need {need} bytes")))?;
    // interleaved RGB -> planar CHW
    let mut data = vec![T::zero(); need];
    for (i, &b) in payload.iter().enumerate() {
        let (pix, ch) = (i / h.channels, i % h.channels);
        data[ch * plane + pix] = byte_to_value(b);
    }
    ImageBatch::new([1, h.channels, h.height, h.width], data)
}

/// Encode a single image as P5/P6 bytes.
pub fn encode_image<T: Scalar>(x: &ImageBatch<T>) -> Result<Vec<u8>> {
    let [n, c, h, w] = x.shape();
    if n != 1 {
        return Err(Error::shape(format!("can only write one image at a time, batch has {n}")));
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(plane * c);
    for pix in 0..plane {
        for ch in 0..c {
            out.push(value_to_byte(x.data()[ch * plane + pix]));
        }
    }
    Ok(out)
}

/// Write a single image; values map to `clamp(round((v+1)/2*255), 0, 255)`.
pub fn write_image<T: Scalar>(path: impl AsRef<Path>, x: &ImageBatch<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(x)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Every `.ppm`/`.pgm` file in `dir`, in lexicographic order of file name.
pub fn load_dataset_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<ImageBatch<T>>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no .ppm or .pgm files"));
    }
    paths.iter().map(read_image).collect()
}
