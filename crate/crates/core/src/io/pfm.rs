//! Portable FloatMap reader/writer, little-endian (`scale = -1.0`).
//!
//! Rows are stored bottom-to-top as the format prescribes; in-memory
//! buffers are top-to-bottom with `idx = y * width + x`. Round-tripping
//! through PFM is bit-identical for every f32 value including the 0.0
//! background sentinel.

use super::IoError;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

/// A decoded PFM image: 1 channel (`Pf`) or 3 channels (`PF`).
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Top-to-bottom rows, channel-interleaved.
    pub data: Vec<f32>,
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<(), IoError> {
    assert!(img.channels == 1 || img.channels == 3);
    assert_eq!(
        img.data.len(),
        (img.width * img.height * img.channels) as usize
    );
    let mut buf = Vec::with_capacity(img.data.len() * 4 + 64);
    let magic = if img.channels == 1 { "Pf" } else { "PF" };
    write!(buf, "{magic}\n{} {}\n-1.0\n", img.width, img.height).unwrap();
    let row_len = (img.width * img.channels) as usize;
    for y in (0..img.height as usize).rev() {
        for v in &img.data[y * row_len..(y + 1) * row_len] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| IoError::file(path, e))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, IoError> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| IoError::file(path, e))?;
    let mut pos = 0usize;
    let mut token = || -> Result<String, IoError> {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::format(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "Pf" => 1u32,
        "PF" => 3u32,
        other => return Err(IoError::format(path, format!("bad PFM magic {other:?}"))),
    };
    let width: u32 = token()?
        .parse()
        .map_err(|_| IoError::format(path, "bad width"))?;
    let height: u32 = token()?
        .parse()
        .map_err(|_| IoError::format(path, "bad height"))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|_| IoError::format(path, "bad scale"))?;
    if scale >= 0.0 {
        return Err(IoError::format(path, "big-endian PFM not supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = (width * height * channels) as usize;
    if raw.len() < pos + n * 4 {
        return Err(IoError::format(path, "truncated PFM raster"));
    }
    let row_len = (width * channels) as usize;
    let mut data = vec![0.0f32; n];
    for file_row in 0..height as usize {
        let y = height as usize - 1 - file_row;
        for i in 0..row_len {
            let off = pos + (file_row * row_len + i) * 4;
            data[y * row_len + i] =
                f32::from_le_bytes([raw[off], raw[off + 1], raw[off + 2], raw[off + 3]]);
        }
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1u32, 3u32] {
            let img = PfmImage {
                width: 5,
                height: 3,
                channels,
                data: (0..5 * 3 * channels)
                    .map(|i| if i % 7 == 0 { 0.0 } else { (i as f32).sqrt() * -1.5 })
                    .collect(),
            };
            let path = dir.path().join(format!("t{channels}.pfm"));
            write_pfm(&path, &img).unwrap();
            let back = read_pfm(&path).unwrap();
            assert_eq!(img, back);
            // bit-exact, including signed zero and exact payloads
            for (a, b) in img.data.iter().zip(&back.data) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"P6\n1 1\n255\n...").unwrap();
        assert!(read_pfm(&path).is_err());
    }
}
