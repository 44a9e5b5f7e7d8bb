//! 8-bit RGB raster and binary PPM (P6) codec.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: usize, height: usize, px: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&px);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Validation(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, row: usize, col: usize, px: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Copy `src` with its top-left corner at `(row, col)`.
    pub fn blit(&mut self, src: &RgbImage, row: usize, col: usize) {
        for r in 0..src.height {
            let dst = ((row + r) * self.width + col) * 3;
            let s = r * src.width * 3;
            self.data[dst..dst + src.width * 3].copy_from_slice(&src.data[s..s + src.width * 3]);
        }
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> RgbImage {
        let mut out = RgbImage::new(width, height);
        for r in 0..height {
            let s = ((row + r) * self.width + col) * 3;
            out.data[r * width * 3..(r + 1) * width * 3]
                .copy_from_slice(&self.data[s..s + width * 3]);
        }
        out
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }
}

/// Pixel `(r, c)` moves to `(H - 1 - r, W - 1 - c)`.
pub fn rotate180(img: &RgbImage) -> RgbImage {
    let mut out = RgbImage::new(img.width, img.height);
    let n = img.width * img.height;
    for i in 0..n {
        let j = n - 1 - i;
        out.data[j * 3..j * 3 + 3].copy_from_slice(&img.data[i * 3..i * 3 + 3]);
    }
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Parse a binary PPM with maxval 255. `path` only labels errors.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let err = |offset: usize, what: &str| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("byte offset {offset}: {what}"),
    };
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err(start, "truncated header"));
        }
        fields.push((start, &bytes[start..pos]));
    }
    if fields[0].1 != b"P6" {
        return Err(err(fields[0].0, "expected magic P6"));
    }
    let num = |i: usize| -> Result<usize> {
        std::str::from_utf8(fields[i].1)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(fields[i].0, "malformed integer"))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(err(fields[3].0, "only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(err(fields[1].0, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(err(
            bytes.len(),
            &format!("raster truncated, expected {need} bytes"),
        ));
    }
    if bytes.len() > pos + need {
        return Err(err(pos + need, "trailing bytes after raster"));
    }
    RgbImage::from_raw(width, height, bytes[pos..].to_vec())
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rotate_two_by_two() {
        let (a, b, c, d) = ([1, 1, 1], [2, 2, 2], [3, 3, 3], [4, 4, 4]);
        let img = RgbImage::from_raw(2, 2, [a, b, c, d].concat()).unwrap();
        let r = rotate180(&img);
        assert_eq!(r.as_raw(), [d, c, b, a].concat().as_slice());
    }

    #[test]
    fn rotate_single_pixel() {
        let img = RgbImage::filled(1, 1, [9, 8, 7]);
        assert_eq!(rotate180(&img), img);
    }

    #[test]
    fn ppm_errors_carry_offsets() {
        let p = Path::new("x.ppm");
        let msg = decode_ppm(b"P5\n1 1\n255\n\0\0\0", p)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("offset 0"), "{msg}");
        let msg = decode_ppm(b"P6\n2 2\n255\n\0\0\0", p)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("truncated"), "{msg}");
        let msg = decode_ppm(b"P6\n1 x\n255\n\0\0\0", p)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("offset 5"), "{msg}");
    }

    proptest! {
        #[test]
        fn rotate_is_involution(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let data: Vec<u8> = (0..w * h * 3).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let img = RgbImage::from_raw(w, h, data).unwrap();
            prop_assert_eq!(rotate180(&rotate180(&img)), img.clone());
            let back = decode_ppm(&encode_ppm(&img), Path::new("mem")).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
