//! Binary PPM (P6) frames and bilinear resizing.

use crate::error::{Error, Result};

/// An 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn encode(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("malformed header: missing {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| format!("malformed header: {what} out of range"))
    }
}

/// Decodes a binary PPM. Errors are plain messages; callers attach the path.
pub fn decode(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    match bytes.get(..2) {
        Some(b"P6") => {}
        Some(b"P5") => return Err("wrong channel count: P5 (1 channel), expected P6 RGB".into()),
        _ => return Err("malformed header: missing P6 magic".into()),
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err("malformed header: zero image dimension".into());
    }
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err("malformed header: no whitespace after maxval".into()),
    }
    let need = width * height * 3;
    let body = &bytes[h.pos..];
    if body.len() < need {
        return Err(format!(
            "truncated pixel data: need {need} bytes, found {}",
            body.len()
        ));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: body[..need].to_vec(),
    })
}

pub fn read(path: &std::path::Path) -> Result<RgbImage> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::data(path, format!("cannot read frame: {e}")))?;
    decode(&bytes).map_err(|reason| Error::data(path, reason))
}

/// Bilinear resize with half-pixel centers, returning `H×W×3` floats in
/// `[0, 1]` (bytes divided by 255). Same-size input is copied exactly.
pub fn resize_to_unit(img: &RgbImage, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let src = |x: usize, y: usize, c: usize| img.pixels[(y * img.width + x) * 3 + c] as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let top = src(x0, y0, c) * (1.0 - wx) + src(x1, y0, c) * wx;
                let bottom = src(x0, y1, c) * (1.0 - wx) + src(x1, y1, c) * wx;
                out.push((top * (1.0 - wy) + bottom * wy) / 255.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let mut img = RgbImage::new(3, 2);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = (i * 13) as u8;
        }
        let bytes = encode(&img);
        assert_eq!(decode(&bytes).unwrap(), img);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn header_with_comments() {
        let mut bytes = b"P6 # comment\n2 # w\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.get(1, 0), [4, 5, 6]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(decode(b"P3\n1 1\n255\n1 2 3")
            .unwrap_err()
            .contains("malformed"));
        assert!(decode(b"P5\n1 1\n255\n\x00")
            .unwrap_err()
            .contains("channel"));
        assert!(decode(b"P6\n2 2\n255\n\x00\x00")
            .unwrap_err()
            .contains("truncated"));
        assert!(decode(b"P6\nx 2\n255\n").is_err());
        assert!(decode(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn same_size_resize_is_identity() {
        let mut img = RgbImage::new(5, 4);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = (i * 7 % 256) as u8;
        }
        let out = resize_to_unit(&img, 4, 5);
        for (o, &p) in out.iter().zip(&img.pixels) {
            assert_eq!(*o, p as f64 / 255.0);
        }
    }

    #[test]
    fn black_frame_is_zero() {
        let out = resize_to_unit(&RgbImage::new(7, 3), 4, 4);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_upscale() {
        // 2×2 checkerboard, white at (0,0) and (1,1).
        let mut img = RgbImage::new(2, 2);
        img.put(0, 0, [255; 3]);
        img.put(1, 1, [255; 3]);
        let out = resize_to_unit(&img, 4, 4);
        // Source coordinates of output 0..4 are -0.25→0 (clamped), 0.25, 0.75, 1.25→1.
        let coord = [0.0, 0.25, 0.75, 1.0];
        for oy in 0..4 {
            for ox in 0..4 {
                let (wx, wy) = (coord[ox], coord[oy]);
                let expected = (1.0 - wx) * (1.0 - wy) + wx * wy;
                let got = out[(oy * 4 + ox) * 3];
                assert!(
                    (got - expected).abs() < 1e-12,
                    "({ox},{oy}) {got} vs {expected}"
                );
            }
        }
    }
}
