use super::RasterImage;
use crate::error::{Error, Result};

/// Encode as binary PPM with the canonical header `P6\n<w> <h>\n255\n`.
pub fn encode_ppm(image: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image(format!("malformed PPM header: bad {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RasterImage> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::UnsupportedFormat("not a binary PPM (P6)".into()));
    }
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::Image("malformed PPM header after magic".into()));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("empty PPM extents {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PPM maxval {maxval}, only 255 is supported")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("malformed PPM header: missing separator before pixels".into()));
    }
    let data = &bytes[h.pos + 1..];
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Image("PPM extents overflow".into()))?;
    if data.len() < need {
        return Err(Error::Image(format!("truncated PPM: {} of {need} pixel bytes", data.len())));
    }
    if data.len() > need {
        return Err(Error::Image(format!("{} trailing bytes after PPM pixels", data.len() - need)));
    }
    RasterImage::from_pixels(width, height, data.to_vec())
}
