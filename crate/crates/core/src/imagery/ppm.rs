use thiserror::Error;

use super::RgbImage;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PpmError {
    #[error("unsupported PPM magic")]
    UnsupportedMagic,
    #[error("malformed PPM header: {0}")]
    BadHeader(&'static str),
    #[error("unsupported PPM maxval {0} (only 255)")]
    UnsupportedMaxval(u32),
    #[error("short PPM pixel data: expected {expected} bytes, found {found}")]
    ShortPixelData { expected: usize, found: usize },
}

/// Binary P6 with header `P6\n{w} {h}\n255\n`.
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(image.pixels());
    out
}

/// Decodes binary P6. Accepts any whitespace and `#` comments in the
/// header, as the format allows, but only maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::UnsupportedMagic);
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PpmError::BadHeader("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PpmError::BadHeader("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PpmError::BadHeader("number out of range"))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::BadHeader("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PpmError::BadHeader("zero dimension"));
    }
    let expected = 3usize
        .checked_mul(width as usize)
        .and_then(|v| v.checked_mul(height as usize))
        .ok_or(PpmError::BadHeader("dimensions overflow"))?;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(PpmError::ShortPixelData { expected, found: data.len() });
    }
    Ok(RgbImage::new(width, height, data[..expected].to_vec()).expect("length checked"))
}
