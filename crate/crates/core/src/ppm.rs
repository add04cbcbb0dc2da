//! Binary Netpbm codec: P6 (RGB) and P5 (grayscale), maxval 255 only.
//!
//! Loading maps each byte b to b/255; saving multiplies by 255 and rounds
//! half-to-even, so a load/save round trip reproduces the original bytes
//! exactly and a save/load round trip is within 1/510 per value. Parse
//! failures name the byte offset at which they were detected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Header tokenizer that tracks byte offsets and skips `#` comments.
struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    /// Next decimal token; returns (token offset, value).
    fn number(&mut self, what: &str) -> Result<(usize, u64)> {
        self.skip_separators();
        let start = self.pos;
        if start >= self.bytes.len() {
            return Err(Error::MalformedPpmHeader {
                offset: start,
                detail: format!("header ended while reading {what}"),
            });
        }
        let mut end = start;
        while end < self.bytes.len() && !self.bytes[end].is_ascii_whitespace() {
            end += 1;
        }
        let token = &self.bytes[start..end];
        if !token.iter().all(u8::is_ascii_digit) {
            return Err(Error::MalformedPpmHeader {
                offset: start,
                detail: format!(
                    "{what} is not a decimal number: {:?}",
                    String::from_utf8_lossy(token)
                ),
            });
        }
        let value = std::str::from_utf8(token)
            .expect("ascii digits")
            .parse::<u64>()
            .map_err(|_| Error::MalformedPpmHeader {
                offset: start,
                detail: format!("{what} does not fit in 64 bits"),
            })?;
        self.pos = end;
        Ok((start, value))
    }
}

/// Loads a binary P6/P5 file with maxval 255 into a channel-major tensor.
pub fn load_ppm(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path)?;
    decode_ppm(&bytes)
}

/// Decodes an in-memory Netpbm byte stream. See [`load_ppm`].
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < 2 {
        return Err(Error::MalformedPpmHeader {
            offset: 0,
            detail: "file is shorter than a magic number".to_string(),
        });
    }
    let channels = match &bytes[0..2] {
        b"P6" => 3,
        b"P5" => 1,
        magic => {
            return Err(Error::UnsupportedPpmFormat {
                magic: String::from_utf8_lossy(magic).into_owned(),
                offset: 0,
            })
        }
    };

    let mut scanner = HeaderScanner::new(bytes, 2);
    let (w_off, width) = scanner.number("width")?;
    let (h_off, height) = scanner.number("height")?;
    let (m_off, maxval) = scanner.number("maxval")?;
    if width == 0 {
        return Err(Error::MalformedPpmHeader {
            offset: w_off,
            detail: "width is zero".to_string(),
        });
    }
    if height == 0 {
        return Err(Error::MalformedPpmHeader {
            offset: h_off,
            detail: "height is zero".to_string(),
        });
    }
    if maxval != 255 {
        return Err(Error::UnsupportedPpmMaxval {
            maxval,
            offset: m_off,
        });
    }

    // Exactly one whitespace byte separates the header from the payload.
    if scanner.pos >= bytes.len() || !bytes[scanner.pos].is_ascii_whitespace() {
        return Err(Error::MalformedPpmHeader {
            offset: scanner.pos,
            detail: "expected a single whitespace byte before the payload".to_string(),
        });
    }
    let payload_start = scanner.pos + 1;

    let (width, height) = (width as usize, height as usize);
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(Error::MalformedPpmHeader {
            offset: w_off,
            detail: format!("dimensions {width}x{height} overflow"),
        })?;
    let payload = &bytes[payload_start.min(bytes.len())..];
    if payload.len() < expected {
        return Err(Error::TruncatedPpmPayload {
            offset: bytes.len(),
            expected,
            actual: payload.len(),
        });
    }

    // Interleaved payload -> channel-major planes.
    let mut data = vec![0.0f64; expected];
    let plane = width * height;
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = payload[p * channels + c] as f64 / 255.0;
        }
    }
    Ok(ImageTensor::from_checked_parts(channels, height, width, data))
}

/// Saves as binary P6 (3 channels) or P5 (1 channel), maxval 255.
///
/// Values are quantized as round-half-to-even of v*255, so 0.5 maps to 128.
pub fn save_ppm(img: &ImageTensor, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

/// Encodes to an in-memory Netpbm byte stream. See [`save_ppm`].
pub fn encode_ppm(img: &ImageTensor) -> Vec<u8> {
    use crate::image::Tensor;
    let (channels, height, width) = img.shape();
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    let plane = width * height;
    let data = img.data();
    out.reserve(plane * channels);
    for p in 0..plane {
        for c in 0..channels {
            out.push((data[c * plane + p] * 255.0).round_ties_even() as u8);
        }
    }
    out
}
