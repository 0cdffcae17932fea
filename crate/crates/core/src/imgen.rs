//! Phenotype images: raw responses rendered as 220×200 grayscale.
//!
//! Each response byte is one pixel intensity, filled row-major into 200 rows
//! of 220 columns. The conversion is lossless in both directions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::puf_sim::{ResponseMeta, RESPONSE_BITS, RESPONSE_BYTES};

pub const WIDTH: usize = 220;
pub const HEIGHT: usize = 200;
pub const PIXELS: usize = WIDTH * HEIGHT;

const _: () = assert!(PIXELS == RESPONSE_BYTES);

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("line {line}, column {column}: invalid hex digit {found:?}")]
    InvalidHex { line: usize, column: usize, found: char },
    #[error("line {line}: expected 8 hex characters, found {len}")]
    LineLength { line: usize, len: usize },
    #[error("insufficient response data: {available} bytes, need 44000")]
    Insufficient { available: usize },
    #[error("expected 44000 bytes, got {0}")]
    Length(usize),
    #[error("malformed PGM header: {0}")]
    PgmHeader(String),
    #[error("PGM dimensions {width}x{height}, expected 220x200")]
    Dimensions { width: usize, height: usize },
    #[error("PGM maxval {0}, expected 255")]
    Maxval(usize),
    #[error("PGM payload has {0} bytes, expected 44000")]
    Payload(usize),
    #[error("image sizes differ: {0} vs {1} pixels")]
    SizeMismatch(usize, usize),
}

/// A rendered response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phenotype {
    /// Row-major intensities, `HEIGHT` rows of `WIDTH`.
    pub pixels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ResponseMeta>,
}

impl Phenotype {
    pub fn width(&self) -> usize {
        WIDTH
    }

    pub fn height(&self) -> usize {
        HEIGHT
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * WIDTH + col]
    }

    /// Inverse of [`imgen`].
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.clone()
    }
}

/// Parse a DWORD-per-line hex dump into the first 44,000 response bytes.
///
/// Each line holds exactly eight hex digits (either case), read as four bytes
/// in written order. Bytes past 44,000 are dropped with a warning.
pub fn parse_hex_response(text: &str) -> Result<Vec<u8>, ImageError> {
    let mut bytes = Vec::with_capacity(RESPONSE_BYTES);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let chars: Vec<char> = line.chars().collect();
        if chars.len() != 8 {
            return Err(ImageError::LineLength { line: line_no, len: chars.len() });
        }
        let mut digits = [0u8; 8];
        for (c, ch) in chars.iter().enumerate() {
            digits[c] = ch
                .to_digit(16)
                .ok_or(ImageError::InvalidHex { line: line_no, column: c + 1, found: *ch })?
                as u8;
        }
        for pair in digits.chunks_exact(2) {
            bytes.push((pair[0] << 4) | pair[1]);
        }
    }
    if bytes.len() < RESPONSE_BYTES {
        return Err(ImageError::Insufficient { available: bytes.len() });
    }
    if bytes.len() > RESPONSE_BYTES {
        log::warn!("ignoring {} bytes past the first {RESPONSE_BYTES}", bytes.len() - RESPONSE_BYTES);
        bytes.truncate(RESPONSE_BYTES);
    }
    Ok(bytes)
}

/// Render bytes as 11,000 uppercase DWORD lines.
pub fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() / 4 * 9);
    for dword in bytes.chunks(4) {
        for b in dword {
            write!(out, "{b:02X}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Render a 44,000-byte response as a phenotype.
pub fn imgen(bytes: &[u8]) -> Result<Phenotype, ImageError> {
    if bytes.len() != PIXELS {
        return Err(ImageError::Length(bytes.len()));
    }
    Ok(Phenotype { pixels: bytes.to_vec(), label: None, meta: None })
}

/// Binary PGM: `P5\n220 200\n255\n` followed by the raw pixels.
pub fn to_pgm(p: &Phenotype) -> Vec<u8> {
    let mut out = format!("P5\n{WIDTH} {HEIGHT}\n255\n").into_bytes();
    out.extend_from_slice(&p.pixels);
    out
}

pub fn from_pgm(data: &[u8]) -> Result<Phenotype, ImageError> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(ImageError::PgmHeader("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        skip_space_and_comments(data, &mut pos);
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::PgmHeader(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&data[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::PgmHeader("number out of range".into()))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(ImageError::PgmHeader("no whitespace after maxval".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width != WIDTH || height != HEIGHT {
        return Err(ImageError::Dimensions { width, height });
    }
    if maxval != 255 {
        return Err(ImageError::Maxval(maxval));
    }
    let payload = &data[pos..];
    if payload.len() != PIXELS {
        return Err(ImageError::Payload(payload.len()));
    }
    Ok(Phenotype { pixels: payload.to_vec(), label: None, meta: None })
}

fn skip_space_and_comments(data: &[u8], pos: &mut usize) {
    while *pos < data.len() {
        match data[*pos] {
            b'#' => {
                while *pos < data.len() && data[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

/// `1 - hamming(a, b) / 352000`, computed over the pixel bit streams.
pub fn image_similarity(a: &Phenotype, b: &Phenotype) -> Result<f64, ImageError> {
    if a.pixels.len() != b.pixels.len() {
        return Err(ImageError::SizeMismatch(a.pixels.len(), b.pixels.len()));
    }
    let diff: u64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| u64::from((x ^ y).count_ones())).sum();
    Ok(1.0 - diff as f64 / RESPONSE_BITS as f64)
}
