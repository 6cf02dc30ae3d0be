//! Binary netpbm rasters: P6 for RGB images, P5 for label masks.
//!
//! Writers always emit the canonical header `P{n}\n{w} {h}\n255\n`. Readers
//! accept any whitespace and `#` comments inside the header but require
//! `maxval = 255` and an exact payload length.

use std::path::Path;

use super::tensor::{ImageTensor, MaskTensor};
use crate::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    payload_offset: usize,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn skip_whitespace_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(pos) {
                    pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            _ => return pos,
        }
    }
}

fn parse_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let pos = skip_whitespace_and_comments(bytes, pos);
    let digits = bytes[pos.min(bytes.len())..]
        .iter()
        .take_while(|b| b.is_ascii_digit())
        .count();
    if digits == 0 {
        return Err(format_err(pos, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[pos..pos + digits]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| format_err(pos, format!("{what} {text} out of range")))?;
    Ok((value, pos + digits))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let (width, pos) = parse_uint(bytes, 2, "width")?;
    let (height, pos) = parse_uint(bytes, pos, "height")?;
    let maxval_pos = skip_whitespace_and_comments(bytes, pos);
    let (maxval, pos) = parse_uint(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(2, format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(format_err(
            maxval_pos,
            format!("maxval must be 255, got {maxval}"),
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(format_err(pos, "expected single whitespace after maxval")),
    }
    Ok(Header {
        width,
        height,
        payload_offset: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, samples_per_pixel: usize) -> Result<&'a [u8]> {
    let expected = header.width * header.height * samples_per_pixel;
    let available = bytes.len() - header.payload_offset;
    if available < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {available}"),
        ));
    }
    if available > expected {
        return Err(format_err(
            header.payload_offset + expected,
            format!("{} trailing bytes after payload", available - expected),
        ));
    }
    Ok(&bytes[header.payload_offset..])
}

/// Maps a channel value to a byte with round-half-up, clamped to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageTensor> {
    let header = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &header, 3)?
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    ImageTensor::new(header.height, header.width, data)
}

pub fn encode_ppm(img: &ImageTensor) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn decode_pgm(bytes: &[u8], num_classes: usize) -> Result<MaskTensor> {
    let header = parse_header(bytes, b"P5")?;
    let labels = payload(bytes, &header, 1)?.to_vec();
    MaskTensor::new(header.height, header.width, num_classes, labels)
}

pub fn encode_pgm(mask: &MaskTensor) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.labels());
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    decode_ppm(&read_bytes(path)?)
}

pub fn write_image(img: &ImageTensor, path: &Path) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_mask(path: &Path, num_classes: usize) -> Result<MaskTensor> {
    decode_pgm(&read_bytes(path)?, num_classes)
}

pub fn write_mask(mask: &MaskTensor, path: &Path) -> Result<()> {
    write_bytes(path, &encode_pgm(mask))
}
