//! Minimal binary PPM (P6) codec. Decoding accepts the usual liberal
//! whitespace and `#` comments in the header; encoding always emits the
//! canonical `P6\n<w> <h>\n255\n` form so that encode∘decode is the
//! identity on canonical payloads.

use super::{Image, IngestError};

/// Parsed P6 header: width, height, maxval, offset of the first pixel byte.
struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn read_uint(bytes: &[u8], start: usize) -> Result<(usize, usize), IngestError> {
    let i = skip_space_and_comments(bytes, start);
    let mut j = i;
    while j < bytes.len() && bytes[j].is_ascii_digit() {
        j += 1;
    }
    if j == i {
        if j >= bytes.len() {
            return Err(IngestError::TruncatedPayload);
        }
        return Err(IngestError::UnsupportedFormat(format!(
            "expected integer in PPM header, found byte 0x{:02x}",
            bytes[j]
        )));
    }
    let text = std::str::from_utf8(&bytes[i..j]).expect("digits are ASCII");
    let value = text
        .parse::<usize>()
        .map_err(|_| IngestError::UnsupportedFormat("PPM header integer overflow".into()))?;
    Ok((value, j))
}

fn parse_header(bytes: &[u8]) -> Result<Header, IngestError> {
    if bytes.len() < 2 {
        return Err(IngestError::TruncatedPayload);
    }
    match &bytes[..2] {
        b"P6" => {}
        magic => {
            return Err(IngestError::UnsupportedFormat(format!(
                "not a binary PPM (magic {:?})",
                String::from_utf8_lossy(magic)
            )))
        }
    }
    let (width, pos) = read_uint(bytes, 2)?;
    let (height, pos) = read_uint(bytes, pos)?;
    let (maxval, pos) = read_uint(bytes, pos)?;
    // Exactly one whitespace byte separates the header from the pixel data.
    if pos >= bytes.len() {
        return Err(IngestError::TruncatedPayload);
    }
    if !bytes[pos].is_ascii_whitespace() {
        return Err(IngestError::UnsupportedFormat(
            "missing whitespace after PPM maxval".into(),
        ));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decode a binary P6 payload with maxval 255 into an [`Image`].
pub fn decode_ppm(bytes: &[u8]) -> Result<Image, IngestError> {
    let header = parse_header(bytes)?;
    if header.maxval != 255 {
        return Err(IngestError::UnsupportedFormat(format!(
            "PPM maxval {} unsupported (only 255)",
            header.maxval
        )));
    }
    if header.width == 0 || header.height == 0 {
        return Err(IngestError::UnsupportedFormat("zero-sized PPM".into()));
    }
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| IngestError::UnsupportedFormat("PPM dimensions overflow".into()))?;
    let data = &bytes[header.data_start..];
    if data.len() < expected {
        return Err(IngestError::TruncatedPayload);
    }
    if data.len() > expected {
        return Err(IngestError::TrailingData);
    }
    Ok(Image::from_rgb_bytes(
        header.width,
        header.height,
        data.to_vec(),
    ))
}

/// Read only the dimensions from a P6 header, without touching pixel data.
pub fn peek_ppm_dims(bytes: &[u8]) -> Result<(usize, usize), IngestError> {
    let header = parse_header(bytes)?;
    if header.maxval != 255 {
        return Err(IngestError::UnsupportedFormat(format!(
            "PPM maxval {} unsupported (only 255)",
            header.maxval
        )));
    }
    Ok((header.width, header.height))
}

/// Encode as canonical binary P6 with maxval 255.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_bytes());
    out
}
