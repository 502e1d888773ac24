use super::pnm::header_tokens;
use super::{ImageError, ImageF32};

/// Writes a grayscale little-endian PFM. Rows are stored bottom-up and any
/// NaN is written as the canonical quiet NaN.
pub fn save_pfm(img: &ImageF32) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    out.reserve(img.data().len() * 4);
    for row in img.data().chunks_exact(img.width()).rev() {
        for &v in row {
            let v = if v.is_nan() { f32::NAN } else { v };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_pfm(bytes: &[u8]) -> Result<ImageF32, ImageError> {
    if bytes.get(..2) != Some(b"Pf") {
        return Err(ImageError::BadMagic { expected: "Pf" });
    }
    let (tokens, ws) = header_tokens(&bytes[2..], 3)?;
    let dim = |t: &str, what: &str| match t.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(ImageError::BadHeader(format!("invalid {what} '{t}'"))),
    };
    let width = dim(&tokens[0], "width")?;
    let height = dim(&tokens[1], "height")?;
    let scale: f32 = tokens[2]
        .parse()
        .map_err(|_| ImageError::BadHeader(format!("invalid scale '{}'", tokens[2])))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(ImageError::BadHeader(format!("invalid scale '{}'", tokens[2])));
    }
    let little_endian = scale < 0.0;
    let payload = &bytes[(2 + ws + 1).min(bytes.len())..];
    let expected = width * height * 4;
    if payload.len() != expected {
        return Err(ImageError::SizeMismatch(format!(
            "{width}x{height} PFM needs {expected} payload bytes, got {}",
            payload.len()
        )));
    }
    let mut data = vec![0f32; width * height];
    for (file_row, chunk) in payload.chunks_exact(width * 4).enumerate() {
        let y = height - 1 - file_row;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            data[y * width + x] = if v.is_nan() { f32::NAN } else { v };
        }
    }
    ImageF32::new(width, height, data)
}
