use super::{ImageError, ImageU8};

/// Splits a netpbm-style header into whitespace-separated tokens, skipping
/// `#` comments. Returns the tokens and the offset of the single whitespace
/// byte that terminates the last token.
pub(super) fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize), ImageError> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        // skip whitespace and comments
        loop {
            match bytes.get(i) {
                Some(b) if b.is_ascii_whitespace() => i += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(i) {
                        i += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::BadHeader("header ends early".into())),
            }
        }
        let start = i;
        while let Some(&b) = bytes.get(i) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            i += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..i])
            .map_err(|_| ImageError::BadHeader("non-ascii header token".into()))?;
        tokens.push(tok.to_string());
    }
    match bytes.get(i) {
        Some(b) if b.is_ascii_whitespace() => Ok((tokens, i)),
        _ => Err(ImageError::BadHeader("missing whitespace after header".into())),
    }
}

fn parse_dim(tok: &str, what: &str) -> Result<usize, ImageError> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(ImageError::BadHeader(format!("invalid {what} '{tok}'"))),
    }
}

/// Parses binary PGM (`P5`) or PPM (`P6`) with 8-bit samples.
pub fn load_pnm(bytes: &[u8]) -> Result<ImageU8, ImageError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1u8,
        Some(b"P6") => 3u8,
        _ => return Err(ImageError::BadMagic { expected: "P5 or P6" }),
    };
    let (tokens, ws) = header_tokens(&bytes[2..], 3)?;
    let width = parse_dim(&tokens[0], "width")?;
    let height = parse_dim(&tokens[1], "height")?;
    let maxval: u32 = tokens[2]
        .parse()
        .map_err(|_| ImageError::BadHeader(format!("invalid maxval '{}'", tokens[2])))?;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    let start = 2 + ws + 1;
    let expected = width * height * channels as usize;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    ImageU8::new(width, height, channels, payload[..expected].to_vec())
}

pub fn save_pnm(img: &ImageU8) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_gray_example() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 255]);
        let img = load_pnm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.get(0, 0, 0), 0);
        assert_eq!(img.get(1, 0, 0), 64);
        assert_eq!(img.get(0, 1, 0), 128);
        assert_eq!(img.get(1, 1, 0), 255);
    }

    #[test]
    fn parses_rgb_example() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30]);
        let img = load_pnm(&bytes).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[10, 20, 30]);
    }

    #[test]
    fn comments_between_tokens() {
        let mut bytes = b"P5\n# made by hand\n2 # width\n1\n#x\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2]);
        let img = load_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[1, 2]);
    }

    #[test]
    fn payload_may_start_with_whitespace_byte() {
        let mut bytes = b"P5 1 2 255\n".to_vec();
        bytes.extend_from_slice(b"\n ");
        assert_eq!(load_pnm(&bytes).unwrap().data(), b"\n ");
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert_eq!(
            load_pnm(b"P5\n2 2\n65535\n").unwrap_err(),
            ImageError::UnsupportedMaxval(65535)
        );
        assert!(matches!(load_pnm(b"P2\n1 1\n255\n0"), Err(ImageError::BadMagic { .. })));
        assert!(matches!(
            load_pnm(b"P5\n2 2\n255\n\x01\x02"),
            Err(ImageError::Truncated { expected: 4, actual: 2 })
        ));
        assert!(matches!(load_pnm(b"P5\n2"), Err(ImageError::BadHeader(_))));
    }

    #[test]
    fn writes_exact_headers() {
        let img = ImageU8::new(1, 1, 1, vec![7]).unwrap();
        assert_eq!(save_pnm(&img), b"P5\n1 1\n255\n\x07".to_vec());
        let img = ImageU8::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = save_pnm(&img);
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..12, h in 1usize..12, rgb in any::<bool>(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ch = if rgb { 3 } else { 1 };
            let data: Vec<u8> = (0..w * h * ch as usize).map(|_| rng.random()).collect();
            let img = ImageU8::new(w, h, ch, data).unwrap();
            let bytes = save_pnm(&img);
            prop_assert_eq!(load_pnm(&bytes).unwrap(), img.clone());
            prop_assert_eq!(save_pnm(&load_pnm(&bytes).unwrap()), bytes);
        }
    }
}
