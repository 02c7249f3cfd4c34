//! Binary PGM (`P5`) decoding.

/// A decoded grayscale image with samples scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

/// Largest width × height accepted, to bound allocation on hostile headers.
pub const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum PgmError {
    #[error("missing P5 magic")]
    BadMagic,
    #[error("truncated header")]
    TruncatedHeader,
    #[error("invalid header field {0:?}")]
    BadField(String),
    #[error("maxval {0} outside 1..=65535")]
    BadMaxval(u32),
    #[error("image of {0}x{1} pixels is too large or empty")]
    BadSize(usize, usize),
    #[error("pixel data has {got} bytes, expected {want}")]
    ShortData { got: usize, want: usize },
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.buf.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.buf.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<u32, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.buf.get(self.pos) {
                None => Err(PgmError::TruncatedHeader),
                Some(_) => Err(PgmError::BadField(
                    String::from_utf8_lossy(&self.buf[start..(start + 8).min(self.buf.len())]).into_owned(),
                )),
            };
        }
        let text = std::str::from_utf8(&self.buf[start..self.pos]).expect("ascii digits");
        text.parse().map_err(|_| PgmError::BadField(text.to_string()))
    }
}

/// Decodes a `P5` image. Samples are one byte for `maxval < 256`, otherwise
/// two bytes big-endian; trailing bytes after the raster are ignored.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut cur = Cursor { buf: bytes, pos: 2 };
    let width = cur.number()? as usize;
    let height = cur.number()? as usize;
    let maxval = cur.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::BadMaxval(maxval));
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(PgmError::BadField("missing whitespace after maxval".into())),
        None => return Err(PgmError::TruncatedHeader),
    }
    let count = width
        .checked_mul(height)
        .filter(|&n| n > 0 && n <= MAX_PIXELS)
        .ok_or(PgmError::BadSize(width, height))?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[cur.pos..];
    if raster.len() < count * bps {
        return Err(PgmError::ShortData {
            got: raster.len(),
            want: count * bps,
        });
    }
    let scale = f64::from(maxval);
    let pixels = if bps == 1 {
        raster[..count].iter().map(|&b| f64::from(b).min(scale) / scale).collect()
    } else {
        raster[..count * 2]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])).min(scale) / scale)
            .collect()
    };
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

impl GrayImage {
    /// Nearest-neighbour resample to `side × side`, row-major.
    pub fn resample(&self, side: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(side * side);
        for y in 0..side {
            let sy = y * self.height / side;
            for x in 0..side {
                let sx = x * self.width / side;
                out.push(self.pixels[sy * self.width + sx]);
            }
        }
        out
    }
}

/// Encodes an 8-bit `P5` image. Values are clamped to `[0, 1]` and rounded.
pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard() {
        let bytes = b"P5\n2 2\n255\n\x00\xff\xff\x00";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.resample(2), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn all_black_is_zero() {
        let mut bytes = b"P5 3 2 255\n".to_vec();
        bytes.extend([0u8; 6]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.resample(4), vec![0.0; 16]);
    }

    #[test]
    fn comments_and_sixteen_bit() {
        let bytes = b"P5\n# made by hand\n1 1\n# max\n65535\n\x80\x00";
        let img = decode_pgm(bytes).unwrap();
        assert!((img.pixels[0] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn downsample_picks_nearest() {
        // 4x1 row 0,85,170,255 -> 2x2 picks columns 0 and 2, rows repeat
        let bytes = b"P5 4 1 255\n\x00\x55\xaa\xff";
        let img = decode_pgm(bytes).unwrap();
        let v = img.resample(2);
        assert_eq!(v, vec![0.0, 170.0 / 255.0, 0.0, 170.0 / 255.0]);
    }

    #[test]
    fn malformed_headers() {
        assert_eq!(decode_pgm(b"P2 1 1 255\n\x00"), Err(PgmError::BadMagic));
        assert_eq!(decode_pgm(b"P5 1"), Err(PgmError::TruncatedHeader));
        assert!(matches!(decode_pgm(b"P5 x 1 255\n\x00"), Err(PgmError::BadField(_))));
        assert_eq!(decode_pgm(b"P5 1 1 0\n\x00"), Err(PgmError::BadMaxval(0)));
        assert_eq!(decode_pgm(b"P5 0 1 255\n"), Err(PgmError::BadSize(0, 1)));
        assert_eq!(
            decode_pgm(b"P5 2 2 255\n\x00"),
            Err(PgmError::ShortData { got: 1, want: 4 })
        );
        assert!(decode_pgm(b"P5 99999999999 1 255\n").is_err());
    }

    #[test]
    fn encode_then_decode() {
        let px = [0.0, 1.0, 0.2, 0.8, 0.4, 0.6];
        let img = decode_pgm(&encode_pgm(3, 2, &px)).unwrap();
        for (a, b) in img.pixels.iter().zip(px) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
