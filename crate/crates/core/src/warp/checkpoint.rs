//! Binary checkpoint of a list of warp matrices.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "WARP"
//! version  u32      currently 1
//! count    u32      number of matrices
//! per matrix:
//!   form   u8       0 identity, 1 diagonal, 2 dense, 3 kronecker
//!   dim    u64      length of the gradient it acts on
//!   fa     u64      kronecker factor A side, else 0
//!   fb     u64      kronecker factor B side, else 0
//!   entries f64 × n  n = 0, dim, dim², fa² + fb² by form
//! ```

use std::path::Path;

use super::matrix::{WarpForm, WarpMatrix};
use crate::error::{Error, Result};

pub const WARP_MAGIC: &[u8; 4] = b"WARP";
pub const WARP_VERSION: u32 = 1;

pub fn encode_warps(warps: &[WarpMatrix]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WARP_MAGIC);
    out.extend_from_slice(&WARP_VERSION.to_le_bytes());
    out.extend_from_slice(&(warps.len() as u32).to_le_bytes());
    for p in warps {
        out.push(p.form().tag());
        out.extend_from_slice(&(p.dim() as u64).to_le_bytes());
        let (fa, fb) = match p {
            WarpMatrix::Kronecker { a_dim, b_dim, .. } => (*a_dim as u64, *b_dim as u64),
            _ => (0, 0),
        };
        out.extend_from_slice(&fa.to_le_bytes());
        out.extend_from_slice(&fb.to_le_bytes());
        for x in p.params() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn size(&mut self) -> std::result::Result<usize, String> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| format!("size {x} does not fit in memory"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn floats(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        if n > self.remaining() / 8 {
            return Err(format!(
                "{n} entries declared but only {} bytes remain",
                self.remaining()
            ));
        }
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<Vec<WarpMatrix>, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != WARP_MAGIC {
        return Err("bad magic, not a warp checkpoint".into());
    }
    let version = r.u32()?;
    if version != WARP_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()? as usize;
    // Each matrix needs at least its 25-byte header.
    if count > r.remaining() / 25 {
        return Err(format!("{count} matrices declared in {} bytes", r.remaining()));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let tag = r.u8()?;
        let form = WarpForm::from_tag(tag).ok_or_else(|| format!("matrix {i}: unknown form tag {tag}"))?;
        let dim = r.size()?;
        let fa = r.size()?;
        let fb = r.size()?;
        if dim == 0 {
            return Err(format!("matrix {i}: zero dim"));
        }
        if form != WarpForm::Kronecker && (fa != 0 || fb != 0) {
            return Err(format!("matrix {i}: factor dims set on a {form} warp"));
        }
        let too_big = || format!("matrix {i}: entry count overflows");
        let p = match form {
            WarpForm::Identity => WarpMatrix::identity(dim),
            WarpForm::Diagonal => WarpMatrix::Diagonal {
                diag: r.floats(dim)?,
            },
            WarpForm::Dense => {
                let n = dim.checked_mul(dim).ok_or_else(too_big)?;
                WarpMatrix::Dense {
                    dim,
                    entries: r.floats(n)?,
                }
            }
            WarpForm::Kronecker => {
                if fa == 0 || fb == 0 || fa.checked_mul(fb) != Some(dim) {
                    return Err(format!("matrix {i}: factors {fa}x{fb} do not give dim {dim}"));
                }
                let na = fa.checked_mul(fa).ok_or_else(too_big)?;
                let nb = fb.checked_mul(fb).ok_or_else(too_big)?;
                let a = r.floats(na)?;
                let b = r.floats(nb)?;
                WarpMatrix::Kronecker {
                    a_dim: fa,
                    b_dim: fb,
                    a,
                    b,
                }
            }
        };
        out.push(p);
    }
    if r.remaining() != 0 {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    Ok(out)
}

/// Decodes a checkpoint. `origin` only labels errors.
pub fn decode_warps(bytes: &[u8], origin: &Path) -> Result<Vec<WarpMatrix>> {
    decode_inner(bytes).map_err(|msg| Error::parse(origin, msg))
}

pub fn save_warps(warps: &[WarpMatrix], path: &Path) -> Result<()> {
    std::fs::write(path, encode_warps(warps)).map_err(|e| Error::io(path, e))
}

pub fn load_warps(path: &Path) -> Result<Vec<WarpMatrix>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_warps(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<WarpMatrix> {
        vec![
            WarpMatrix::identity(7),
            WarpMatrix::diagonal(vec![1.5, -0.0, f64::MIN_POSITIVE]).unwrap(),
            WarpMatrix::dense(2, vec![0.1, 0.2, 0.3, 1.0 / 3.0]).unwrap(),
            WarpMatrix::kronecker(2, 1, vec![1.0, 2.0, 3.0, 4.0], vec![-7.25]).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ws = sample();
        let bytes = encode_warps(&ws);
        let back = decode_warps(&bytes, Path::new("mem")).unwrap();
        assert_eq!(encode_warps(&back), bytes);
        for (a, b) in ws.iter().zip(&back) {
            let (pa, pb) = (a.params(), b.params());
            assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(a.form(), b.form());
            assert_eq!(a.dim(), b.dim());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_warps(&[WarpMatrix::dense(1, vec![2.0]).unwrap()]);
        assert_eq!(&bytes[..4], b"WARP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[12], 2);
        assert_eq!(&bytes[13..21], &1u64.to_le_bytes());
        assert_eq!(&bytes[37..45], &2.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 45);
    }

    #[test]
    fn hostile_inputs_are_errors() {
        let good = encode_warps(&sample());
        for cut in 0..good.len() {
            assert!(decode_warps(&good[..cut], Path::new("x")).is_err(), "cut {cut}");
        }
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_warps(&extra, Path::new("x")).is_err());

        // dense warp claiming a huge dim
        let mut huge = b"WARP".to_vec();
        huge.extend_from_slice(&1u32.to_le_bytes());
        huge.extend_from_slice(&1u32.to_le_bytes());
        huge.push(2);
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&[0; 16]);
        assert!(matches!(decode_warps(&huge, Path::new("x")), Err(Error::Parse { .. })));
    }
}
