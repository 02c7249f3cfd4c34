//! Binary snapshot of a [`ClassTable`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CTBL" | version u32 | input_dim u64 | skipped_empty u64 | alphabets u64
//! per alphabet:  name_len u32 | name utf-8 | classes u64
//! per class:     name_len u32 | name utf-8 | instances u64 | instances × input_dim f64
//! ```

use std::path::Path;

use super::table::{Alphabet, CharClass, ClassTable};
use crate::error::{Error, Result};

pub const TABLE_MAGIC: &[u8; 4] = b"CTBL";
pub const TABLE_VERSION: u32 = 1;

pub fn encode_table(table: &ClassTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.input_dim as u64).to_le_bytes());
    out.extend_from_slice(&(table.skipped_empty as u64).to_le_bytes());
    out.extend_from_slice(&(table.alphabets.len() as u64).to_le_bytes());
    let put_name = |out: &mut Vec<u8>, name: &str| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    };
    for a in &table.alphabets {
        put_name(&mut out, &a.name);
        out.extend_from_slice(&(a.classes.len() as u64).to_le_bytes());
        for c in &a.classes {
            put_name(&mut out, &c.name);
            out.extend_from_slice(&(c.instances.len() as u64).to_le_bytes());
            for inst in &c.instances {
                for x in inst {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() < n {
            return Err(format!("unexpected end of data, wanted {n} more bytes"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A count whose items need at least `min_item_bytes` each.
    fn count(&mut self, min_item_bytes: usize) -> std::result::Result<usize, String> {
        let n = self.u64()?;
        let fits = usize::try_from(n)
            .ok()
            .filter(|&n| n.saturating_mul(min_item_bytes.max(1)) <= self.buf.len());
        fits.ok_or_else(|| format!("count {n} exceeds the remaining {} bytes", self.buf.len()))
    }

    fn name(&mut self) -> std::result::Result<String, String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| "name is not utf-8".to_string())
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<ClassTable, String> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != TABLE_MAGIC {
        return Err("missing CTBL magic".into());
    }
    let version = r.u32()?;
    if version != TABLE_VERSION {
        return Err(format!("unsupported table version {version}"));
    }
    let input_dim = usize::try_from(r.u64()?).map_err(|_| "input_dim overflows".to_string())?;
    if input_dim == 0 {
        return Err("input_dim must be positive".into());
    }
    let skipped_empty = usize::try_from(r.u64()?).map_err(|_| "skip count overflows".to_string())?;
    let inst_bytes = input_dim
        .checked_mul(8)
        .ok_or_else(|| "input_dim overflows".to_string())?;
    let n_alpha = r.count(12)?;
    let mut alphabets = Vec::with_capacity(n_alpha);
    for _ in 0..n_alpha {
        let name = r.name()?;
        let n_classes = r.count(12)?;
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let cname = r.name()?;
            let n_inst = r.count(inst_bytes)?;
            let mut instances = Vec::with_capacity(n_inst);
            for _ in 0..n_inst {
                let raw = r.take(inst_bytes)?;
                instances.push(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                );
            }
            classes.push(CharClass {
                name: cname,
                instances,
            });
        }
        alphabets.push(Alphabet { name, classes });
    }
    if !r.buf.is_empty() {
        return Err(format!("{} trailing bytes", r.buf.len()));
    }
    Ok(ClassTable {
        alphabets,
        input_dim,
        skipped_empty,
    })
}

/// Decodes a table snapshot. `origin` names the source in error messages.
pub fn decode_table(bytes: &[u8], origin: &Path) -> Result<ClassTable> {
    decode_inner(bytes).map_err(|msg| Error::parse(origin, msg))
}

pub fn save_table(table: &ClassTable, path: &Path) -> Result<()> {
    std::fs::write(path, encode_table(table)).map_err(|e| Error::io(path, e))
}

pub fn load_table(path: &Path) -> Result<ClassTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_table(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{synth_proto_tasks, SynthSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn snapshot_round_trip() {
        let spec = SynthSpec {
            n_alphabets: 2,
            classes_per_alphabet: 3,
            instances_per_class: 4,
            input_dim: 5,
            noise_sigma: 0.3,
        };
        let t = synth_proto_tasks(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let bytes = encode_table(&t);
        assert_eq!(decode_table(&bytes, Path::new("mem")).unwrap(), t);
        assert!(decode_table(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_table(&extra, Path::new("mem")).is_err());
    }

    #[test]
    fn hostile_counts_do_not_allocate() {
        let mut b = TABLE_MAGIC.to_vec();
        b.extend(TABLE_VERSION.to_le_bytes());
        b.extend(4u64.to_le_bytes());
        b.extend(0u64.to_le_bytes());
        b.extend(u64::MAX.to_le_bytes());
        let err = decode_table(&b, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
