//! Binary checkpoint format.
//!
//! Layout (little endian):
//! `b"MFCK"`, version `u32`, entry count `u64`, then per entry a `u32` name
//! length, UTF-8 name, `u8` flags (bit 0: buffer, bit 1: requires grad),
//! `u32` rank, `u64` dims and the `f64` data. A trailing `u64` FNV-1a hash of
//! every preceding byte guards against truncation and bit rot.

use std::fs;
use std::path::Path;

use crate::error::{NumError, Result};
use crate::module::{Module, ParamRef};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MFCK";
pub const VERSION: u32 = 1;

const FLAG_BUFFER: u8 = 1;
const FLAG_GRAD: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: ParamRef,
    pub tensor: Tensor,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn encode(module: &dyn Module) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mut count = 0u64;
    let mut body = Vec::new();
    module.visit("", &mut |name, t, kind| {
        count += 1;
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        let mut flags = 0u8;
        if kind == ParamRef::Buffer {
            flags |= FLAG_BUFFER;
        }
        if t.requires_grad() {
            flags |= FLAG_GRAD;
        }
        body.push(flags);
        body.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            body.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    });
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    let h = fnv1a(&out);
    out.extend_from_slice(&h.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| NumError::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 8 {
        return Err(NumError::Checkpoint("file too short".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let want = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a(payload) != want {
        return Err(NumError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: payload, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NumError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NumError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| NumError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let flags = r.take(1)?[0];
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| NumError::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut tensor = Tensor::new(shape, data)?;
        tensor.set_requires_grad(flags & FLAG_GRAD != 0);
        let kind = if flags & FLAG_BUFFER != 0 {
            ParamRef::Buffer
        } else {
            ParamRef::Weight
        };
        entries.push(Entry { name, kind, tensor });
    }
    if r.pos != payload.len() {
        return Err(NumError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(entries)
}

pub fn save(module: &dyn Module, path: &Path) -> Result<()> {
    fs::write(path, encode(module))?;
    Ok(())
}

/// Loads values into an already-shaped module. Names and shapes must match.
pub fn load_into(module: &mut dyn Module, path: &Path) -> Result<()> {
    let entries = decode(&fs::read(path)?)?;
    let table: Vec<(String, Tensor)> = entries.into_iter().map(|e| (e.name, e.tensor)).collect();
    module.load_named(&table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{BatchNorm1d, Dense};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Net {
        fc: Dense,
        bn: BatchNorm1d,
    }

    impl Module for Net {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
            self.fc.visit(&crate::module::join(prefix, "fc"), f);
            self.bn.visit(&crate::module::join(prefix, "bn"), f);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
            self.fc.visit_mut(&crate::module::join(prefix, "fc"), f);
            self.bn.visit_mut(&crate::module::join(prefix, "bn"), f);
        }
    }

    fn net(seed: u64) -> Net {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bn = BatchNorm1d::new(3);
        bn.running_mean.assign(&[0.1, 0.2, 0.3]).unwrap();
        Net {
            fc: Dense::new(4, 3, &mut rng),
            bn,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let a = net(1);
        let mut b = net(2);
        assert_ne!(a.checksum(), b.checksum());
        let bytes = encode(&a);
        let entries = decode(&bytes).unwrap();
        assert_eq!(entries.len(), 6);
        assert_eq!(entries[4].kind, ParamRef::Buffer);
        let table: Vec<_> = entries.into_iter().map(|e| (e.name, e.tensor)).collect();
        b.load_named(&table).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode(&net(1));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(NumError::Checkpoint(_))));
        let bytes = encode(&net(1));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected_on_load() {
        let a = net(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut other = Net {
            fc: Dense::new(5, 3, &mut rng),
            bn: BatchNorm1d::new(3),
        };
        let table: Vec<_> = decode(&encode(&a))
            .unwrap()
            .into_iter()
            .map(|e| (e.name, e.tensor))
            .collect();
        let err = other.load_named(&table).unwrap_err();
        assert!(err.to_string().contains("[5, 3]"), "{err}");
    }

    #[test]
    fn file_roundtrip() {
        let dir = std::env::temp_dir().join(format!("numcore-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.bin");
        let a = net(3);
        save(&a, &path).unwrap();
        let mut b = net(4);
        load_into(&mut b, &path).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        std::fs::remove_dir_all(&dir).ok();
    }
}
