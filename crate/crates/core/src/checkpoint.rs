//! Binary parameter files.
//!
//! Layout: the magic `MFL1`, then one record per parameter in store order:
//! `[name_len u32 LE][name UTF-8][rank u32 LE][dims u32 LE × rank][values f32 LE]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MFL1";

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut store = ParamStore::new();
    while r.pos < bytes.len() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if !(1..=3).contains(&rank) {
            return Err(Error::Format(format!("parameter `{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("oversized tensor".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("parameter `{name}`: {e}")))?;
        store.add(name, t).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore<f32>> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads `path` into `store`, which must hold the same names and shapes.
pub fn restore<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    store.load_from(&load(path)?.cast())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap()).unwrap();
        s.add("b", Tensor::vector(vec![-0.5]).unwrap()).unwrap();
        s
    }

    #[test]
    fn byte_layout() {
        let bytes = encode(&store());
        assert_eq!(&bytes[..4], b"MFL1");
        assert_eq!(&bytes[4..8], &8u32.to_le_bytes());
        assert_eq!(&bytes[8..16], b"a.weight");
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 4 + (4 + 8 + 4 + 8 + 24) + (4 + 1 + 4 + 4 + 4));
    }

    #[test]
    fn round_trip() {
        assert_eq!(decode(&encode(&store())).unwrap(), store());
    }

    #[test]
    fn corrupt_input() {
        let bytes = encode(&store());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"MFL2").is_err());
        let mut other = ParamStore::<f32>::new();
        other.add("a.weight", Tensor::zeros(&[3, 2]).unwrap()).unwrap();
        other.add("b", Tensor::zeros(&[1]).unwrap()).unwrap();
        assert!(other.load_from(&decode(&bytes).unwrap()).is_err());
    }
}
