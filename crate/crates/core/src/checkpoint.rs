//! Binary checkpoint format.
//!
//! ```text
//! magic      "CDNET1\0"                        7 bytes
//! version    u16 LE                            currently 1
//! config     u32 LE length + UTF-8 key=value text
//! records    until end of file, each:
//!              name   u32 LE length + UTF-8
//!              rank   u8
//!              dims   rank × u32 LE
//!              values product(dims) × f64 LE
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::rng::Rng;

pub const MAGIC: &[u8; 7] = b"CDNET1\0";
pub const VERSION: u16 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &model.config().to_text());
    for (name, t) in model.parameters() {
        put_str(&mut out, &name);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes };
    if r.buf.len() < MAGIC.len() || &r.buf[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    r.take(MAGIC.len(), "magic")?;
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let config = ModelConfig::from_text(&r.string("config block")?)?;
    let mut model = Model::new(config, &Rng::new(0))?;
    let expected: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let mut seen = HashSet::new();

    while !r.buf.is_empty() {
        let name = r.string("parameter name")?;
        let rank = r.take(1, &format!("rank of `{name}`"))?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&format!("dims of `{name}`"))? as usize);
        }
        let target = model
            .parameter_mut(&name)
            .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
        if target.shape() != dims.as_slice() {
            return Err(Error::ShapeDisagreement {
                name,
                expected: target.shape().to_vec(),
                found: dims,
            });
        }
        let raw = r.take(target.len() * 8, &format!("values of `{name}`"))?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("parameter `{name}` appears twice")));
        }
    }
    if let Some(missing) = expected.iter().find(|n| !seen.contains(*n)) {
        return Err(Error::Truncated(format!("parameter `{missing}` (missing)")));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn small() -> Model {
        let cfg = ModelConfig {
            seq_len: 2,
            frame_h: 8,
            frame_w: 8,
            frame_feature_dim: 4,
            lstm_units: 3,
            dense_head: vec![4],
            ..ModelConfig::default()
        };
        Model::new(cfg, &Rng::new(17)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back.config(), m.config());
        for ((na, a), (nb, b)) in m.parameters().into_iter().zip(back.parameters()) {
            assert_eq!(na, nb);
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let mut rng = Rng::new(1);
        let x = Tensor::new(&[2, 2, 8, 8, 3], (0..768).map(|_| rng.uniform()).collect()).unwrap();
        assert_eq!(m.infer(&x).unwrap(), back.infer(&x).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small());
        assert_eq!(&bytes[..7], b"CDNET1\0");
        assert_eq!(u16::from_le_bytes([bytes[7], bytes[8]]), 1);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&small());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&small());
        bytes[7] = 9;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn truncated() {
        let bytes = encode(&small());
        for cut in [8, 20, bytes.len() - 3, bytes.len() - 400] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::Truncated(_))),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn shape_disagreement() {
        let m = small();
        let mut bytes = encode(&m);
        // Rewrite the first dim of the first record (conv kernel 3×3×3×16).
        let cfg_len = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let rec = 13 + cfg_len;
        let name_len = u32::from_le_bytes(bytes[rec..rec + 4].try_into().unwrap()) as usize;
        let dim0 = rec + 4 + name_len + 1;
        bytes[dim0..dim0 + 4].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::ShapeDisagreement { .. })
        ));
    }
}
