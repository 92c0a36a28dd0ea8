//! Parameter checkpoint file format, version 1.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes   "HPOCKPT\0"
//! version    u32       1
//! meta_len   u64       length of the metadata blob
//! meta       bytes     UTF-8 text (JSON by convention, may be empty)
//! n_records  u64
//! record*    name_len u32, name bytes (UTF-8),
//!            ndim u32, dims u64 * ndim,
//!            values f64 * prod(dims)
//! ```
//!
//! Values are written with `f64::to_le_bytes`, so a save/load round trip is
//! bit-exact, including signed zeros.

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HPOCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.records.push(Record {
            name: name.into(),
            tensor,
        });
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, Tensor::new(vec![1], vec![value]).unwrap());
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.tensor)
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.get(name)?.item()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u64).to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            let name = r.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let shape = r.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in r.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = read_u64(&mut r)? as usize;
        let meta = String::from_utf8(read_bytes(&mut r, meta_len)?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let n = read_u64(&mut r)?;
        let mut records = Vec::new();
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, name_len)?)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let mut values = Vec::with_capacity(count);
            let mut buf = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            records.push(Record {
                name,
                tensor: Tensor::new(shape, values)?,
            });
        }
        Ok(Self { meta, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40),
            meta in "[a-z{}:\" ]{0,20}",
        ) {
            let mut ck = Checkpoint { meta, records: vec![] };
            ck.push("a.weight", Tensor::new(vec![values.len()], values.clone()).unwrap());
            ck.push_scalar("alpha", -0.0);
            let mut bytes = Vec::new();
            ck.write_to(&mut bytes).unwrap();
            let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
            prop_assert_eq!(back.records.len(), 2);
            let a: Vec<u64> = back.get("a.weight").unwrap().data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.scalar("alpha").unwrap().to_bits(), (-0.0f64).to_bits());
            prop_assert_eq!(back.meta, ck.meta);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::read_from(&b"NOTACKPT0000"[..]).is_err());
        let mut bytes = Vec::new();
        Checkpoint::default().write_to(&mut bytes).unwrap();
        bytes[8] = 9;
        assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn missing_record_is_reported() {
        assert!(Checkpoint::default().get("nope").is_err());
    }
}
