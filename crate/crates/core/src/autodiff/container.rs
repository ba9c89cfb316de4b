//! Flat binary parameter container.
//!
//! Layout (all integers little-endian `u64`, floats little-endian `f64`):
//!
//! ```text
//! "MPFW1"  record_count
//! repeat record_count times:
//!     name_len  name (UTF-8)  rank  extent * rank  value * product(extents)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;

pub const MAGIC: &[u8; 5] = b"MPFW1";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic header, expected MPFW1")]
    BadMagic,
    #[error("record name is not valid UTF-8")]
    BadName,
    #[error("record `{name}` has a non-finite entry")]
    NonFinite { name: String },
    #[error("duplicate record `{0}`")]
    Duplicate(String),
    #[error("missing record `{0}`")]
    Missing(String),
    #[error("record `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("implausible size field {0}")]
    Oversize(u64),
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamBundle {
    entries: Vec<(String, Tensor)>,
}

// Guards against allocating from garbage length fields.
const MAX_FIELD: u64 = 1 << 32;

impl ParamBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), ContainerError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(ContainerError::Duplicate(name));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fetches a record and checks its shape.
    pub fn take_shaped(&self, name: &str, shape: &[usize]) -> Result<Tensor, ContainerError> {
        let t = self
            .get(name)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))?;
        if t.shape() != shape {
            return Err(ContainerError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ContainerError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ContainerError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let count = read_u64(r)?;
        let mut bundle = ParamBundle::new();
        for _ in 0..count {
            let name_len = read_u64(r)?;
            let mut name = vec![0u8; name_len as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| ContainerError::BadName)?;
            let rank = read_u64(r)?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            if n as u64 > MAX_FIELD {
                return Err(ContainerError::Oversize(n as u64));
            }
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data).map_err(|_| ContainerError::NonFinite { name: name.clone() })?;
            bundle.insert(name, t)?;
        }
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ContainerError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let v = u64::from_le_bytes(b);
    if v > MAX_FIELD {
        return Err(ContainerError::Oversize(v));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut b = ParamBundle::new();
        b.insert("alpha_log", Tensor::scalar(0.5)).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..5], b"MPFW1");
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 9);
        assert_eq!(&bytes[21..30], b"alpha_log");
        // rank 0, then one f64
        assert_eq!(u64::from_le_bytes(bytes[30..38].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(bytes[38..46].try_into().unwrap()), 0.5);
        assert_eq!(bytes.len(), 46);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            ParamBundle::read_from(&mut &b"MPFW2\0\0\0\0\0\0\0\0"[..]),
            Err(ContainerError::BadMagic)
        ));
        let mut b = ParamBundle::new();
        b.insert("w", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let bytes = b.to_bytes();
        assert!(matches!(
            ParamBundle::read_from(&mut &bytes[..bytes.len() - 3]),
            Err(ContainerError::Io(_))
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut b = ParamBundle::new();
        b.insert("x", Tensor::scalar(1.0)).unwrap();
        assert!(b.insert("x", Tensor::scalar(2.0)).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            records in proptest::collection::vec(
                (proptest::collection::vec(1usize..4, 0..3), any::<u64>()), 0..5)
        ) {
            let mut b = ParamBundle::new();
            for (i, (shape, seed)) in records.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = (0..n)
                    .map(|k| f64::from_bits(seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) >> 2))
                    .map(|v| if v.is_finite() { v } else { 0.0 })
                    .collect();
                b.insert(format!("policy.l{i}"), Tensor::new(shape.clone(), data).unwrap()).unwrap();
            }
            let bytes = b.to_bytes();
            let back = ParamBundle::read_from(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            for ((n1, t1), (n2, t2)) in b.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                for (x, y) in t1.data().iter().zip(t2.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
