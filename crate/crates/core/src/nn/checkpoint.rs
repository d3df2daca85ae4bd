//! Flat binary parameter container: `FRIT`, version, count, then per tensor
//! name length, name, rank, dims and little-endian f64 values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FriError, Result};

use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FRIT";
const VERSION: u32 = 1;

/// Named tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values.
    pub fn value_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(FriError::Checkpoint("bad magic".into()));
        }
        let version = u32_le(&mut r)?;
        if version != VERSION {
            return Err(FriError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32_le(&mut r)?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = u32_le(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| FriError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = u32_le(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            if n.saturating_mul(8) > r.len() {
                return Err(FriError::Checkpoint("truncated tensor data".into()));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            set.push(name, Tensor { shape, data });
        }
        if !r.is_empty() {
            return Err(FriError::Checkpoint("trailing bytes".into()));
        }
        Ok(set)
    }
}

fn read(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| FriError::Checkpoint("unexpected end of checkpoint".into()))
}

fn u32_le(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_params(path: &Path, set: &ParamSet) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&set.to_bytes())?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    ParamSet::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::new(vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25]).unwrap());
        set.push("scalar", Tensor::scalar(0.1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&path, &set).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(back.names, set.names);
        for (a, b) in back.tensors.iter().zip(&set.tensors) {
            assert_eq!(a.shape, b.shape);
            let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::from_vec(vec![1.0, 2.0]));
        let bytes = set.to_bytes();
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamSet::from_bytes(&bad).is_err());
    }
}
