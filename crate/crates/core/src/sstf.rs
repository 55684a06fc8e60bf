//! SSTF: a small binary container of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! file   := "SSTF" version:u16 record*
//! record := name_len:u32 name:utf8[name_len]
//!           dtype:u8 rank:u8 shape:u64[rank] data:elem[product(shape)]
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64. Records run until end of file; names
//! are unique within a file.

use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SSTF";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    /// Converts to the requested element type (exact when the types agree).
    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sstf {
    records: Vec<(String, AnyTensor)>,
}

impl Sstf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            bail!(Data, "duplicate SSTF record name {:?}", name);
        }
        self.records.push((name, AnyTensor::from_tensor(tensor)));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .map(AnyTensor::to)
            .ok_or_else(|| Error::Data(format!("SSTF record {name:?} missing")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|(n, _)| n.as_str())
    }

    pub fn records(&self) -> &[(String, AnyTensor)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rename(&mut self, from: &str, to: &str) -> bool {
        match self.records.iter_mut().find(|(n, _)| n == from) {
            Some(r) => {
                r.0 = to.to_string();
                true
            }
            None => false,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, t) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().code());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t {
                AnyTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                AnyTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            bail!(Data, "not an SSTF container (bad magic)");
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            bail!(Data, "unsupported SSTF version {}", version);
        }
        let mut file = Sstf::new();
        while r.pos < bytes.len() {
            let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Data("SSTF record name is not UTF-8".into()))?
                .to_string();
            let code = r.take(1)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| Error::Data(format!("unknown SSTF dtype code {code}")))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;
            let tensor = match dtype {
                DType::F32 => AnyTensor::F32(Tensor::new(shape, decode(raw))?),
                DType::F64 => AnyTensor::F64(Tensor::new(shape, decode(raw))?),
            };
            if file.get(&name).is_some() {
                bail!(Data, "duplicate SSTF record name {:?}", name);
            }
            file.records.push((name, tensor));
        }
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn decode<T: Scalar>(raw: &[u8]) -> Vec<T> {
    raw.chunks_exact(T::DTYPE.size()).map(T::read_le).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!(Data, "truncated SSTF container at byte {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let mut f = Sstf::new();
        f.push("w", &Tensor::<f32>::new([2], vec![1.0, -2.0]).unwrap()).unwrap();
        let b = f.to_bytes();
        assert_eq!(&b[..4], b"SSTF");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..10], &[1, 0, 0, 0]);
        assert_eq!(b[10], b'w');
        assert_eq!(b[11], 0); // f32
        assert_eq!(b[12], 1); // rank
        assert_eq!(&b[13..21], &2u64.to_le_bytes());
        assert_eq!(&b[21..25], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 29);
    }

    #[test]
    fn mixed_dtypes_round_trip() {
        let mut f = Sstf::new();
        f.push("a/kernel", &Tensor::<f32>::from_fn([2, 3], |i| i as f32 / 3.0))
            .unwrap();
        f.push("b/moving_var", &Tensor::<f64>::from_fn([4], |i| (i as f64).sqrt()))
            .unwrap();
        let g = Sstf::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.get("b/moving_var").unwrap().dtype(), DType::F64);
    }

    #[test]
    fn rejects_corruption() {
        let mut f = Sstf::new();
        f.push("x", &Tensor::<f64>::zeros([3])).unwrap();
        let b = f.to_bytes();
        assert!(Sstf::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(Sstf::from_bytes(b"NOPE\x01\x00").is_err());
        assert!(f.push("x", &Tensor::<f64>::zeros([1])).is_err());
    }
}
