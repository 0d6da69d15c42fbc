//! Named-tensor container used for checkpoints and corpus records.
//!
//! Layout (little-endian): magic `MTCK`, `u32` version, `u32` meta count,
//! meta entries as two length-prefixed strings, `u32` tensor count, then per
//! tensor: name, `u8` dtype code, `u32` rank, `u64` dims, raw values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::real::{DType, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTCK";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::I64(_) => DType::I64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key).ok_or_else(|| Error::format(format!("container lacks meta key '{key}'")))
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: TensorData) {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "entry {name}: shape {shape:?} does not match {} values", data.len());
        self.entries.push(Entry { name: name.to_string(), shape: shape.to_vec(), data });
    }

    /// Stores a real tensor in its own precision.
    pub fn push_real<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            _ => TensorData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        self.push(name, t.shape(), data);
    }

    pub fn push_i64(&mut self, name: &str, shape: &[usize], data: Vec<i64>) {
        self.push(name, shape, TensorData::I64(data));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| Error::format(format!("container lacks tensor '{name}'")))
    }

    /// Loads a real tensor; the stored dtype must match `T` exactly.
    pub fn real<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.require(name)?;
        let vals: Vec<T> = match (&e.data, T::DTYPE) {
            (TensorData::F32(v), DType::F32) => v.iter().map(|&x| T::of(x as f64)).collect(),
            (TensorData::F64(v), DType::F64) => v.iter().map(|&x| T::of(x)).collect(),
            (d, want) => {
                return Err(Error::format(format!(
                    "tensor '{name}' is {}, expected {}",
                    d.dtype().name(),
                    want.name()
                )))
            }
        };
        Ok(Tensor::from_vec(&e.shape, vals))
    }

    pub fn i64s(&self, name: &str) -> Result<(&[usize], &[i64])> {
        let e = self.require(name)?;
        match &e.data {
            TensorData::I64(v) => Ok((&e.shape, v)),
            d => Err(Error::format(format!("tensor '{name}' is {}, expected i64", d.dtype().name()))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let e = self.require(name)?;
        match &e.data {
            TensorData::F64(v) => Ok((&e.shape, v)),
            d => Err(Error::format(format!("tensor '{name}' is {}, expected f64", d.dtype().name()))),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            write_str(w, &e.name)?;
            w.write_all(&[e.data.dtype().code()])?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &e.data {
                TensorData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                TensorData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                TensorData::I64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Container> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("not a tensor container (bad magic)"));
        }
        let version = read_u32(r)?;
        if version != CONTAINER_VERSION {
            return Err(Error::format(format!("unsupported container version {version}")));
        }
        let mut c = Container::new();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            c.meta.push((k, v));
        }
        for _ in 0..read_u32(r)? {
            let name = read_str(r)?;
            let mut code = [0u8; 1];
            read_exact(r, &mut code)?;
            let dtype = DType::from_code(code[0])
                .ok_or_else(|| Error::format(format!("tensor '{name}': unknown dtype code {}", code[0])))?;
            let rank = read_u32(r)? as usize;
            if rank > 16 {
                return Err(Error::format(format!("tensor '{name}': rank {rank} is implausible")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= 1 << 34)
                .ok_or_else(|| Error::format(format!("tensor '{name}': shape {shape:?} is too large")))?;
            let width = if dtype == DType::F32 { 4 } else { 8 };
            let mut bytes = vec![0u8; numel * width];
            read_exact(r, &mut bytes)?;
            let data = match dtype {
                DType::F32 => TensorData::F32(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
                DType::F64 => TensorData::F64(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
                DType::I64 => TensorData::I64(bytes.chunks_exact(8).map(|b| i64::from_le_bytes(b.try_into().unwrap())).collect()),
            };
            c.entries.push(Entry { name, shape, data });
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated container"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 28 {
        return Err(Error::format("string length is implausible"));
    }
    let mut b = vec![0u8; len];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| Error::format("string is not UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut c = Container::new();
        c.set_meta("config", "a = 1\nb = 2");
        c.push_real("w", &Tensor::<f32>::from_vec(&[2, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 1e-30]));
        c.push_real("v", &Tensor::<f64>::from_vec(&[3], vec![std::f64::consts::PI, -1e300, 0.1]));
        c.push_i64("i", &[0], vec![]);
        c.push_i64("s", &[], vec![-7]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Container::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let w: Tensor<f32> = back.real("w").unwrap();
        assert_eq!(w.data()[1].to_bits(), (-0.0f32).to_bits());
        assert!(back.real::<f64>("w").is_err());
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let mut c = Container::new();
        c.push_real("w", &Tensor::<f64>::zeros(&[4]));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        for cut in [3, 10, buf.len() - 1] {
            assert!(matches!(Container::read_from(&mut &buf[..cut]), Err(Error::Format(_))));
        }
        assert!(Container::read_from(&mut &b"NOPE\x01\0\0\0"[..]).is_err());
    }
}
