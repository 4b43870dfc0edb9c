//! FFPT binary arrays.
//!
//! Layout, all little-endian: magic `FFPT`, version `u32 = 1`, dtype `u8`
//! (0 = f32, 1 = i32, 2 = u8, 3 = f64), rank `u8`, `rank` extents as `u64`,
//! then the row-major payload.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    I32 = 1,
    U8 = 2,
    F64 = 3,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => DType::F32,
            1 => DType::I32,
            2 => DType::U8,
            3 => DType::F64,
            other => return Err(Error::Parse(format!("unknown FFPT dtype code {other}"))),
        })
    }

    fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::I32(_) => DType::I32,
            Payload::U8(_) => DType::U8,
            Payload::F64(_) => DType::F64,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I32(v) => v.len(),
            Payload::U8(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Array {
    pub fn new(shape: Vec<usize>, payload: Payload) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.len() > u8::MAX as usize || n != payload.len() {
            return Err(Error::Validation(format!(
                "FFPT shape {shape:?} does not match payload of {} values",
                payload.len()
            )));
        }
        Ok(Array { shape, payload })
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Array { shape: t.shape().to_vec(), payload: Payload::F64(t.data().to_vec()) }
    }

    pub fn from_tensor_f32(t: &Tensor) -> Self {
        Array {
            shape: t.shape().to_vec(),
            payload: Payload::F32(t.data().iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_labels(shape: &[usize], labels: &[i32]) -> Result<Self> {
        Array::new(shape.to_vec(), Payload::I32(labels.to_vec()))
    }

    /// Float arrays become tensors; integer arrays are rejected.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
            other => {
                return Err(Error::Parse(format!(
                    "expected a float FFPT array, found dtype {:?}",
                    other.dtype()
                )))
            }
        };
        Tensor::new(&self.shape, data)
    }

    pub fn to_labels(&self) -> Result<Vec<i32>> {
        match &self.payload {
            Payload::I32(v) => Ok(v.clone()),
            Payload::U8(v) => Ok(v.iter().map(|&x| x as i32).collect()),
            other => Err(Error::Parse(format!(
                "expected an integer FFPT array, found dtype {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let dtype = self.payload.dtype();
        let mut out = Vec::with_capacity(10 + 8 * self.shape.len() + dtype.width() * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype as u8);
        out.push(self.shape.len() as u8);
        for &e in &self.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Parse(format!("FFPT header truncated: {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Parse(format!("bad FFPT magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported FFPT version {version}")));
        }
        let dtype = DType::from_code(bytes[8])?;
        let rank = bytes[9] as usize;
        let header = 10 + 8 * rank;
        if bytes.len() < header {
            return Err(Error::Parse(format!(
                "FFPT extents truncated: need {header} header bytes, have {}",
                bytes.len()
            )));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|i| u64::from_le_bytes(bytes[10 + 8 * i..18 + 8 * i].try_into().unwrap()) as usize)
            .collect();
        let count: usize = shape.iter().product();
        let expected = count * dtype.width();
        let body = &bytes[header..];
        if body.len() != expected {
            return Err(Error::Parse(format!(
                "FFPT payload size mismatch: expected {expected} bytes, found {}",
                body.len()
            )));
        }
        let payload = match dtype {
            DType::F32 => Payload::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::I32 => Payload::I32(body.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U8 => Payload::U8(body.to_vec()),
            DType::F64 => Payload::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        Ok(Array { shape, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Array::decode(&bytes).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
