//! Binary checkpoint serialization.
//!
//! Layout (all integers little endian):
//! ```text
//! magic   4 bytes  "RDLB"
//! version u32      1
//! count   u32      number of records
//! record: name_len u16, name bytes (utf-8), dtype u8 (1 = f32, 2 = f64),
//!         rank u8, dims rank x u32, data numel x dtype-width bytes
//! ```
//! Both parameters and batch-norm running statistics are stored as records.
//! Writes go through a same-directory temp file and rename, so a checkpoint
//! on disk is never half written.

use crate::tensor::{Dtype, Scalar, Tensor};
use crate::util::atomic_write;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"RDLB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic {got:02x?}")]
    BadMagic { got: [u8; 4] },
    #[error("checkpoint version {got}, this build reads {VERSION}")]
    BadVersion { got: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("record {name} holds {got:?}, requested {want:?}")]
    DtypeMismatch { name: String, want: Dtype, got: Dtype },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Record {
    pub fn from_tensor<E: Scalar>(name: impl Into<String>, t: &Tensor<E>) -> Record {
        let data = match E::DTYPE {
            Dtype::F32 => TensorData::F32(t.data().iter().map(|v| v.to_f64() as f32).collect()),
            Dtype::F64 => TensorData::F64(t.data().iter().map(|v| v.to_f64()).collect()),
        };
        Record { name: name.into(), shape: t.shape().to_vec(), data }
    }

    /// Reconstructs the tensor; the stored dtype must match `E` exactly so a
    /// round trip is bitwise.
    pub fn to_tensor<E: Scalar>(&self) -> Result<Tensor<E>, IoError> {
        if self.data.dtype() != E::DTYPE {
            return Err(IoError::DtypeMismatch {
                name: self.name.clone(),
                want: E::DTYPE,
                got: self.data.dtype(),
            });
        }
        let data: Vec<E> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| E::from_f64(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| E::from_f64(x)).collect(),
        };
        Ok(Tensor::new(&self.shape, data))
    }
}

pub fn save_checkpoint(path: &Path, records: &[Record]) -> Result<(), IoError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        assert!(name.len() <= u16::MAX as usize, "record name too long: {}", r.name);
        assert!(r.shape.len() <= u8::MAX as usize);
        assert_eq!(r.shape.iter().product::<usize>(), r.data.len(), "{}", r.name);
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(r.data.dtype() as u8);
        buf.push(r.shape.len() as u8);
        for &d in &r.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &r.data {
            TensorData::F32(v) => {
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    atomic_write(path, &buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.buf.len() {
            return Err(IoError::Corrupt(format!(
                "truncated reading {what} at byte {} (need {n}, have {})",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8, IoError> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Record>, IoError> {
    let buf = std::fs::read(path)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(IoError::BadMagic { got: magic });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(IoError::BadVersion { got: version });
    }
    let count = c.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|e| IoError::Corrupt(format!("record {i} name is not utf-8: {e}")))?
            .to_string();
        let dtype = c.u8("dtype")?;
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = match dtype {
            1 => {
                let raw = c.take(numel * 4, &format!("{name} data"))?;
                TensorData::F32(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
            }
            2 => {
                let raw = c.take(numel * 8, &format!("{name} data"))?;
                TensorData::F64(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
            }
            other => return Err(IoError::Corrupt(format!("record {name}: unknown dtype {other}"))),
        };
        records.push(Record { name, shape, data });
    }
    if c.pos != buf.len() {
        return Err(IoError::Corrupt(format!(
            "{} trailing bytes after the last record",
            buf.len() - c.pos
        )));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;

    fn sample_records() -> Vec<Record> {
        let mut rng = rng_for(40, "io-test", &[]);
        vec![
            Record::from_tensor("s0.b1.conv0.weight", &Tensor::<f32>::randn(&[8, 4, 3, 3], 0.5, &mut rng)),
            Record::from_tensor("s0.b1.bn0.gamma", &Tensor::<f32>::full(&[8], 1.0)),
            Record::from_tensor(
                "head.bn0.running_var",
                &Tensor::<f32>::new(&[3], vec![1.0, f32::INFINITY, f32::NAN]),
            ),
            Record::from_tensor("fc.bias", &Tensor::<f64>::randn(&[10], 0.1, &mut rng)),
            Record::from_tensor("empty", &Tensor::<f32>::zeros(&[0])),
        ]
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let records = sample_records();
        save_checkpoint(&path, &records).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            match (&a.data, &b.data) {
                (TensorData::F32(x), TensorData::F32(y)) => {
                    assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()), "{}", a.name);
                }
                (TensorData::F64(x), TensorData::F64(y)) => {
                    assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()), "{}", a.name);
                }
                _ => panic!("dtype changed through round trip"),
            }
        }
    }

    #[test]
    fn tensor_conversion_checks_dtype() {
        let r = Record::from_tensor("w", &Tensor::<f32>::full(&[2], 1.5));
        assert!(r.to_tensor::<f32>().is_ok());
        assert!(matches!(r.to_tensor::<f64>(), Err(IoError::DtypeMismatch { .. })));
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_records()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        let mut evil = bytes.clone();
        evil[0] = b'X';
        std::fs::write(&path, &evil).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(IoError::BadMagic { .. })));

        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(IoError::BadVersion { got: 9 })));
    }

    #[test]
    fn any_truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_records()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Every proper prefix must fail cleanly, never panic or succeed.
        for len in (0..bytes.len()).step_by(7).chain([bytes.len() - 1]) {
            std::fs::write(&path, &bytes[..len]).unwrap();
            match load_checkpoint(&path) {
                Err(IoError::Corrupt(_)) | Err(IoError::BadMagic { .. }) => {}
                other => panic!("prefix of {len} bytes: expected corrupt, got {other:?}"),
            }
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_records()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(IoError::Corrupt(_))));
    }

    #[test]
    fn unknown_dtype_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &[Record::from_tensor("w", &Tensor::<f32>::full(&[1], 2.0))]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // magic(4) + version(4) + count(4) + name_len(2) + "w"(1) -> dtype
        bytes[15] = 7;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(IoError::Corrupt(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/nowhere.ckpt")),
            Err(IoError::Io(_))
        ));
    }
}
