//! CBTF: the on-disk tensor container used across the project.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size       field
//! 0       4          magic  b"CBTF"
//! 4       2          format version (u16, currently 1)
//! 6       1          dtype code (u8): 1 = f32, 2 = f64
//! 7      1           rank (u8)
//! 8      8 * rank    extents (u64 each)
//! ...    n * dtype   payload, row-major, little-endian
//! ```
//!
//! A scalar f32 tensor is therefore exactly 4+2+1+1+8+4 = 20 bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use numcore::Tensor;

pub const MAGIC: [u8; 4] = *b"CBTF";
pub const VERSION: u16 = 1;

pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CbtfError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, not a CBTF file")]
    BadMagic { path: String, found: [u8; 4] },
    #[error("{path}: unsupported format version {0}", .version)]
    BadVersion { path: String, version: u16 },
    #[error("{path}: unsupported dtype code {code}")]
    BadDtype { path: String, code: u8 },
    #[error("{path}: truncated payload, expected {expected} bytes, got {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: declared extents {extents:?} disagree with payload of {actual} elements")]
    ExtentMismatch {
        path: String,
        extents: Vec<usize>,
        actual: usize,
    },
    #[error("{path}: non-finite value in payload")]
    NonFinite { path: String },
}

pub type Result<T> = std::result::Result<T, CbtfError>;

fn io_err(path: &Path, source: std::io::Error) -> CbtfError {
    CbtfError::Io {
        path: path.display().to_string(),
        source,
    }
}

trait CbtfScalar: numcore::Scalar {
    const CODE: u8;
    const WIDTH: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl CbtfScalar for f32 {
    const CODE: u8 = DTYPE_F32;
    const WIDTH: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl CbtfScalar for f64 {
    const CODE: u8 = DTYPE_F64;
    const WIDTH: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

fn encode<T: CbtfScalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + t.len() * T::WIDTH);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::CODE);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut out);
    }
    out
}

fn write_tensor<T: CbtfScalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(t)).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes an f32 tensor.
pub fn write_f32(t: &Tensor<f32>, path: &Path) -> Result<()> {
    write_tensor(t, path)
}

/// Writes an f64 tensor.
pub fn write_f64(t: &Tensor<f64>, path: &Path) -> Result<()> {
    write_tensor(t, path)
}

/// Dtype-erased read result.
#[derive(Debug)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    /// Converts to f32, widening or narrowing as needed.
    pub fn into_f32(self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t,
            AnyTensor::F64(t) => t.narrow_f32(),
        }
    }

    pub fn into_f64(self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.widen(),
            AnyTensor::F64(t) => t,
        }
    }
}

/// Reads any CBTF file.
pub fn read(path: &Path) -> Result<AnyTensor> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    decode(&bytes, &path.display().to_string())
}

/// Reads a file and checks it holds f32 data.
pub fn read_f32(path: &Path) -> Result<Tensor<f32>> {
    match read(path)? {
        AnyTensor::F32(t) => Ok(t),
        AnyTensor::F64(_) => Err(CbtfError::BadDtype {
            path: path.display().to_string(),
            code: DTYPE_F64,
        }),
    }
}

pub fn read_f64(path: &Path) -> Result<Tensor<f64>> {
    match read(path)? {
        AnyTensor::F64(t) => Ok(t),
        AnyTensor::F32(_) => Err(CbtfError::BadDtype {
            path: path.display().to_string(),
            code: DTYPE_F32,
        }),
    }
}

fn decode(bytes: &[u8], path: &str) -> Result<AnyTensor> {
    let fail_trunc = |expected: usize| CbtfError::Truncated {
        path: path.to_string(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 8 {
        return Err(fail_trunc(8));
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if magic != MAGIC {
        return Err(CbtfError::BadMagic {
            path: path.to_string(),
            found: magic,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(CbtfError::BadVersion {
            path: path.to_string(),
            version,
        });
    }
    let dtype = bytes[6];
    let rank = bytes[7] as usize;
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err(fail_trunc(header));
    }
    let mut extents = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 8 + 8 * i;
        extents.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize);
    }
    let n: usize = extents.iter().product();
    let payload = &bytes[header..];

    match dtype {
        DTYPE_F32 => {
            let expected = header + n * 4;
            if bytes.len() < expected {
                return Err(fail_trunc(expected));
            }
            if payload.len() / 4 != n || payload.len() % 4 != 0 {
                return Err(CbtfError::ExtentMismatch {
                    path: path.to_string(),
                    extents,
                    actual: payload.len() / 4,
                });
            }
            let data: Vec<f32> = payload.chunks_exact(4).map(f32::read_le).collect();
            Tensor::from_vec(&extents, data)
                .map(AnyTensor::F32)
                .map_err(|_| CbtfError::NonFinite { path: path.to_string() })
        }
        DTYPE_F64 => {
            let expected = header + n * 8;
            if bytes.len() < expected {
                return Err(fail_trunc(expected));
            }
            if payload.len() / 8 != n || payload.len() % 8 != 0 {
                return Err(CbtfError::ExtentMismatch {
                    path: path.to_string(),
                    extents,
                    actual: payload.len() / 8,
                });
            }
            let data: Vec<f64> = payload.chunks_exact(8).map(f64::read_le).collect();
            Tensor::from_vec(&extents, data)
                .map(AnyTensor::F64)
                .map_err(|_| CbtfError::NonFinite { path: path.to_string() })
        }
        code => Err(CbtfError::BadDtype {
            path: path.to_string(),
            code,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use numcore::RngStream;

    #[test]
    fn scalar_f32_is_20_bytes() {
        let t = Tensor::<f32>::scalar(1.0);
        assert_eq!(encode(&t).len(), 20);
    }

    #[test]
    fn roundtrip_f32_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cbtf");
        let mut rng = RngStream::new(1, 0);
        let t = Tensor::<f32>::from_fn(&[5, 841], |_| rng.normal_f64() as f32);
        write_f32(&t, &path).unwrap();
        let back = read_f32(&path).unwrap();
        assert_eq!(t.shape(), back.shape());
        for (a, b) in t.data().iter().zip(back.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn roundtrip_f64_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t64.cbtf");
        let mut rng = RngStream::new(2, 0);
        let t = Tensor::<f64>::from_fn(&[7, 3], |_| rng.normal_f64());
        write_f64(&t, &path).unwrap();
        let back = read_f64(&path).unwrap();
        for (a, b) in t.data().iter().zip(back.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_extent_zero_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.cbtf");
        let t = Tensor::<f32>::zeros(&[0, 4]);
        write_f32(&t, &path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len();
        assert_eq!(size, 8 + 16); // header + two extents, no payload
        let back = read_f32(&path).unwrap();
        assert_eq!(back.shape(), &[0, 4]);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cbtf");
        let t = Tensor::<f32>::scalar(2.0);
        write_f32(&t, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read(&path) {
            Err(CbtfError::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}", other = other.err()),
        }
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.cbtf");
        let t = Tensor::<f32>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_f32(&t, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
        let err = read(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected") && msg.contains("got"), "{msg}");
    }
}
