//! GPMT: a minimal binary container for dense tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "GPMT" (0x47 0x50 0x4D 0x54)
//! 4       2           version (u16) = 1
//! 6       1           dtype (u8): 1 = f32, 2 = f16
//! 7       1           ndim (u8), 1..=5
//! 8       8 * ndim    dims (u64 each, all >= 1)
//! ...     n * size    row-major element data
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use half::f16;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"GPMT";
pub const VERSION: u16 = 1;
pub const MAX_NDIM: usize = 5;

const FIXED_HEADER: usize = 8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported GPMT version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("{extra} trailing bytes after tensor data")]
    TrailingData { extra: u64 },
    #[error("invalid shape {0:?}: need 1..=5 dims, each >= 1")]
    InvalidShape(Vec<u64>),
    #[error("data holds {actual} elements but shape {shape:?} needs {expected}")]
    DataLength {
        shape: Vec<u64>,
        expected: u64,
        actual: u64,
    },
}

impl TensorError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TensorError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F16 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F16),
            other => Err(TensorError::BadDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F16(_) => DType::F16,
        }
    }
}

/// A dense row-major tensor as stored on disk.
///
/// Equality is bitwise, so NaN payloads and signed zeros round-trip.
#[derive(Debug, Clone)]
pub struct TensorBlob {
    shape: Vec<usize>,
    data: TensorData,
}

impl PartialEq for TensorBlob {
    fn eq(&self, other: &Self) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => a
                .iter()
                .zip(b.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            (TensorData::F16(a), TensorData::F16(b)) => a
                .iter()
                .zip(b.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.len() > MAX_NDIM || shape.contains(&0) {
        return Err(TensorError::InvalidShape(
            shape.iter().map(|&d| d as u64).collect(),
        ));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::InvalidShape(shape.iter().map(|&d| d as u64).collect()))
}

impl TensorBlob {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let expected = check_shape(&shape)?;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape: shape.iter().map(|&d| d as u64).collect(),
                expected: expected as u64,
                actual: data.len() as u64,
            });
        }
        Ok(TensorBlob { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_f16(shape: Vec<usize>, data: Vec<f16>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F16(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element values promoted to f32.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F16(v) => v.iter().map(|x| x.to_f32()).collect(),
        }
    }

    pub fn into_f32(self) -> Vec<f32> {
        match self.data {
            TensorData::F32(v) => v,
            TensorData::F16(v) => v.iter().map(|x| x.to_f32()).collect(),
        }
    }

    pub fn header_len(&self) -> usize {
        FIXED_HEADER + 8 * self.shape.len()
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.len() * self.dtype().size()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::F16(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let header = BlobHeader::parse(bytes)?;
        header.check_len(bytes.len() as u64)?;
        let body = &bytes[header.header_len..];
        let data = match header.dtype {
            DType::F32 => TensorData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F16 => TensorData::F16(
                body.chunks_exact(2)
                    .map(|c| f16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
        };
        TensorBlob::new(header.shape, data)
    }
}

/// Parsed fixed header of a GPMT file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub header_len: usize,
}

impl BlobHeader {
    fn parse(bytes: &[u8]) -> Result<Self, TensorError> {
        let truncated = |expected: usize| TensorError::TruncatedFile {
            expected: expected as u64,
            actual: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated(FIXED_HEADER));
        }
        let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if magic != MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        if bytes.len() < FIXED_HEADER {
            return Err(truncated(FIXED_HEADER));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(bytes[6])?;
        let ndim = bytes[7] as usize;
        let header_len = FIXED_HEADER + 8 * ndim;
        if bytes.len() < header_len {
            return Err(truncated(header_len));
        }
        let dims: Vec<u64> = bytes[FIXED_HEADER..header_len]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let shape = dims
            .iter()
            .map(|&d| usize::try_from(d).map_err(|_| TensorError::InvalidShape(dims.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        check_shape(&shape).map_err(|_| TensorError::InvalidShape(dims.clone()))?;
        Ok(BlobHeader {
            dtype,
            shape,
            header_len,
        })
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn expected_len(&self) -> u64 {
        self.header_len as u64 + (self.element_count() * self.dtype.size()) as u64
    }

    fn check_len(&self, actual: u64) -> Result<(), TensorError> {
        let expected = self.expected_len();
        if actual < expected {
            Err(TensorError::TruncatedFile { expected, actual })
        } else if actual > expected {
            Err(TensorError::TrailingData {
                extra: actual - expected,
            })
        } else {
            Ok(())
        }
    }
}

pub fn write_blob(path: impl AsRef<Path>, blob: &TensorBlob) -> Result<(), TensorError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| TensorError::io(path, e))?;
    file.write_all(&blob.to_bytes())
        .map_err(|e| TensorError::io(path, e))
}

pub fn read_blob(path: impl AsRef<Path>) -> Result<TensorBlob, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TensorError::io(path, e))?;
    TensorBlob::from_bytes(&bytes)
}

/// Reads only the header and checks the file length against it.
pub fn read_blob_header(path: impl AsRef<Path>) -> Result<BlobHeader, TensorError> {
    use std::io::Read;

    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| TensorError::io(path, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| TensorError::io(path, e))?
        .len();
    let mut head = vec![0u8; FIXED_HEADER + 8 * MAX_NDIM];
    let mut filled = 0;
    while filled < head.len() {
        let n = file
            .read(&mut head[filled..])
            .map_err(|e| TensorError::io(path, e))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    head.truncate(filled);
    let header = BlobHeader::parse(&head)?;
    header.check_len(file_len)?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f32_2x3_layout() {
        let blob = TensorBlob::from_f32(vec![2, 3], (0..6).map(|x| x as f32).collect()).unwrap();
        let bytes = blob.to_bytes();
        assert_eq!(bytes.len(), 8 + 2 * 8 + 24);
        assert_eq!(&bytes[..4], &[0x47, 0x50, 0x4D, 0x54]);
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 1);
        assert_eq!(bytes[7], 2);
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &3u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &0f32.to_le_bytes());
        assert_eq!(&bytes[44..48], &5f32.to_le_bytes());
        assert_eq!(TensorBlob::from_bytes(&bytes).unwrap(), blob);
    }

    #[test]
    fn f16_zero_encodes_as_two_zero_bytes() {
        let blob = TensorBlob::from_f16(vec![1], vec![f16::from_f32(0.0)]).unwrap();
        let bytes = blob.to_bytes();
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 0]);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = TensorBlob::from_f32(vec![1], vec![1.0]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            TensorBlob::from_bytes(&bytes),
            Err(TensorError::BadMagic(_))
        ));
    }

    #[test]
    fn rejects_unknown_version_and_dtype() {
        let good = TensorBlob::from_f32(vec![1], vec![1.0]).unwrap().to_bytes();
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(
            TensorBlob::from_bytes(&v2),
            Err(TensorError::UnsupportedVersion(2))
        ));
        let mut bad_dtype = good;
        bad_dtype[6] = 7;
        assert!(matches!(
            TensorBlob::from_bytes(&bad_dtype),
            Err(TensorError::BadDtype(7))
        ));
    }

    #[test]
    fn rejects_invalid_shapes() {
        assert!(TensorBlob::from_f32(vec![], vec![]).is_err());
        assert!(TensorBlob::from_f32(vec![0, 2], vec![]).is_err());
        assert!(TensorBlob::from_f32(vec![1; 6], vec![0.0]).is_err());
        assert!(matches!(
            TensorBlob::from_f32(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::DataLength { .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = TensorBlob::from_f32(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes.push(0);
        assert!(matches!(
            TensorBlob::from_bytes(&bytes),
            Err(TensorError::TrailingData { extra: 1 })
        ));
    }

    fn arb_blob() -> impl Strategy<Value = TensorBlob> {
        (prop::collection::vec(1usize..5, 1..=5), any::<bool>(), any::<u64>()).prop_map(
            |(shape, half, seed)| {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let n: usize = shape.iter().product();
                if half {
                    let data = (0..n).map(|_| f16::from_bits(rng.random())).collect();
                    TensorBlob::from_f16(shape, data).unwrap()
                } else {
                    let data = (0..n).map(|_| f32::from_bits(rng.random())).collect();
                    TensorBlob::from_f32(shape, data).unwrap()
                }
            },
        )
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(blob in arb_blob()) {
            let bytes = blob.to_bytes();
            prop_assert_eq!(bytes.len(), blob.encoded_len());
            let back = TensorBlob::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back, blob);
        }

        #[test]
        fn any_truncation_is_detected(blob in arb_blob(), cut in any::<prop::sample::Index>()) {
            let bytes = blob.to_bytes();
            let at = cut.index(bytes.len());
            let err = TensorBlob::from_bytes(&bytes[..at]).unwrap_err();
            prop_assert!(
                matches!(err, TensorError::TruncatedFile { .. }),
                "cut at {} gave {:?}", at, err
            );
        }
    }
}
