use std::path::Path;

use super::binary::{read_file, Reader};
use crate::nn::Tensor;
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"KWSF";
pub const FEATURE_VERSION: u32 = 1;

/// Serializes a feature matrix: magic, version, rows, cols (u32 LE), then
/// row-major f32 LE values.
pub fn encode_features(m: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_features(path: &Path, m: &Tensor<f32>) -> Result<()> {
    super::atomic_write(path, &encode_features(m))
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes, path);
    let magic = r.take(4, "magic").map_err(|_| Error::BadHeader {
        path: path.to_path_buf(),
        detail: "file too short for magic".into(),
    })?;
    if magic != FEATURE_MAGIC {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            detail: "not a KWSF feature file".into(),
        });
    }
    let version = r.u32("format version")?;
    if version != FEATURE_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let data = r.f32s(rows * cols, "feature values")?;
    if !r.at_end() {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            detail: format!("trailing bytes after {rows}x{cols} matrix"),
        });
    }
    Tensor::matrix(rows, cols, data)
}

pub fn read_features(path: &Path) -> Result<Tensor<f32>> {
    decode_features(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(rows in 0usize..6, cols in 1usize..5, seed in any::<u64>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff))
                .collect();
            let m = Tensor::matrix(rows, cols, data).unwrap();
            let back = decode_features(&encode_features(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            prop_assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_size_mismatch() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = encode_features(&m);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            decode_features(&bytes, Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        let mut bytes = encode_features(&m);
        bytes.push(0);
        assert!(decode_features(&bytes, Path::new("x")).is_err());
        assert!(decode_features(b"NOPE", Path::new("x")).is_err());
    }
}
