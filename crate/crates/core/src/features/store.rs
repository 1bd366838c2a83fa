//! Binary feature file: magic `GAFM`, u32 T, u32 D, then T·D little-endian
//! f64 values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::FeatureError;
use crate::numerics::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"GAFM";

pub fn write_feature_file(path: impl AsRef<Path>, frames: &Tensor) -> Result<(), FeatureError> {
    let [t, d] = frames.shape() else {
        return Err(FeatureError::File(format!("expected a T×D matrix, got {:?}", frames.shape())));
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(u32::try_from(*t).map_err(|_| FeatureError::File("T overflows u32".into()))?)?;
    w.write_u32::<LittleEndian>(u32::try_from(*d).map_err(|_| FeatureError::File("D overflows u32".into()))?)?;
    for &v in frames.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Tensor, FeatureError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(FeatureError::File(format!("{}: bad magic {magic:?}", path.display())));
    }
    let t = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0; t * d];
    r.read_f64_into::<LittleEndian>(&mut data)
        .map_err(|e| FeatureError::File(format!("{}: truncated payload ({e})", path.display())))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(FeatureError::File(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    Ok(Tensor::new(vec![t, d], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.gafm");
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap();
        write_feature_file(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 6 * 8);
        assert_eq!(&bytes[..4], b"GAFM");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1.0f64.to_le_bytes());
        assert_eq!(read_feature_file(&p).unwrap(), t);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.gafm");
        let t = Tensor::ones(&[4, 2]);
        write_feature_file(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_feature_file(&p), Err(FeatureError::File(_))));
    }
}
