use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;

use super::{DataError, Result};

pub const VOLUME_MAGIC: &[u8; 16] = b"SHIFTADAPTVOL\0\0\0";
const DTYPE_F32_LE: u32 = 0;

/// One subject scan. Axes are (sagittal, coronal, axial).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSample {
    pub subject_id: String,
    pub voxels: Array3<f32>,
}

impl VolumeSample {
    pub fn new(subject_id: impl Into<String>, voxels: Array3<f32>) -> Result<Self> {
        let subject_id = subject_id.into();
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidVolume {
                path: subject_id.clone().into(),
                reason: "non-finite voxel".into(),
            });
        }
        Ok(Self { subject_id, voxels })
    }

    pub fn extents(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }
}

pub fn write_volume(path: &Path, volume: &VolumeSample) -> Result<()> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let (s, c, a) = volume.extents();
    let mut buf = Vec::with_capacity(32 + 4 * volume.voxels.len());
    buf.extend_from_slice(VOLUME_MAGIC);
    for dim in [s, c, a] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&DTYPE_F32_LE.to_le_bytes());
    for v in volume.voxels.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)
}

/// Reads a `.vol` container; the subject id is the file stem.
pub fn read_volume(path: &Path) -> Result<VolumeSample> {
    let invalid = |reason: String| DataError::InvalidVolume {
        path: path.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if bytes.len() < 32 || &bytes[..16] != VOLUME_MAGIC {
        return Err(invalid("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap());
    let dims = (word(0) as usize, word(1) as usize, word(2) as usize);
    let dtype = word(3);
    if dtype != DTYPE_F32_LE {
        return Err(invalid(format!("unsupported dtype code {dtype}")));
    }
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(invalid(format!("zero extent in {dims:?}")));
    }
    let count = dims.0 * dims.1 * dims.2;
    let payload = &bytes[32..];
    if payload.len() != 4 * count {
        return Err(invalid(format!(
            "payload is {} bytes, extents {dims:?} need {}",
            payload.len(),
            4 * count
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite voxel".into()));
    }
    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(VolumeSample {
        subject_id,
        voxels: Array3::from_shape_vec(dims, data).expect("length checked above"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s001.vol");
        let voxels =
            Array3::from_shape_fn((3, 4, 5), |(i, j, k)| (i * 100 + j * 10 + k) as f32 * 0.5);
        let v = VolumeSample::new("s001", voxels).unwrap();
        write_volume(&path, &v).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..16], VOLUME_MAGIC);
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 32 + 4 * 60);
        // Row-major: the second voxel is (0, 0, 1).
        assert_eq!(&bytes[36..40], &0.5f32.to_le_bytes());
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vol");
        let v = VolumeSample::new("x", Array3::zeros((2, 2, 2))).unwrap();
        write_volume(&path, &v).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_volume(&path),
            Err(DataError::InvalidVolume { .. })
        ));
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_volume(&path),
            Err(DataError::InvalidVolume { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_voxels() {
        let mut voxels = Array3::zeros((2, 2, 2));
        voxels[[1, 1, 1]] = f32::NAN;
        assert!(VolumeSample::new("n", voxels).is_err());
    }
}
