//! `PWID` per-document descriptor files, little-endian:
//!
//! ```text
//! "PWID" | u8 version = 1 | u32 count | u32 dim
//! | count*dim f32 descriptors (row-major)
//! | count*4 f32 keypoint records (x, y, scale, orientation)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::model_io::{read_file, write_file, ByteReader, ByteWriter};

pub const MAGIC: &[u8; 4] = b"PWID";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorFile {
    pub dim: usize,
    pub descriptors: Vec<Vec<f32>>,
    /// x, y, scale, orientation per descriptor.
    pub keypoints: Vec<[f32; 4]>,
}

impl DescriptorFile {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.buf.extend_from_slice(MAGIC);
        w.u8(VERSION);
        w.u32(self.descriptors.len() as u32);
        w.u32(self.dim as u32);
        for d in &self.descriptors {
            d.iter().for_each(|&v| w.f32(v));
        }
        for k in &self.keypoints {
            k.iter().for_each(|&v| w.f32(v));
        }
        w.buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.keypoints.len() != self.descriptors.len()
            || self.descriptors.iter().any(|d| d.len() != self.dim)
        {
            return Err(Error::InvalidArgument(format!(
                "inconsistent descriptor file for {}",
                path.display()
            )));
        }
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = ByteReader::new(&bytes, path);
        r.magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported version {version}"),
            ));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut descriptors = Vec::with_capacity(count);
        for _ in 0..count {
            descriptors.push((0..dim).map(|_| r.f32()).collect::<Result<Vec<f32>>>()?);
        }
        let mut keypoints = Vec::with_capacity(count);
        for _ in 0..count {
            keypoints.push([r.f32()?, r.f32()?, r.f32()?, r.f32()?]);
        }
        r.finish()?;
        Ok(DescriptorFile {
            dim,
            descriptors,
            keypoints,
        })
    }

    pub fn descriptors_f64(&self) -> Vec<Vec<f64>> {
        self.descriptors
            .iter()
            .map(|d| d.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(count in 0usize..6, dim in 1usize..9, seed in any::<u32>()) {
            let v = |i: usize| ((seed as usize + i * 2654435761) % 1000) as f32 / 7.0 - 50.0;
            let file = DescriptorFile {
                dim,
                descriptors: (0..count).map(|c| (0..dim).map(|j| v(c * dim + j)).collect()).collect(),
                keypoints: (0..count).map(|c| [v(c), v(c + 1), v(c + 2), v(c + 3)]).collect(),
            };
            let bytes = file.to_bytes();
            prop_assert_eq!(bytes.len(), 4 + 1 + 4 + 4 + 4 * count * (dim + 4));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.pwid");
            file.save(&path).unwrap();
            prop_assert_eq!(DescriptorFile::load(&path).unwrap(), file);
        }
    }

    #[test]
    fn layout() {
        let file = DescriptorFile {
            dim: 2,
            descriptors: vec![vec![1.0, 2.0]],
            keypoints: vec![[3.0, 4.0, 5.0, 6.0]],
        };
        let b = file.to_bytes();
        assert_eq!(&b[..5], b"PWID\x01");
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(&b[9..13], &2u32.to_le_bytes());
        assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
        assert_eq!(&b[21..25], &3.0f32.to_le_bytes());
    }
}
