//! `PWMD` model files. All integers and floats are little-endian.
//!
//! ```text
//! "PWMD" | u8 kind | body
//!
//! kind 1, codebook:   u32 k | u32 d | u64 seed | f64 inertia | k*d f64 centers (row-major)
//! kind 2, PCA:        u32 d | u32 m | u8 whiten | f64 eps | d f64 mean
//!                     | m f64 eigenvalues | d*m f64 basis (row-major, d rows)
//! kind 3, descriptor: f64 power | f64 eps | PCA body (as kind 2, without magic and kind)
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Codebook, PcaModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PWMD";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Codebook = 1,
    Pca = 2,
    DescriptorTransform = 3,
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], path: &'a Path) -> Self {
        ByteReader { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, "bad magic bytes"));
        }
        Ok(())
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format(self.path, "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn header(kind: ModelKind) -> ByteWriter {
    let mut w = ByteWriter::default();
    w.buf.extend_from_slice(MAGIC);
    w.u8(kind as u8);
    w
}

fn read_header<'a>(buf: &'a [u8], path: &'a Path, kind: ModelKind) -> Result<ByteReader<'a>> {
    let mut r = ByteReader::new(buf, path);
    r.magic(MAGIC)?;
    let k = r.u8()?;
    if k != kind as u8 {
        return Err(Error::format(
            path,
            format!("expected model kind {}, found {k}", kind as u8),
        ));
    }
    Ok(r)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFitted(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })
}

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut w = header(ModelKind::Codebook);
    w.u32(cb.k() as u32);
    w.u32(cb.dim() as u32);
    w.u64(cb.seed);
    w.f64(cb.inertia);
    for c in &cb.centers {
        c.iter().for_each(|&v| w.f64(v));
    }
    w.buf
}

pub fn save_codebook(cb: &Codebook, path: &Path) -> Result<()> {
    write_file(path, &encode_codebook(cb))
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let bytes = read_file(path)?;
    let mut r = read_header(&bytes, path, ModelKind::Codebook)?;
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let seed = r.u64()?;
    let inertia = r.f64()?;
    let flat = r.f64s(k * d)?;
    r.finish()?;
    Ok(Codebook {
        centers: flat.chunks(d.max(1)).take(k).map(<[f64]>::to_vec).collect(),
        seed,
        inertia,
    })
}

pub(crate) fn write_pca_body(w: &mut ByteWriter, pca: &PcaModel) {
    let (d, m) = (pca.input_dim(), pca.output_dim());
    w.u32(d as u32);
    w.u32(m as u32);
    w.u8(pca.whiten as u8);
    w.f64(pca.eps);
    pca.mean.iter().for_each(|&v| w.f64(v));
    pca.eigenvalues.iter().for_each(|&v| w.f64(v));
    for i in 0..d {
        for j in 0..m {
            w.f64(pca.basis[(i, j)]);
        }
    }
}

pub(crate) fn read_pca_body(r: &mut ByteReader<'_>) -> Result<PcaModel> {
    let d = r.u32()? as usize;
    let m = r.u32()? as usize;
    let whiten = r.u8()? != 0;
    let eps = r.f64()?;
    let mean = r.f64s(d)?;
    let eigenvalues = r.f64s(m)?;
    let flat = r.f64s(d * m)?;
    Ok(PcaModel {
        mean,
        basis: DMatrix::from_row_slice(d, m, &flat),
        eigenvalues,
        whiten,
        eps,
    })
}

pub fn encode_pca(pca: &PcaModel) -> Vec<u8> {
    let mut w = header(ModelKind::Pca);
    write_pca_body(&mut w, pca);
    w.buf
}

pub fn save_pca(pca: &PcaModel, path: &Path) -> Result<()> {
    write_file(path, &encode_pca(pca))
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    let bytes = read_file(path)?;
    let mut r = read_header(&bytes, path, ModelKind::Pca)?;
    let pca = read_pca_body(&mut r)?;
    r.finish()?;
    Ok(pca)
}

pub(crate) fn descriptor_header() -> ByteWriter {
    header(ModelKind::DescriptorTransform)
}

pub(crate) fn read_descriptor_header<'a>(buf: &'a [u8], path: &'a Path) -> Result<ByteReader<'a>> {
    read_header(buf, path, ModelKind::DescriptorTransform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fit_pca;

    #[test]
    fn codebook_round_trip() {
        let cb = Codebook {
            centers: vec![vec![1.0, -2.5], vec![0.125, 1e-300]],
            seed: u64::MAX - 3,
            inertia: 12.75,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.pwmd");
        save_codebook(&cb, &path).unwrap();
        assert_eq!(load_codebook(&path).unwrap(), cb);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"PWMD\x01");
        assert_eq!(bytes.len(), 5 + 4 + 4 + 8 + 8 + 4 * 8);
    }

    #[test]
    fn pca_round_trip_and_kind_check() {
        let data: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * i % 7) as f64, (i % 3) as f64])
            .collect();
        let pca = fit_pca(&data, 2, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.pwmd");
        save_pca(&pca, &path).unwrap();
        assert_eq!(load_pca(&path).unwrap(), pca);
        assert!(matches!(load_codebook(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_model_is_not_fitted() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_pca(&dir.path().join("nope.pwmd")),
            Err(Error::NotFitted(_))
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.pwmd");
        let cb = Codebook {
            centers: vec![vec![1.0; 4]; 3],
            seed: 1,
            inertia: 0.0,
        };
        let mut bytes = encode_codebook(&cb);
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_codebook(&path), Err(Error::Format { .. })));
    }
}
