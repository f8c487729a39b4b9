//! Dense row-major float matrices and the `RPGM` on-disk format.
//!
//! `RPGM` layout, all integers little-endian:
//! magic `"RPGM"`, version `u32` (= 1), rows `u32`, cols `u32`,
//! then `rows * cols` row-major `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const RPGM_MAGIC: &[u8; 4] = b"RPGM";
const RPGM_VERSION: u32 = 1;

/// Row-major `f32` matrix; rows are feature vectors or relevance vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has length {}, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Errors with the offending row ids if any entry is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        let bad: Vec<usize> = (0..self.rows)
            .filter(|&i| self.row(i).iter().any(|v| !v.is_finite()))
            .take(8)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "{what}: non-finite entries in rows {bad:?}"
            )))
        }
    }

    pub fn save_rpgm(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(RPGM_MAGIC).map_err(io)?;
        w.write_all(&RPGM_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.rows as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.cols as u32).to_le_bytes()).map_err(io)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Loads and validates an `RPGM` file; every entry must be finite.
    pub fn load_rpgm(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt = |reason: String| Error::FileFormat {
            kind: "RPGM",
            path: path.to_path_buf(),
            reason,
        };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| fmt("truncated header".into()))?;
        if &magic != RPGM_MAGIC {
            return Err(fmt(format!("bad magic bytes {magic:?}")));
        }
        let version = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))?;
        if version != RPGM_VERSION {
            return Err(fmt(format!(
                "unsupported version {version}, expected {RPGM_VERSION}"
            )));
        }
        let rows = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))? as usize;
        let cols = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))? as usize;

        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fmt(format!("dimensions {rows}x{cols} overflow")))?;
        if bytes.len() != expected {
            return Err(fmt(format!(
                "expected {expected} data bytes for {rows}x{cols}, found {}",
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let m = Matrix { rows, cols, data };
        m.check_finite(&path.display().to_string())?;
        Ok(m)
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn row_access() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0]);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!((m.rows(), m.cols()), (2, 2));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rpgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rpgm");
        let m = Matrix::from_rows(&[vec![1.5, -2.0, 0.0], vec![3.25, 4.0, -0.5]]).unwrap();
        m.save_rpgm(&path).unwrap();
        let loaded = Matrix::load_rpgm(&path).unwrap();
        assert_eq!(m, loaded);
        // saving the loaded copy reproduces the file byte for byte
        let path2 = dir.path().join("m2.rpgm");
        loaded.save_rpgm(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rpgm_rejects_bad_magic_version_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rpgm");
        let m = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        m.save_rpgm(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            Matrix::load_rpgm(&path),
            Err(Error::FileFormat { .. })
        ));

        let mut future = good.clone();
        future[4] = 9;
        std::fs::write(&path, &future).unwrap();
        let err = Matrix::load_rpgm(&path).unwrap_err();
        assert!(err.to_string().contains("version"));

        std::fs::write(&path, &good[..good.len() - 2]).unwrap();
        assert!(matches!(
            Matrix::load_rpgm(&path),
            Err(Error::FileFormat { .. })
        ));
    }

    #[test]
    fn rpgm_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rpgm");
        let m = Matrix::from_vec(1, 2, vec![1.0, f32::NAN]).unwrap();
        m.save_rpgm(&path).unwrap();
        assert!(Matrix::load_rpgm(&path).is_err());
    }

    proptest! {
        #[test]
        fn rpgm_round_trip_random(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((state >> 33) as f32 / (1u64 << 31) as f32) - 1.0
            };
            let data: Vec<f32> = (0..rows * cols).map(|_| next()).collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.rpgm");
            m.save_rpgm(&path).unwrap();
            prop_assert_eq!(Matrix::load_rpgm(&path).unwrap(), m);
        }
    }
}
