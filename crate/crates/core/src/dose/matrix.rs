use std::io::{Read, Write};

use crate::error::{check_len, FmoError, Result};

/// Sparse voxel-by-bixel dose-influence matrix in compressed row storage.
///
/// Rows are voxels, columns are bixels; values are Gy per unit fluence.
/// Columns within a row are strictly increasing and every value is finite
/// and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseInfluenceMatrix {
    n_voxels: usize,
    n_bixels: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl DoseInfluenceMatrix {
    /// Assembles a matrix from unordered `(row, col, value)` entries.
    pub fn from_triplets(
        n_voxels: usize,
        n_bixels: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if n_bixels > u32::MAX as usize {
            return Err(FmoError::MatrixFormat(format!(
                "too many bixels: {n_bixels}"
            )));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_voxels + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &entries {
            if r >= n_voxels || c >= n_bixels {
                return Err(FmoError::MatrixFormat(format!(
                    "entry ({r}, {c}) outside {n_voxels}x{n_bixels}"
                )));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FmoError::MatrixFormat(format!(
                    "entry ({r}, {c}) has invalid value {v}"
                )));
            }
            if prev == Some((r, c)) {
                return Err(FmoError::MatrixFormat(format!(
                    "duplicate entry ({r}, {c})"
                )));
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c as u32);
            values.push(v);
        }
        for r in 0..n_voxels {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(DoseInfluenceMatrix {
            n_voxels,
            n_bixels,
            row_ptr,
            cols,
            values,
        })
    }

    /// Builds from already-compressed rows. Callers guarantee sorted columns
    /// and valid values; checked in debug builds.
    pub(crate) fn from_rows(n_bixels: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n_voxels = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n_voxels + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!((c as usize) < n_bixels && v >= 0.0 && v.is_finite());
                cols.push(c);
                values.push(v);
            }
            row_ptr.push(cols.len());
        }
        DoseInfluenceMatrix {
            n_voxels,
            n_bixels,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>], n_bixels: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            check_len("dense row", n_bixels, row.len())?;
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        Self::from_triplets(rows.len(), n_bixels, entries)
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn n_bixels(&self) -> usize {
        self.n_bixels
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.values[span])
    }

    /// Iterates all stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_voxels).flat_map(move |r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    /// `out = L x` without the absolute value.
    #[inline]
    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_bixels);
        for (r, o) in out.iter_mut().enumerate().take(self.n_voxels) {
            *o = self.row_dot(r, x);
        }
    }

    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter()
            .zip(vals)
            .map(|(&c, &v)| v * x[c as usize])
            .sum()
    }

    /// `out += weight * row(r)`, i.e. one row's contribution to `Lᵀ y`.
    #[inline]
    pub fn scatter_row(&self, r: usize, weight: f64, out: &mut [f64]) {
        let (cols, vals) = self.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c as usize] += weight * v;
        }
    }

    /// `out = Lᵀ y`.
    pub fn mul_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_voxels);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &w) in y.iter().enumerate() {
            if w != 0.0 {
                self.scatter_row(r, w, out);
            }
        }
    }

    /// Sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DoseInfluenceMatrix {
        let nnz = rows
            .iter()
            .map(|&r| self.row_ptr[r + 1] - self.row_ptr[r])
            .sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for &r in rows {
            let (c, v) = self.row(r);
            cols.extend_from_slice(c);
            values.extend_from_slice(v);
            row_ptr.push(cols.len());
        }
        DoseInfluenceMatrix {
            n_voxels: rows.len(),
            n_bixels: self.n_bixels,
            row_ptr,
            cols,
            values,
        }
    }

    /// Writes the little-endian triplet format: `n_voxels`, `n_bixels`, `nnz`
    /// as u64, then `nnz` records of (row u64, col u64, value f64).
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        for h in [self.n_voxels, self.n_bixels, self.nnz()] {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        for (r, c, v) in self.triplets() {
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_triplets<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    FmoError::MatrixFormat("truncated file".into())
                } else {
                    FmoError::Io(e)
                }
            })?;
            Ok(word)
        };
        let as_usize = |b: [u8; 8]| -> Result<usize> {
            usize::try_from(u64::from_le_bytes(b))
                .map_err(|_| FmoError::MatrixFormat("index does not fit in usize".into()))
        };
        let n_voxels = as_usize(next(&mut r)?)?;
        let n_bixels = as_usize(next(&mut r)?)?;
        let nnz = as_usize(next(&mut r)?)?;
        let mut entries = Vec::with_capacity(nnz.min(1 << 26));
        for _ in 0..nnz {
            let row = as_usize(next(&mut r)?)?;
            let col = as_usize(next(&mut r)?)?;
            let val = f64::from_le_bytes(next(&mut r)?);
            entries.push((row, col, val));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(FmoError::MatrixFormat("trailing bytes after records".into()));
        }
        Self::from_triplets(n_voxels, n_bixels, entries)
    }
}

/// Dose `L |b|` for a fluence vector `b`.
pub fn dose_from_fluence(l: &DoseInfluenceMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len("fluence vector", l.n_bixels(), b.len())?;
    let magnitude: Vec<f64> = b.iter().map(|x| x.abs()).collect();
    let mut d = vec![0.0; l.n_voxels()];
    l.mul_into(&magnitude, &mut d);
    Ok(d)
}

/// `Lᵀ v` for a dose-space vector `v`.
pub fn adjoint_apply(l: &DoseInfluenceMatrix, v: &[f64]) -> Result<Vec<f64>> {
    check_len("dose-space vector", l.n_voxels(), v.len())?;
    let mut out = vec![0.0; l.n_bixels()];
    l.mul_transpose_into(v, &mut out);
    Ok(out)
}
