//! Square pixel grids and the forward-difference gradient calculus.
//!
//! Storage is row-major: pixel `(i, j)` lives at `i * n + j`.

use crate::error::{Error, Result};

/// An `n x n` raster of finite real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || rows != cols {
            return Err(Error::InvalidShape(format!(
                "grid must be square and non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "expected {} pixels, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Square image from row-major data; the side is inferred.
    pub fn square(data: Vec<f64>) -> Result<Self> {
        let n = (data.len() as f64).sqrt().round() as usize;
        Self::new(n, n, data)
    }

    pub fn zeros(n: usize) -> Self {
        Self::filled(n, 0.0)
    }

    pub fn filled(n: usize, value: f64) -> Self {
        assert!(n > 0 && value.is_finite());
        Self {
            rows: n,
            cols: n,
            data: vec![value; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n > 0);
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self::from_raw(n, data)
    }

    /// Wraps a buffer produced by internal arithmetic. Finiteness is the
    /// caller's responsibility (see [`Image::is_finite`]).
    pub(crate) fn from_raw(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Side length `n`.
    pub fn side(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_grid(&self, other: &Image) -> Result<()> {
        if self.rows != other.rows {
            return Err(Error::GridMismatch {
                expected: self.rows,
                got: other.rows,
            });
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image::from_raw(self.rows, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        debug_assert_eq!(self.rows, other.rows);
        Image::from_raw(
            self.rows,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, alpha: f64) -> Image {
        self.map(|v| alpha * v)
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn dot(&self, other: &Image) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Population variance of the pixel values.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.len() as f64
    }

    /// Circular shift: output pixel `(i, j)` takes input pixel `(i - di, j - dj)`.
    pub fn shift(&self, di: isize, dj: isize) -> Image {
        let n = self.rows as isize;
        Image::from_fn(self.rows, |i, j| {
            let si = (i as isize - di).rem_euclid(n) as usize;
            let sj = (j as isize - dj).rem_euclid(n) as usize;
            self.get(si, sj)
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Horizontal and vertical differences, one pair per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    rows: usize,
    cols: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientField {
    pub fn new(n: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        if n == 0 || gx.len() != n * n || gy.len() != n * n {
            return Err(Error::InvalidShape(format!(
                "gradient field components must have {} entries",
                n * n
            )));
        }
        Ok(Self {
            rows: n,
            cols: n,
            gx,
            gy,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            gx: vec![0.0; n * n],
            gy: vec![0.0; n * n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn side(&self) -> usize {
        self.rows
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        dot(&self.gx, &other.gx) + dot(&self.gy, &other.gy)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, alpha: f64) -> GradientField {
        GradientField {
            rows: self.rows,
            cols: self.cols,
            gx: self.gx.iter().map(|v| alpha * v).collect(),
            gy: self.gy.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `||self - other||_2`
    pub fn sub_norm(&self, other: &GradientField) -> f64 {
        let dx: f64 = self
            .gx
            .iter()
            .zip(&other.gx)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let dy: f64 = self
            .gy
            .iter()
            .zip(&other.gy)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (dx + dy).sqrt()
    }

    /// Per-pixel magnitude `sqrt(gx^2 + gy^2)`.
    pub fn magnitude(&self) -> Vec<f64> {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }
}

/// Boolean pixel set, e.g. a region of known uniform activity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    rows: usize,
    cols: usize,
    inside: Vec<bool>,
}

impl RegionMask {
    pub fn new(n: usize, inside: Vec<bool>) -> Result<Self> {
        if n == 0 || inside.len() != n * n {
            return Err(Error::InvalidShape(format!(
                "mask must have {} entries, got {}",
                n * n,
                inside.len()
            )));
        }
        Ok(Self {
            rows: n,
            cols: n,
            inside,
        })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            inside: vec![false; n * n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            inside: vec![true; n * n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn side(&self) -> usize {
        self.rows
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.inside[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn ensure_grid(&self, n: usize) -> Result<()> {
        if self.rows != n {
            return Err(Error::GridMismatch {
                expected: n,
                got: self.rows,
            });
        }
        Ok(())
    }
}

/// Forward differences with a zero difference across the last column/row.
pub fn gradient(u: &Image) -> GradientField {
    let n = u.side();
    let d = u.data();
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if j + 1 < n {
                gx[k] = d[k + 1] - d[k];
            }
            if i + 1 < n {
                gy[k] = d[k + n] - d[k];
            }
        }
    }
    GradientField {
        rows: n,
        cols: n,
        gx,
        gy,
    }
}

/// Backward-difference divergence, the negative adjoint of [`gradient`]:
/// `<gradient(u), p> = -<u, divergence(p)>`.
pub fn divergence(p: &GradientField) -> Image {
    let n = p.side();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let mut v = 0.0;
            if j + 1 < n {
                v += p.gx[k];
            }
            if j > 0 {
                v -= p.gx[k - 1];
            }
            if i + 1 < n {
                v += p.gy[k];
            }
            if i > 0 {
                v -= p.gy[k - n];
            }
            out[k] = v;
        }
    }
    Image::from_raw(n, out)
}

/// Isotropic total variation of a field: sum of per-pixel magnitudes.
pub fn tv_norm(p: &GradientField) -> f64 {
    p.gx.iter().zip(&p.gy).map(|(a, b)| a.hypot(*b)).sum()
}

/// Isotropic total variation of an image.
pub fn total_variation(u: &Image) -> f64 {
    tv_norm(&gradient(u))
}
