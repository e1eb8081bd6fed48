//! Circular convolution on square grids, computed with 2-D FFTs.
//!
//! Kernels follow the origin-at-`(0, 0)` convention: `h[k, l]` weights the
//! input pixel displaced by `(k, l)` with wraparound, i.e.
//! `(h * x)[i, j] = sum_{k,l} h[k, l] x[(i - k) mod n, (j - l) mod n]`.

use std::ops::Deref;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Image;

/// A point-spread function stored at full grid size, origin at pixel `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf(Image);

impl Psf {
    pub fn new(kernel: Image) -> Self {
        Psf(kernel)
    }

    /// Discrete delta at the origin.
    pub fn delta(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        data[0] = 1.0;
        Psf(Image::from_raw(n, data))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    /// True when all entries are `>= -tol` and they sum to one within `tol`.
    pub fn is_on_simplex(&self, tol: f64) -> bool {
        (self.0.sum() - 1.0).abs() <= tol && self.0.min() >= -tol
    }

    pub(crate) fn ensure_simplex(&self, tol: f64) -> Result<()> {
        let sum = self.0.sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotOnSimplex {
                sum,
                min: self.0.min(),
            });
        }
        Ok(())
    }
}

impl Deref for Psf {
    type Target = Image;

    fn deref(&self) -> &Image {
        &self.0
    }
}

/// Forward and inverse 2-D DFT plans for one grid size. Immutable after
/// construction, so it can be shared between threads.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, n);
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, n);
    }

    /// Unnormalized forward DFT of a real row-major grid.
    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Inverse DFT (normalized by `1/N`), returning the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    /// Inverse DFT (normalized) keeping the complex result.
    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut spectrum, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        spectrum.iter_mut().for_each(|c| *c *= scale);
        spectrum
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Convolution by a fixed kernel, with its spectrum cached.
#[derive(Debug, Clone)]
pub struct ConvOperator {
    fft: Fft2,
    spectrum: Vec<Complex64>,
}

impl ConvOperator {
    pub fn new(kernel: &Image) -> Self {
        Self::with_plan(Fft2::new(kernel.side()), kernel)
    }

    pub fn with_plan(fft: Fft2, kernel: &Image) -> Self {
        assert_eq!(fft.side(), kernel.side());
        let spectrum = fft.forward(kernel.data());
        Self { fft, spectrum }
    }

    pub fn side(&self) -> usize {
        self.fft.side()
    }

    pub fn plan(&self) -> &Fft2 {
        &self.fft
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    fn check(&self, x: &Image) -> Result<()> {
        if x.side() != self.side() {
            return Err(Error::GridMismatch {
                expected: self.side(),
                got: x.side(),
            });
        }
        Ok(())
    }

    /// `kernel * x`
    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        Ok(Image::from_raw(self.side(), self.apply_raw(x.data())))
    }

    /// Correlation with the kernel, the adjoint of [`ConvOperator::apply`].
    pub fn adjoint(&self, r: &Image) -> Result<Image> {
        self.check(r)?;
        Ok(Image::from_raw(self.side(), self.adjoint_raw(r.data())))
    }

    pub(crate) fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        let mut spec = self.fft.forward(x);
        for (s, k) in spec.iter_mut().zip(&self.spectrum) {
            *s *= k;
        }
        self.fft.inverse_real(spec)
    }

    pub(crate) fn adjoint_raw(&self, r: &[f64]) -> Vec<f64> {
        let mut spec = self.fft.forward(r);
        for (s, k) in spec.iter_mut().zip(&self.spectrum) {
            *s *= k.conj();
        }
        self.fft.inverse_real(spec)
    }

    /// Largest spectral magnitude.
    pub fn norm(&self) -> f64 {
        self.spectrum.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// Largest spectral magnitude over the non-constant frequencies.
    pub fn norm_without_dc(&self) -> f64 {
        self.spectrum[1..].iter().fold(0.0, |m, c| m.max(c.norm()))
    }
}

/// Circular convolution `h * x`.
pub fn convolve(h: &Psf, x: &Image) -> Result<Image> {
    h.ensure_same_grid(x)?;
    ConvOperator::new(h).apply(x)
}

/// Circular correlation with `h`, the adjoint of `convolve(h, .)`.
pub fn adjoint_convolve(h: &Psf, r: &Image) -> Result<Image> {
    h.ensure_same_grid(r)?;
    ConvOperator::new(h).adjoint(r)
}

/// Places a small centered kernel of odd side on an `n x n` grid with its
/// center at `(0, 0)`; negative offsets wrap to the opposite edge.
pub fn embed_kernel(small: &Image, n: usize) -> Result<Psf> {
    let s = small.side();
    if s.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel side must be odd, got {s}"
        )));
    }
    if s > n {
        return Err(Error::InvalidArgument(format!(
            "kernel side {s} exceeds grid side {n}"
        )));
    }
    let half = (s / 2) as isize;
    let mut data = vec![0.0; n * n];
    for a in 0..s {
        for b in 0..s {
            let di = (a as isize - half).rem_euclid(n as isize) as usize;
            let dj = (b as isize - half).rem_euclid(n as isize) as usize;
            data[di * n + dj] = small.get(a, b);
        }
    }
    Ok(Psf(Image::from_raw(n, data)))
}

/// Operator norm of `convolve(h, .)`: the largest DFT magnitude of `h`.
pub fn spectral_norm(h: &Psf) -> f64 {
    ConvOperator::new(h).norm()
}

/// Support mask of the centered `s x s` window in origin-at-`(0,0)` layout.
pub fn support_window(n: usize, s: usize) -> Result<Vec<bool>> {
    let ones = Image::filled(s.max(1), 1.0);
    Ok(embed_kernel(&ones, n)?
        .data()
        .iter()
        .map(|&v| v != 0.0)
        .collect())
}
