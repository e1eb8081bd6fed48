//! Restoration quality metrics in decibels.

use crate::error::Result;
use crate::fftconv::Psf;
use crate::grid::Image;

/// Reported in place of +/- infinity when an error term vanishes.
pub const SENTINEL_DB: f64 = 300.0;

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return SENTINEL_DB;
    }
    if num == 0.0 {
        return -SENTINEL_DB;
    }
    (10.0 * (num / den).log10()).clamp(-SENTINEL_DB, SENTINEL_DB)
}

/// Blurred signal-to-noise ratio `10 log10(var(b) / sigma_n^2)`.
pub fn bsnr(b: &Image, sigma_n: f64) -> f64 {
    ratio_db(b.variance(), sigma_n * sigma_n)
}

/// Improvement in SNR: `10 log10(||y - x||^2 / ||x_est - x||^2)`.
pub fn isnr(x_true: &Image, y: &Image, x_est: &Image) -> Result<f64> {
    x_true.ensure_same_grid(y)?;
    x_true.ensure_same_grid(x_est)?;
    let num = y.sub(x_true).dot(&y.sub(x_true));
    let den = x_est.sub(x_true).dot(&x_est.sub(x_true));
    Ok(ratio_db(num, den))
}

/// Circular shift of `h_est` maximizing its correlation with `h_true`,
/// evaluated directly so shifted inputs give permuted, bitwise-equal scores.
/// Ties resolve to the first shift in row-major order.
pub fn best_alignment(h_true: &Image, h_est: &Image) -> Result<(isize, isize)> {
    h_true.ensure_same_grid(h_est)?;
    let n = h_true.side();
    let t = h_true.data();
    let e = h_est.data();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for si in 0..n {
        for sj in 0..n {
            // sum_k t[k] * e[k - s]
            let mut acc = 0.0;
            for i in 0..n {
                let ei = (i + n - si) % n;
                let trow = &t[i * n..(i + 1) * n];
                let erow = &e[ei * n..(ei + 1) * n];
                for j in 0..n {
                    acc += trow[j] * erow[(j + n - sj) % n];
                }
            }
            if acc > best.0 {
                best = (acc, si, sj);
            }
        }
    }
    Ok((best.1 as isize, best.2 as isize))
}

/// PSF reconstruction SNR `20 log10(||h_true|| / ||h_est - h_true||)`,
/// optionally after undoing the best circular translation of `h_est`.
pub fn rsnr(h_true: &Psf, h_est: &Psf, align: bool) -> Result<f64> {
    h_true.ensure_same_grid(h_est)?;
    let est = if align {
        let (di, dj) = best_alignment(h_true, h_est)?;
        h_est.shift(di, dj)
    } else {
        h_est.image().clone()
    };
    let err = est.sub(h_true);
    Ok(ratio_db(h_true.dot(h_true), err.dot(&err)))
}
