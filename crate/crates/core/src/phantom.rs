//! Synthetic disk phantoms, Gaussian PSFs and noisy observations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fftconv::{ConvOperator, Psf};
use crate::grid::{Image, RegionMask};

/// Minimum distance in pixels between a disk and the grid edge.
pub const EDGE_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
    pub intensity: f64,
}

impl Disk {
    pub fn new(row: f64, col: f64, radius: f64, intensity: f64) -> Self {
        Self {
            row,
            col,
            radius,
            intensity,
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        (i as f64 - self.row).hypot(j as f64 - self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub n: usize,
    pub disks: Vec<Disk>,
    pub background: f64,
    /// Number of largest disks whose (eroded) interiors form the region mask.
    pub omega_disk_count: usize,
}

impl Default for PhantomSpec {
    /// 64x64 grid, six unit-intensity disks of radii 2..8 px on a zero
    /// background; the five largest form the constant-activity region.
    fn default() -> Self {
        let disks = vec![
            Disk::new(20.0, 20.0, 8.0, 1.0),
            Disk::new(20.0, 44.0, 6.0, 1.0),
            Disk::new(44.0, 20.0, 5.0, 1.0),
            Disk::new(44.0, 44.0, 4.0, 1.0),
            Disk::new(32.0, 32.0, 3.0, 1.0),
            Disk::new(32.0, 54.0, 2.0, 1.0),
        ];
        Self {
            n: 64,
            disks,
            background: 0.0,
            omega_disk_count: 5,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n == 0 {
            return bad("phantom grid side must be positive".into());
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            return bad(format!("background must be >= 0, got {}", self.background));
        }
        if self.omega_disk_count > self.disks.len() {
            return bad(format!(
                "omega_disk_count {} exceeds the {} disks",
                self.omega_disk_count,
                self.disks.len()
            ));
        }
        let hi = self.n as f64 - 1.0 - EDGE_MARGIN;
        for (k, d) in self.disks.iter().enumerate() {
            if !(d.radius > 0.0 && d.radius.is_finite()) {
                return bad(format!("disk {k}: radius must be positive"));
            }
            if !(d.intensity >= 0.0 && d.intensity.is_finite()) {
                return bad(format!("disk {k}: intensity must be >= 0"));
            }
            let (lo_r, hi_r) = (d.row - d.radius, d.row + d.radius);
            let (lo_c, hi_c) = (d.col - d.radius, d.col + d.radius);
            if lo_r < EDGE_MARGIN || lo_c < EDGE_MARGIN || hi_r > hi || hi_c > hi {
                return bad(format!(
                    "disk {k} must stay {EDGE_MARGIN} px away from the grid edge"
                ));
            }
            for (m, e) in self.disks.iter().enumerate().skip(k + 1) {
                if (d.row - e.row).hypot(d.col - e.col) < d.radius + e.radius {
                    return bad(format!("disks {k} and {m} overlap"));
                }
            }
        }
        Ok(())
    }

    /// Indices of the `omega_disk_count` largest disks (stable on ties).
    pub fn omega_disks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.disks.len()).collect();
        order.sort_by(|&a, &b| self.disks[b].radius.total_cmp(&self.disks[a].radius));
        order.truncate(self.omega_disk_count);
        order
    }
}

/// Renders the phantom and its region mask. A pixel belongs to a disk when
/// its center lies strictly within the radius. The mask is the chosen disks
/// eroded by one pixel along the forward-difference stencil: a disk pixel is
/// kept when its right and lower neighbours belong to the same disk, which
/// is exactly where the phantom's gradient vanishes inside that disk.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Image, RegionMask)> {
    spec.validate()?;
    let n = spec.n;
    let x = Image::from_fn(n, |i, j| {
        spec.disks
            .iter()
            .find(|d| d.distance(i, j) < d.radius)
            .map_or(spec.background, |d| d.intensity)
    });
    let chosen = spec.omega_disks();
    let mut inside = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            inside[i * n + j] = chosen.iter().any(|&k| {
                let d = &spec.disks[k];
                d.distance(i, j) < d.radius
                    && d.distance(i, j + 1) < d.radius
                    && d.distance(i + 1, j) < d.radius
            });
        }
    }
    Ok((x, RegionMask::new(n, inside)?))
}

/// Isotropic Gaussian sampled on wrapped offsets and normalized to sum 1.
pub fn make_gaussian_psf(n: usize, sigma_px: f64) -> Result<Psf> {
    if n == 0 || !(sigma_px >= 0.0 && sigma_px.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gaussian psf needs n > 0 and sigma >= 0, got n={n}, sigma={sigma_px}"
        )));
    }
    if sigma_px == 0.0 {
        return Ok(Psf::delta(n));
    }
    let offset = |k: usize| -> f64 {
        if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        }
    };
    let two_var = 2.0 * sigma_px * sigma_px;
    let raw = Image::from_fn(n, |i, j| {
        let (di, dj) = (offset(i), offset(j));
        (-(di * di + dj * dj) / two_var).exp()
    });
    let total = raw.sum();
    Ok(Psf::new(raw.scale(1.0 / total)))
}

/// Derives the noise seed of one trial from a base seed. Each
/// `(bsnr_index, trial, realization)` triple gets an independent stream:
/// the triple is packed into one word, xor-ed with the base seed and passed
/// through the SplitMix64 finalizer.
pub fn trial_seed(base: u64, bsnr_index: u64, trial: u64, realization: u64) -> u64 {
    let packed = (bsnr_index << 40) ^ (trial << 8) ^ realization;
    splitmix64(base ^ splitmix64(packed))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `y = h * x + eta` with `eta ~ N(0, sigma_n^2)` i.i.d., where
/// `sigma_n^2 = var(h * x) / 10^(bsnr_db / 10)`. An infinite BSNR yields the
/// noiseless blur. Noise is drawn from ChaCha8 seeded with `seed`.
pub fn simulate_observation(x: &Image, h: &Psf, bsnr_db: f64, seed: u64) -> Result<(Image, f64)> {
    x.ensure_same_grid(h)?;
    let b = ConvOperator::new(h).apply(x)?;
    if bsnr_db == f64::INFINITY {
        return Ok((b, 0.0));
    }
    if !bsnr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid BSNR {bsnr_db}")));
    }
    let var = b.variance();
    if var == 0.0 {
        return Err(Error::DegenerateInput(
            "blurred image is constant; BSNR is undefined".into(),
        ));
    }
    let sigma_n = (var / 10f64.powf(bsnr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = b.map(|v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + sigma_n * z
    });
    Ok((y, sigma_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gradient;

    #[test]
    fn no_disks_gives_background() {
        let spec = PhantomSpec {
            n: 16,
            disks: vec![],
            background: 0.25,
            omega_disk_count: 0,
        };
        let (x, omega) = make_phantom(&spec).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.25));
        assert_eq!(omega.count(), 0);
    }

    #[test]
    fn tiny_disk_covers_one_pixel() {
        let spec = PhantomSpec {
            n: 16,
            disks: vec![Disk::new(8.0, 8.0, 0.6, 2.0)],
            background: 0.0,
            omega_disk_count: 0,
        };
        let (x, _) = make_phantom(&spec).unwrap();
        assert_eq!(x.data().iter().filter(|&&v| v > 0.0).count(), 1);
        assert_eq!(x.get(8, 8), 2.0);
    }

    #[test]
    fn default_mask_counts_eroded_pixels() {
        let spec = PhantomSpec::default();
        let (x, omega) = make_phantom(&spec).unwrap();
        // independent count on integer offsets from each (integer) center:
        // the offset and its right and lower neighbours lie within the radius
        let expected: usize = spec.disks[..5]
            .iter()
            .map(|d| {
                let r2 = d.radius * d.radius;
                let within = |a: i32, b: i32| ((a * a + b * b) as f64) < r2;
                let mut c = 0;
                for a in -10i32..=10 {
                    for b in -10i32..=10 {
                        if within(a, b) && within(a, b + 1) && within(a + 1, b) {
                            c += 1;
                        }
                    }
                }
                c
            })
            .sum();
        assert_eq!(omega.count(), expected);

        assert!(x.min() >= 0.0);
        let g = gradient(&x);
        for (k, &inside) in omega.inside().iter().enumerate() {
            if inside {
                assert_eq!((g.gx[k], g.gy[k]), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = PhantomSpec::default();
        spec.disks.push(Disk::new(21.0, 21.0, 2.0, 1.0));
        assert!(make_phantom(&spec).is_err());

        let edge = PhantomSpec {
            n: 16,
            disks: vec![Disk::new(3.0, 8.0, 2.0, 1.0)],
            background: 0.0,
            omega_disk_count: 1,
        };
        assert!(make_phantom(&edge).is_err());

        let spec = PhantomSpec {
            omega_disk_count: 7,
            ..PhantomSpec::default()
        };
        assert!(make_phantom(&spec).is_err());
    }

    #[test]
    fn gaussian_psf_properties() {
        let h = make_gaussian_psf(64, 1.3).unwrap();
        assert!((h.sum() - 1.0).abs() < 1e-14);
        assert!(h.min() >= 0.0);
        let ratio = h.get(0, 0) / h.get(1, 0);
        assert!((ratio - (1.0f64 / (2.0 * 1.69)).exp()).abs() < 1e-12);
        assert!((ratio - 1.34428).abs() < 1e-5);
        for (a, b) in [(1usize, 2usize), (3, 5), (0, 4)] {
            let v = h.get(a, b);
            assert_eq!(v, h.get(b, a));
            assert_eq!(v, h.get((64 - a) % 64, b));
            assert_eq!(v, h.get(a, (64 - b) % 64));
        }
        let tiny = make_gaussian_psf(16, 1e-6).unwrap();
        assert!(tiny.sub(&Psf::delta(16)).max_abs() < 1e-12);
    }

    #[test]
    fn noise_level_follows_bsnr() {
        let (x, _) = make_phantom(&PhantomSpec::default()).unwrap();
        let h = make_gaussian_psf(64, 1.3).unwrap();
        let b = ConvOperator::new(&h).apply(&x).unwrap();

        let (y, s) = simulate_observation(&x, &h, f64::INFINITY, 1).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(y, b);

        for seed in 0..20 {
            let (y, s) = simulate_observation(&x, &h, 30.0, seed).unwrap();
            let realized = 10.0 * (b.variance() / y.sub(&b).variance()).log10();
            assert!((realized - 30.0).abs() <= 0.3, "{realized}");
            assert!((10.0 * (b.variance() / (s * s)).log10() - 30.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_variance_at_twenty_db() {
        // var(b) = 100 -> sigma_n = 1 at 20 dB
        let x = Image::from_fn(8, |i, j| if (i + j) % 2 == 0 { 20.0 } else { 0.0 });
        let (_, s) = simulate_observation(&x, &Psf::delta(8), 20.0, 3).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_noise() {
        let (x, _) = make_phantom(&PhantomSpec::default()).unwrap();
        let h = make_gaussian_psf(64, 1.3).unwrap();
        let a = simulate_observation(&x, &h, 20.0, 42).unwrap();
        let b = simulate_observation(&x, &h, 20.0, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, simulate_observation(&x, &h, 20.0, 43).unwrap().0);
    }

    #[test]
    fn constant_blur_with_finite_bsnr_is_rejected() {
        let x = Image::filled(8, 1.0);
        assert!(matches!(
            simulate_observation(&x, &Psf::delta(8), 20.0, 0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn trial_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for b in 0..4 {
            for t in 0..10 {
                for r in 0..2 {
                    assert!(seen.insert(trial_seed(7, b, t, r)));
                }
            }
        }
    }
}
