//! Noise-level estimation, the residual feasibility bound and the
//! regularization-weight schedule.

use crate::error::{Error, Result};
use crate::grid::Image;

/// Median absolute deviation scale for a standard normal.
pub const MAD_TO_SIGMA: f64 = 0.6745;

/// Default `c` in `eps^2 = sigma^2 (N + c sqrt(N))`.
pub const DEFAULT_EPSILON_C: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Robust noise estimate from the diagonal detail band of a one-level
/// orthonormal Haar transform: `median(|HH|) / 0.6745`.
pub fn estimate_sigma(y: &Image) -> Result<f64> {
    let n = y.side();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "noise estimation needs an even side >= 2, got {n}"
        )));
    }
    let mut detail = Vec::with_capacity(n * n / 4);
    for i in (0..n).step_by(2) {
        for j in (0..n).step_by(2) {
            let hh = (y.get(i, j) - y.get(i, j + 1) - y.get(i + 1, j) + y.get(i + 1, j + 1)) / 2.0;
            detail.push(hh.abs());
        }
    }
    Ok(median(&mut detail) / MAD_TO_SIGMA)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// `sigma * sqrt(N + c sqrt(N))`, a high-probability bound on the noise norm.
pub fn epsilon_bound(sigma: f64, n_pixels: usize, c: f64) -> f64 {
    let n = n_pixels as f64;
    sigma * (n + c * n.sqrt()).sqrt()
}

/// Universal-threshold initial weight `sigma * sqrt(2 ln N)`.
pub fn rho_init(sigma: f64, n_pixels: usize) -> f64 {
    sigma * (2.0 * (n_pixels as f64).ln()).sqrt()
}

/// Multiplicative residual-balancing schedule for the TV weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoSchedule {
    pub rho: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

impl RhoSchedule {
    pub fn new(rho: f64, gamma: f64, epsilon: f64, min_rho: f64, max_rho: f64) -> Result<Self> {
        let ok = gamma > 1.0
            && epsilon >= 0.0
            && min_rho >= 0.0
            && min_rho <= max_rho
            && rho.is_finite()
            && epsilon.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid rho schedule: rho={rho}, gamma={gamma}, epsilon={epsilon}, \
                 bounds=[{min_rho}, {max_rho}]"
            )));
        }
        Ok(Self {
            rho: rho.clamp(min_rho, max_rho),
            gamma,
            epsilon,
            min_rho,
            max_rho,
        })
    }

    /// A schedule pinned at `rho` (min = max = rho).
    pub fn fixed(rho: f64) -> Self {
        Self {
            rho,
            gamma: 1.05,
            epsilon: 0.0,
            min_rho: rho,
            max_rho: rho,
        }
    }
}

/// Shrinks `rho` by `gamma` while the residual exceeds `epsilon`, grows it
/// while the residual is below, and leaves it alone at equality.
pub fn rho_update(s: RhoSchedule, residual_norm: f64) -> RhoSchedule {
    let rho = if residual_norm > s.epsilon {
        s.rho / s.gamma
    } else if residual_norm < s.epsilon {
        s.rho * s.gamma
    } else {
        s.rho
    };
    RhoSchedule {
        rho: rho.clamp(s.min_rho, s.max_rho),
        ..s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Image {
        Image::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
    }

    #[test]
    fn constant_image_has_no_noise() {
        assert_eq!(estimate_sigma(&Image::filled(8, 3.0)).unwrap(), 0.0);
    }

    #[test]
    fn rejects_odd_or_tiny_grids() {
        assert!(estimate_sigma(&Image::zeros(1)).is_err());
        assert!(estimate_sigma(&Image::zeros(5)).is_err());
    }

    #[test]
    fn pure_noise_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mean: f64 = (0..20)
            .map(|_| estimate_sigma(&noise(&mut rng, 64, 1.0)).unwrap())
            .sum::<f64>()
            / 20.0;
        assert!((0.9..=1.1).contains(&mean), "{mean}");
    }

    #[test]
    fn smooth_ramp_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let eta = noise(&mut rng, 64, 0.5);
            let y = Image::from_fn(64, |i, j| 0.3 * i as f64 + 0.2 * j as f64).add(&eta);
            let s = estimate_sigma(&y).unwrap();
            assert!((0.4..=0.6).contains(&s), "{s}");
        }
    }

    #[test]
    fn shift_by_constant_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = noise(&mut rng, 16, 1.0);
        let a = estimate_sigma(&y).unwrap();
        let b = estimate_sigma(&y.map(|v| v + 5.0)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_bound(0.0, 4096, 2.0), 0.0);
        assert_eq!(epsilon_bound(1.0, 4096, 0.0), 64.0);
        let e = epsilon_bound(1.0, 4096, 2.828);
        assert!((e - (4096.0f64 + 2.828 * 64.0).sqrt()).abs() < 1e-12);
        assert!((e - 65.3987).abs() < 1e-4);
    }

    #[test]
    fn epsilon_covers_noise_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let eps = epsilon_bound(1.0, 4096, DEFAULT_EPSILON_C);
        let covered = (0..1000)
            .filter(|_| noise(&mut rng, 64, 1.0).norm() <= eps)
            .count();
        assert!(covered >= 970, "{covered}");
    }

    #[test]
    fn rho_init_examples() {
        assert_eq!(rho_init(0.0, 4096), 0.0);
        assert!((rho_init(1.0, 4096) - 4.07867).abs() < 1e-5);
        assert!((rho_init(2.0, 4096) - 2.0 * rho_init(1.0, 4096)).abs() < 1e-15);
    }

    #[test]
    fn bounds_are_monotone() {
        let mut prev = (0.0, 0.0);
        for k in 1..50 {
            let s = k as f64 * 0.1;
            let cur = (epsilon_bound(s, 100, 2.0), rho_init(s, 100));
            assert!(cur.0 > prev.0 && cur.1 > prev.1);
            prev = cur;
        }
        for n in 2..50 {
            assert!(epsilon_bound(1.0, n + 1, 2.0) > epsilon_bound(1.0, n, 2.0));
            assert!(rho_init(1.0, n + 1) > rho_init(1.0, n));
        }
    }

    #[test]
    fn rho_update_rule() {
        let s = RhoSchedule::new(4.0, 1.1, 1.0, 0.0, 100.0).unwrap();
        assert_eq!(rho_update(s, 1.0).rho, 4.0);
        assert!((rho_update(s, 2.0).rho - 3.636_363_636).abs() < 1e-6);
        assert!((rho_update(s, 0.5).rho - 4.4).abs() < 1e-12);

        let mut t = s;
        for _ in 0..200 {
            t = rho_update(t, 0.0);
        }
        assert_eq!(t.rho, 100.0);
    }

    #[test]
    fn rho_update_stays_in_bounds_and_is_monotone_in_residual() {
        let s = RhoSchedule::new(1.0, 1.5, 2.0, 0.9, 1.2).unwrap();
        let rhos: Vec<f64> = [0.0, 1.0, 2.0, 3.0, 10.0]
            .iter()
            .map(|&r| rho_update(s, r).rho)
            .collect();
        assert!(rhos.iter().all(|r| (0.9..=1.2).contains(r)));
        assert!(rhos.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(RhoSchedule::new(1.0, 1.0, 1.0, 0.0, 2.0).is_err());
        assert!(RhoSchedule::new(1.0, 2.0, -1.0, 0.0, 2.0).is_err());
        assert!(RhoSchedule::new(1.0, 2.0, 1.0, 3.0, 2.0).is_err());
    }
}
