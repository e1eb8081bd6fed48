//! Projections and proximal maps for the non-smooth terms of the
//! deconvolution objective.

use crate::error::{Error, Result};
use crate::grid::{GradientField, Image, RegionMask};

/// Pixelwise `max(u, 0)`.
pub fn project_nonneg(u: &Image) -> Image {
    u.map(|v| v.max(0.0))
}

/// Euclidean projection onto the probability simplex `{w >= 0, sum w = 1}`
/// by sort-and-threshold.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot project an empty vector onto the simplex".into(),
        ));
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();

    // one correction pass for accumulated rounding in the cumulative sum
    let active = w.iter().filter(|&&x| x > 0.0).count();
    let drift = 1.0 - w.iter().sum::<f64>();
    if active > 0 && drift != 0.0 {
        let delta = drift / active as f64;
        for x in w.iter_mut().filter(|x| **x > 0.0) {
            *x = (*x + delta).max(0.0);
        }
    }
    Ok(w)
}

/// Prox of `t * ||.||_{2,1} + indicator(p = 0 on omega)`: zeroes the pixels
/// of `omega` and group-soft-thresholds the rest.
pub fn prox_tv_region(p: &GradientField, t: f64, omega: &RegionMask) -> Result<GradientField> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {t}"
        )));
    }
    omega.ensure_grid(p.side())?;
    let n = p.side();
    let mut gx = p.gx.clone();
    let mut gy = p.gy.clone();
    for (k, &inside) in omega.inside().iter().enumerate() {
        if inside {
            gx[k] = 0.0;
            gy[k] = 0.0;
            continue;
        }
        let mag = gx[k].hypot(gy[k]);
        let factor = if mag > 0.0 {
            (1.0 - t / mag).max(0.0)
        } else {
            0.0
        };
        gx[k] *= factor;
        gy[k] *= factor;
    }
    GradientField::new(n, gx, gy)
}

/// Prox of the convex conjugate of `1/2 ||y - .||^2` with step `sigma_step`.
pub fn prox_dual_fidelity(q: &Image, sigma_step: f64, y: &Image) -> Image {
    let denom = 1.0 + sigma_step;
    q.zip_map(y, |a, b| (a - sigma_step * b) / denom)
}

/// Minimizer of `indicator(u >= 0) + ||u - anchor||^2 / (2 lambda_x)
/// + ||u - v||^2 / (2 tau)`.
pub fn prox_primal_x(v: &Image, tau: f64, x_anchor: &Image, lambda_x: f64) -> Image {
    let wv = lambda_x / (lambda_x + tau);
    let wa = tau / (lambda_x + tau);
    v.zip_map(x_anchor, |a, b| (wv * a + wa * b).max(0.0))
}

/// Same as [`prox_primal_x`] with the extra constraint that the gradient
/// vanishes on the pixels of `groups`.
pub fn prox_primal_x_constrained(
    v: &Image,
    tau: f64,
    x_anchor: &Image,
    lambda_x: f64,
    groups: &ConstancyGroups,
) -> Image {
    let wv = lambda_x / (lambda_x + tau);
    let wa = tau / (lambda_x + tau);
    let mut out = v.zip_map(x_anchor, |a, b| wv * a + wa * b).into_data();
    groups.project_nonneg_in_place(&mut out);
    Image::from_raw(v.side(), out)
}

/// Sets of pixels tied together by a zero-gradient constraint.
///
/// A pixel in the mask forces its right and lower neighbours to share its
/// value, so `{u : gradient(u) = 0 on mask}` is the set of images that are
/// constant on each connected component of this relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstancyGroups {
    side: usize,
    groups: Vec<Vec<usize>>,
}

impl ConstancyGroups {
    pub fn from_mask(mask: &RegionMask) -> Self {
        let n = mask.side();
        let mut parent: Vec<usize> = (0..n * n).collect();

        fn find(parent: &mut [usize], mut k: usize) -> usize {
            while parent[k] != k {
                parent[k] = parent[parent[k]];
                k = parent[k];
            }
            k
        }
        fn union(parent: &mut [usize], a: usize, b: usize) {
            let (ra, rb) = (find(parent, a), find(parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }

        for i in 0..n {
            for j in 0..n {
                if !mask.contains(i, j) {
                    continue;
                }
                let k = i * n + j;
                if j + 1 < n {
                    union(&mut parent, k, k + 1);
                }
                if i + 1 < n {
                    union(&mut parent, k, k + n);
                }
            }
        }

        let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for k in 0..n * n {
            let r = find(&mut parent, k);
            by_root.entry(r).or_default().push(k);
        }
        let groups = by_root.into_values().filter(|g| g.len() > 1).collect();
        Self { side: n, groups }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Projection onto `{u >= 0, u constant on every group}`: each group
    /// takes the clamped mean of its values, every other pixel is clamped.
    pub fn project_nonneg_in_place(&self, u: &mut [f64]) {
        for g in &self.groups {
            let mean = g.iter().map(|&k| u[k]).sum::<f64>() / g.len() as f64;
            for &k in g {
                u[k] = mean;
            }
        }
        for v in u.iter_mut() {
            *v = v.max(0.0);
        }
    }

    /// Projection onto `{u : gradient(u) = 0 on the mask}` (no sign constraint).
    pub fn project_in_place(&self, u: &mut [f64]) {
        for g in &self.groups {
            let mean = g.iter().map(|&k| u[k]).sum::<f64>() / g.len() as f64;
            for &k in g {
                u[k] = mean;
            }
        }
    }

    pub fn project_nonneg(&self, u: &Image) -> Image {
        let mut data = u.data().to_vec();
        self.project_nonneg_in_place(&mut data);
        Image::from_raw(u.side(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Image {
        Image::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize) -> GradientField {
        let gx = (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gy = (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        GradientField::new(n, gx, gy).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> RegionMask {
        RegionMask::new(n, (0..n * n).map(|_| rng.gen_bool(0.3)).collect()).unwrap()
    }

    /// Brute-force minimizer of ||w - v||^2 over a grid on the 3-simplex.
    fn brute_simplex3(v: &[f64], step: f64) -> Vec<f64> {
        let m = (1.0 / step).round() as usize;
        let mut best = (f64::INFINITY, vec![0.0; 3]);
        for a in 0..=m {
            for b in 0..=(m - a) {
                let w = [a as f64 * step, b as f64 * step, (m - a - b) as f64 * step];
                let d: f64 = w.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum();
                if d < best.0 {
                    best = (d, w.to_vec());
                }
            }
        }
        best.1
    }

    #[test]
    fn nonneg_clamps() {
        let u = Image::square(vec![-1.0, 2.0, 0.0, -3.0]).unwrap();
        assert_eq!(project_nonneg(&u).data(), &[0.0, 2.0, 0.0, 0.0]);
        let pos = Image::square(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(project_nonneg(&pos), pos);
    }

    #[test]
    fn nonneg_projection_is_closest_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random(&mut rng, 4);
        let p = project_nonneg(&u);
        let d = p.sub(&u).norm();
        for _ in 0..1000 {
            let v = Image::from_fn(4, |_, _| rng.gen_range(0.0..2.0));
            assert!(d <= v.sub(&u).norm());
        }
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let w = project_simplex(&[0.9, 0.5]).unwrap();
        assert!((w[0] - 0.7).abs() < 1e-15 && (w[1] - 0.3).abs() < 1e-15);
        assert!(project_simplex(&[]).is_err());
        assert!(project_simplex(&[f64::NAN]).is_err());
    }

    #[test]
    fn simplex_two_d_examples_match_brute_force() {
        // 2-vectors embedded as (a, b, 0) with a large negative third entry
        for v in [[2.0, 0.0], [0.9, 0.5]] {
            let b = brute_simplex3(&[v[0], v[1], -10.0], 1e-3);
            let w = project_simplex(&v).unwrap();
            assert!((w[0] - b[0]).abs() < 2e-3 && (w[1] - b[1]).abs() < 2e-3);
        }
    }

    #[test]
    fn simplex_matches_brute_force_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let w = project_simplex(&v).unwrap();
            let b = brute_simplex3(&v, 1e-3);
            let err = w
                .iter()
                .zip(&b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 2e-3, "{v:?}: {w:?} vs {b:?}");
        }
    }

    #[test]
    fn simplex_output_is_feasible_for_large_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [1, 7, 4096] {
            let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = project_simplex(&v).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn tv_region_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_field(&mut rng, 3);
        assert_eq!(prox_tv_region(&p, 0.0, &RegionMask::empty(3)).unwrap(), p);

        let single = GradientField::new(1, vec![3.0], vec![4.0]).unwrap();
        let out = prox_tv_region(&single, 5.0, &RegionMask::empty(1)).unwrap();
        assert_eq!((out.gx[0], out.gy[0]), (0.0, 0.0));
        let out = prox_tv_region(&single, 2.5, &RegionMask::empty(1)).unwrap();
        assert!((out.gx[0] - 1.5).abs() < 1e-15 && (out.gy[0] - 2.0).abs() < 1e-15);

        assert!(prox_tv_region(&single, -1.0, &RegionMask::empty(1)).is_err());
        assert!(prox_tv_region(&single, 1.0, &RegionMask::empty(2)).is_err());
    }

    #[test]
    fn tv_region_matches_grid_search() {
        // per-pixel objective t*|w| + |w - p|^2 / 2; the minimizer lies on
        // the segment from 0 to p, so a 1-D search along it is exhaustive
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let t = rng.gen_range(0.0..3.0);
            let field = GradientField::new(1, vec![a], vec![b]).unwrap();
            let out = prox_tv_region(&field, t, &RegionMask::empty(1)).unwrap();
            let mut best = (f64::INFINITY, 0.0);
            let steps = 1_000_000;
            for k in 0..=steps {
                let s = k as f64 / steps as f64;
                let (wx, wy) = (s * a, s * b);
                let f = t * wx.hypot(wy) + 0.5 * ((wx - a).powi(2) + (wy - b).powi(2));
                if f < best.0 {
                    best = (f, s);
                }
            }
            assert!((out.gx[0] - best.1 * a).abs() < 1e-5);
            assert!((out.gy[0] - best.1 * b).abs() < 1e-5);
        }
    }

    #[test]
    fn tv_region_is_exactly_zero_on_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_field(&mut rng, 6);
        let mask = random_mask(&mut rng, 6);
        let out = prox_tv_region(&p, 0.1, &mask).unwrap();
        for (k, &inside) in mask.inside().iter().enumerate() {
            if inside {
                assert_eq!(out.gx[k], 0.0);
                assert_eq!(out.gy[k], 0.0);
            }
        }
    }

    #[test]
    fn dual_fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random(&mut rng, 4);
        let y = random(&mut rng, 4);
        assert!(prox_dual_fidelity(&q, 1e-8, &y).sub(&q).max_abs() <= 1e-7);
        assert_eq!(prox_dual_fidelity(&y, 1.0, &y).max_abs(), 0.0);
    }

    #[test]
    fn dual_fidelity_moreau_identity() {
        // q = prox_{sF}(q) + s * prox_{F*/s}(q / s)
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let q = random(&mut rng, 5);
            let y = random(&mut rng, 5);
            let s: f64 = rng.gen_range(0.1..5.0);
            let prox_f = q.zip_map(&y, |a, b| (a + s * b) / (1.0 + s));
            let dual = prox_dual_fidelity(&q.scale(1.0 / s), 1.0 / s, &y);
            let recomposed = prox_f.add(&dual.scale(s));
            assert!(recomposed.sub(&q).max_abs() < 1e-10);
        }
    }

    #[test]
    fn primal_x_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random(&mut rng, 4);
        let anchor = random(&mut rng, 4);
        let out = prox_primal_x(&v, 1.0, &anchor, 1e12);
        assert!(out.sub(&project_nonneg(&v)).max_abs() < 1e-6);

        let pos = project_nonneg(&v);
        assert!(prox_primal_x(&pos, 0.7, &pos, 2.0).sub(&pos).max_abs() < 1e-15);

        let out = prox_primal_x(&Image::filled(2, -1.0), 1.0, &Image::filled(2, 1.0), 1.0);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn primal_x_matches_scalar_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let (v, a) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (tau, lam) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
            let out = prox_primal_x(&Image::filled(1, v), tau, &Image::filled(1, a), lam).get(0, 0);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=400_000 {
                let u = k as f64 * 1e-5;
                let f = (u - a).powi(2) / (2.0 * lam) + (u - v).powi(2) / (2.0 * tau);
                if f < best.0 {
                    best = (f, u);
                }
            }
            assert!((out - best.1).abs() < 2e-5);
        }
    }

    #[test]
    fn projections_are_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random(&mut rng, 6);
        let p = project_nonneg(&u);
        assert!(project_nonneg(&p).sub(&p).max_abs() <= 1e-14);

        let v: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = project_simplex(&v).unwrap();
        let ww = project_simplex(&w).unwrap();
        assert!(w.iter().zip(&ww).all(|(a, b)| (a - b).abs() <= 1e-14));

        let groups = ConstancyGroups::from_mask(&random_mask(&mut rng, 6));
        let g = groups.project_nonneg(&u);
        assert!(groups.project_nonneg(&g).sub(&g).max_abs() <= 1e-14);
    }

    #[test]
    fn operators_are_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 5;
        let mask = random_mask(&mut rng, n);
        let groups = ConstancyGroups::from_mask(&mask);
        let y = random(&mut rng, n);
        let anchor = random(&mut rng, n);
        for _ in 0..200 {
            let a = random(&mut rng, n);
            let b = random(&mut rng, n);
            let d = a.sub(&b).norm() + 1e-12;
            assert!(project_nonneg(&a).sub(&project_nonneg(&b)).norm() <= d);
            assert!(
                prox_dual_fidelity(&a, 0.5, &y)
                    .sub(&prox_dual_fidelity(&b, 0.5, &y))
                    .norm()
                    <= d
            );
            assert!(
                prox_primal_x(&a, 0.5, &anchor, 1.5)
                    .sub(&prox_primal_x(&b, 0.5, &anchor, 1.5))
                    .norm()
                    <= d
            );
            assert!(
                groups
                    .project_nonneg(&a)
                    .sub(&groups.project_nonneg(&b))
                    .norm()
                    <= d
            );
            let sa = project_simplex(a.data()).unwrap();
            let sb = project_simplex(b.data()).unwrap();
            let ds: f64 = sa
                .iter()
                .zip(&sb)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(ds <= d);

            let pa = random_field(&mut rng, n);
            let pb = random_field(&mut rng, n);
            let dp = pa.sub_norm(&pb) + 1e-12;
            let qa = prox_tv_region(&pa, 0.3, &mask).unwrap();
            let qb = prox_tv_region(&pb, 0.3, &mask).unwrap();
            assert!(qa.sub_norm(&qb) <= dp);
        }
    }

    #[test]
    fn constancy_projection_zeroes_masked_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = 7;
            let mask = random_mask(&mut rng, n);
            let groups = ConstancyGroups::from_mask(&mask);
            let u = groups.project_nonneg(&random(&mut rng, n));
            let g = gradient(&u);
            for (k, &inside) in mask.inside().iter().enumerate() {
                if inside {
                    assert_eq!(g.gx[k], 0.0);
                    assert_eq!(g.gy[k], 0.0);
                }
            }
            assert!(u.min() >= 0.0);
        }
    }

    #[test]
    fn constancy_projection_is_closest_point() {
        // compare against random feasible points of the constraint set
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 5;
        let groups = ConstancyGroups::from_mask(&random_mask(&mut rng, n));
        let u = random(&mut rng, n);
        let p = groups.project_nonneg(&u);
        let d = p.sub(&u).norm();
        for _ in 0..1000 {
            let v = groups.project_nonneg(&Image::from_fn(n, |_, _| rng.gen_range(-1.0..2.0)));
            assert!(d <= v.sub(&u).norm() + 1e-12);
        }
    }

    #[test]
    fn constrained_primal_prox_reduces_to_plain_one_without_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let v = random(&mut rng, 4);
        let a = random(&mut rng, 4);
        let groups = ConstancyGroups::from_mask(&RegionMask::empty(4));
        assert!(groups.is_empty());
        assert_eq!(
            prox_primal_x_constrained(&v, 0.3, &a, 2.0, &groups),
            prox_primal_x(&v, 0.3, &a, 2.0)
        );
    }
}
