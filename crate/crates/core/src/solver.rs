//! Blind deconvolution by proximal alternating minimization, plus the
//! non-blind pass with a fixed PSF.
//!
//! The objective is
//!
//! ```text
//! L(x, h) = rho * TV(x) + 1/2 ||y - h * x||^2
//!           + [x >= 0] + [grad x = 0 on omega] + [h on simplex]
//! ```
//!
//! Each outer iteration minimizes `L(., h) + ||. - x_prev||^2 / (2 lambda_x)`
//! with a two-block primal-dual method and then
//! `L(x, .) + ||. - h_prev||^2 / (2 lambda_h)` with monotone accelerated
//! projected gradient.

use crate::error::{Error, Result};
use crate::estimate::{epsilon_bound, estimate_sigma, rho_init, rho_update, RhoSchedule};
use crate::fftconv::{support_window, ConvOperator, Fft2, Psf};
use crate::grid::{dot, gradient, tv_norm, GradientField, Image, RegionMask};
use crate::prox::{
    project_simplex, prox_dual_fidelity, prox_primal_x, prox_primal_x_constrained, prox_tv_region,
    ConstancyGroups,
};

/// Tolerance used by the feasibility flags.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// How the TV weight is initialized and adapted.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoConfig {
    /// Multiplicative step of the schedule.
    pub gamma: f64,
    /// `c` in the residual bound `sigma * sqrt(N + c sqrt(N))`.
    pub epsilon_c: f64,
    /// Noise level; estimated from the observation when absent.
    pub sigma: Option<f64>,
    /// Initial weight; `sigma * sqrt(2 ln N)` when absent.
    pub initial: Option<f64>,
    /// Clamp bounds as multiples of the initial weight.
    pub min_factor: f64,
    pub max_factor: f64,
    /// Absolute lower bound on the weight.
    pub floor: f64,
    /// Keep the weight fixed instead of adapting it.
    pub frozen: bool,
}

impl Default for RhoConfig {
    fn default() -> Self {
        Self {
            gamma: 1.05,
            epsilon_c: crate::estimate::DEFAULT_EPSILON_C,
            sigma: None,
            initial: None,
            min_factor: 1e-2,
            max_factor: 1e2,
            floor: 0.0,
            frozen: false,
        }
    }
}

impl RhoConfig {
    /// Builds the schedule for an observation of `n_pixels` pixels.
    pub fn schedule(&self, y: &Image) -> Result<RhoSchedule> {
        let sigma = match self.sigma {
            Some(s) => s,
            None => estimate_sigma(y)?,
        };
        let n_pixels = y.len();
        let rho0 = self.initial.unwrap_or_else(|| rho_init(sigma, n_pixels));
        let epsilon = epsilon_bound(sigma, n_pixels, self.epsilon_c);
        let (lo, hi) = if self.frozen {
            (rho0, rho0)
        } else {
            (
                (rho0 * self.min_factor).max(self.floor),
                (rho0 * self.max_factor).max(self.floor),
            )
        };
        RhoSchedule::new(rho0.max(lo), self.gamma, epsilon, lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdConfig {
    pub max_outer: usize,
    pub inner_x_iters: usize,
    pub inner_h_iters: usize,
    pub lambda_x: f64,
    pub lambda_h: f64,
    pub rho: RhoConfig,
    /// Stop when the relative objective decrease of one outer iteration
    /// (at fixed rho) falls below this.
    pub objective_tol: f64,
    /// Stop an inner solve when the relative iterate change falls below this.
    pub inner_tol: f64,
    /// Restrict the PSF to a centered odd `s x s` window.
    pub psf_support: Option<usize>,
}

impl Default for BdConfig {
    fn default() -> Self {
        Self {
            max_outer: 150,
            inner_x_iters: 150,
            inner_h_iters: 100,
            lambda_x: 1.0,
            lambda_h: 1.0,
            rho: RhoConfig::default(),
            objective_tol: 0.0,
            inner_tol: 1e-7,
            psf_support: None,
        }
    }
}

impl BdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.max_outer == 0 || self.inner_x_iters == 0 || self.inner_h_iters == 0 {
            return bad("iteration counts must be >= 1");
        }
        if !(self.lambda_x > 0.0 && self.lambda_h > 0.0) {
            return bad("proximal weights lambda_x and lambda_h must be > 0");
        }
        if !(self.objective_tol >= 0.0 && self.inner_tol >= 0.0) {
            return bad("tolerances must be >= 0");
        }
        if self.rho.gamma.is_nan() || self.rho.gamma <= 1.0 {
            return bad("rho gamma must be > 1");
        }
        if let Some(s) = self.psf_support {
            if s % 2 == 0 {
                return bad("psf_support must be odd");
            }
        }
        Ok(())
    }
}

/// Membership of the iterates in the constraint sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feasibility {
    pub x_nonneg: bool,
    pub grad_zero_on_omega: bool,
    pub h_on_simplex: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.x_nonneg && self.grad_zero_on_omega && self.h_on_simplex
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// `rho * TV(x) + 1/2 ||y - h * x||^2`
    pub value: f64,
    pub tv: f64,
    pub residual_norm: f64,
    pub feasibility: Feasibility,
}

/// Largest gradient magnitude over the pixels of `omega` (0 for an empty mask).
pub fn masked_gradient_max(x: &Image, omega: &RegionMask) -> f64 {
    let g = gradient(x);
    omega
        .inside()
        .iter()
        .enumerate()
        .filter(|(_, &inside)| inside)
        .fold(0.0, |m, (k, _)| m.max(g.gx[k].hypot(g.gy[k])))
}

/// Finite part of the objective plus constraint membership flags.
pub fn objective(x: &Image, h: &Psf, y: &Image, rho: f64, omega: &RegionMask) -> Result<Objective> {
    x.ensure_same_grid(y)?;
    h.ensure_same_grid(y)?;
    omega.ensure_grid(y.side())?;
    let hx = ConvOperator::new(h).apply(x)?;
    Ok(evaluate(x, &hx, h, y, rho, omega))
}

fn evaluate(
    x: &Image,
    hx: &Image,
    h: &Image,
    y: &Image,
    rho: f64,
    omega: &RegionMask,
) -> Objective {
    let residual_norm = y.sub(hx).norm();
    let tv = tv_norm(&gradient(x));
    let value = if rho == 0.0 {
        0.5 * residual_norm * residual_norm
    } else {
        rho * tv + 0.5 * residual_norm * residual_norm
    };
    Objective {
        value,
        tv,
        residual_norm,
        feasibility: Feasibility {
            x_nonneg: x.min() >= 0.0,
            grad_zero_on_omega: masked_gradient_max(x, omega) <= FEASIBILITY_TOL,
            h_on_simplex: (h.sum() - 1.0).abs() <= FEASIBILITY_TOL && h.min() >= -FEASIBILITY_TOL,
        },
    }
}

/// Dual variables of the x-subproblem, kept between outer iterations.
#[derive(Debug, Clone)]
struct DualState {
    p: GradientField,
    q: Vec<f64>,
}

impl DualState {
    fn zeros(n: usize) -> Self {
        Self {
            p: GradientField::zeros(n),
            q: vec![0.0; n * n],
        }
    }
}

struct XProblem<'a> {
    y: &'a Image,
    conv: &'a ConvOperator,
    rho: f64,
    omega: &'a RegionMask,
    groups: &'a ConstancyGroups,
    /// `(anchor, lambda_x)` for the proximal term, absent in the non-blind pass.
    anchor: Option<(&'a Image, f64)>,
    iters: usize,
    tol: f64,
}

/// Primal-dual iterations on `x` with dual blocks for `grad` (TV plus the
/// region constraint) and for the convolution (data fidelity).
fn primal_dual_x(prob: &XProblem<'_>, x_start: &Image, dual: &mut DualState) -> Image {
    let n = x_start.side();
    let h_norm = prob.conv.norm();
    let op_norm = (8.0 + h_norm * h_norm).sqrt();
    let mut tau = 0.99 / op_norm;
    let mut sigma = 0.99 / op_norm;
    // strong convexity from the proximal anchor allows step acceleration
    let gamma = prob.anchor.map_or(0.0, |(_, lambda)| 0.5 / lambda);

    let mut x = x_start.clone();
    let mut x_bar = x.clone();
    for _ in 0..prob.iters {
        // dual ascent on the gradient block via Moreau:
        // prox_{sF*}(z) = z - s prox_{F/s}(z / s)
        let gx = gradient(&x_bar);
        let z = GradientField::new(
            n,
            dual.p
                .gx
                .iter()
                .zip(&gx.gx)
                .map(|(p, g)| p + sigma * g)
                .collect(),
            dual.p
                .gy
                .iter()
                .zip(&gx.gy)
                .map(|(p, g)| p + sigma * g)
                .collect(),
        )
        .expect("matching sizes");
        let shrunk = prox_tv_region(&z.scale(1.0 / sigma), prob.rho / sigma, prob.omega)
            .expect("validated inputs");
        for k in 0..n * n {
            dual.p.gx[k] = z.gx[k] - sigma * shrunk.gx[k];
            dual.p.gy[k] = z.gy[k] - sigma * shrunk.gy[k];
        }

        // dual ascent on the fidelity block
        let hx = prob.conv.apply_raw(x_bar.data());
        let q_arg = Image::from_raw(
            n,
            dual.q.iter().zip(&hx).map(|(q, v)| q + sigma * v).collect(),
        );
        dual.q = prox_dual_fidelity(&q_arg, sigma, prob.y).into_data();

        // primal descent: K^T (p, q) = -div p + H^T q
        let div = crate::grid::divergence(&dual.p);
        let htq = prob.conv.adjoint_raw(&dual.q);
        let v = Image::from_raw(
            n,
            x.data()
                .iter()
                .zip(div.data())
                .zip(&htq)
                .map(|((x, d), t)| x - tau * (t - d))
                .collect(),
        );
        let x_new = match prob.anchor {
            Some((anchor, lambda)) if prob.groups.is_empty() => {
                prox_primal_x(&v, tau, anchor, lambda)
            }
            Some((anchor, lambda)) => {
                prox_primal_x_constrained(&v, tau, anchor, lambda, prob.groups)
            }
            None => prob.groups.project_nonneg(&v),
        };

        let theta = if gamma > 0.0 {
            let theta = 1.0 / (1.0 + 2.0 * gamma * tau).sqrt();
            tau *= theta;
            sigma /= theta;
            theta
        } else {
            1.0
        };
        let change = x_new.sub(&x).norm();
        let scale = x_new.norm().max(1e-300);
        x_bar = Image::from_raw(
            n,
            x_new
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| a + theta * (a - b))
                .collect(),
        );
        x = x_new;
        if change <= prob.tol * scale {
            break;
        }
    }
    x
}

/// One x-block update: approximately minimizes
/// `rho TV(x) + [grad x = 0 on omega] + 1/2 ||y - h*x||^2 + [x >= 0]
/// + ||x - x_prev||^2 / (2 lambda_x)`.
pub fn solve_x_step(
    y: &Image,
    h: &Psf,
    x_prev: &Image,
    rho: f64,
    omega: &RegionMask,
    cfg: &BdConfig,
) -> Result<Image> {
    y.ensure_same_grid(x_prev)?;
    y.ensure_same_grid(h)?;
    omega.ensure_grid(y.side())?;
    h.ensure_simplex(1e-6)?;
    let conv = ConvOperator::new(h);
    let groups = ConstancyGroups::from_mask(omega);
    let prob = XProblem {
        y,
        conv: &conv,
        rho,
        omega,
        groups: &groups,
        anchor: Some((x_prev, cfg.lambda_x)),
        iters: cfg.inner_x_iters,
        tol: cfg.inner_tol,
    };
    Ok(primal_dual_x(
        &prob,
        x_prev,
        &mut DualState::zeros(y.side()),
    ))
}

struct HProblem<'a> {
    y: &'a Image,
    conv_x: &'a ConvOperator,
    h_prev: &'a Image,
    lambda_h: f64,
    support: Option<&'a [bool]>,
    iters: usize,
    tol: f64,
}

impl HProblem<'_> {
    /// `1/2 ||y - x*h||^2 + ||h - h_prev||^2 / (2 lambda_h)`
    fn value(&self, h: &[f64]) -> f64 {
        let xh = self.conv_x.apply_raw(h);
        let r: f64 = xh
            .iter()
            .zip(self.y.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let a: f64 = h
            .iter()
            .zip(self.h_prev.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        0.5 * r + a / (2.0 * self.lambda_h)
    }

    fn grad(&self, h: &[f64]) -> Vec<f64> {
        let xh = self.conv_x.apply_raw(h);
        let r: Vec<f64> = xh.iter().zip(self.y.data()).map(|(a, b)| a - b).collect();
        let g = self.conv_x.adjoint_raw(&r);
        g.iter()
            .zip(h)
            .zip(self.h_prev.data())
            .map(|((g, h), p)| g + (h - p) / self.lambda_h)
            .collect()
    }

    fn project(&self, v: Vec<f64>) -> Vec<f64> {
        match self.support {
            None => project_simplex(&v).expect("finite, non-empty"),
            Some(mask) => {
                let idx: Vec<usize> = (0..v.len()).filter(|&k| mask[k]).collect();
                let sub: Vec<f64> = idx.iter().map(|&k| v[k]).collect();
                let w = project_simplex(&sub).expect("finite, non-empty");
                let mut out = vec![0.0; v.len()];
                for (&k, w) in idx.iter().zip(w) {
                    out[k] = w;
                }
                out
            }
        }
    }
}

/// Monotone FISTA over the simplex. The step uses the largest spectral
/// magnitude of `x` over non-constant frequencies: iterates stay on the
/// hyperplane `sum h = 1`, whose tangent space is exactly the span of those
/// frequencies.
fn accelerated_h(prob: &HProblem<'_>) -> Vec<f64> {
    let xn = prob.conv_x.norm_without_dc();
    let lip = xn * xn + 1.0 / prob.lambda_h;
    let step = 1.0 / lip;

    let mut h = prob.project(prob.h_prev.data().to_vec());
    let mut f_h = prob.value(&h);
    let mut w = h.clone();
    let mut t = 1.0f64;
    for _ in 0..prob.iters {
        let g = prob.grad(&w);
        let z = prob.project(w.iter().zip(&g).map(|(w, g)| w - step * g).collect());
        let f_z = prob.value(&z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let h_next = if f_z <= f_h { z.clone() } else { h.clone() };
        let f_next = f_h.min(f_z);
        w = (0..h.len())
            .map(|k| {
                h_next[k]
                    + (t / t_next) * (z[k] - h_next[k])
                    + ((t - 1.0) / t_next) * (h_next[k] - h[k])
            })
            .collect();
        let change: f64 = h_next
            .iter()
            .zip(&h)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = dot(&h_next, &h_next).sqrt().max(1e-300);
        h = h_next;
        f_h = f_next;
        t = t_next;
        if change <= prob.tol * scale && f_z >= f_h {
            break;
        }
    }
    h
}

/// One h-block update: approximately minimizes
/// `1/2 ||y - h*x||^2 + ||h - h_prev||^2 / (2 lambda_h)` over the simplex.
pub fn solve_h_step(y: &Image, x: &Image, h_prev: &Psf, cfg: &BdConfig) -> Result<Psf> {
    y.ensure_same_grid(x)?;
    y.ensure_same_grid(h_prev)?;
    if x.max_abs() == 0.0 {
        return Err(Error::DegenerateInput(
            "image estimate is identically zero; the PSF is unidentifiable".into(),
        ));
    }
    let support = cfg
        .psf_support
        .map(|s| support_window(y.side(), s))
        .transpose()?;
    let conv_x = ConvOperator::new(x);
    let prob = HProblem {
        y,
        conv_x: &conv_x,
        h_prev,
        lambda_h: cfg.lambda_h,
        support: support.as_deref(),
        iters: cfg.inner_h_iters,
        tol: cfg.inner_tol,
    };
    Ok(Psf::new(Image::from_raw(y.side(), accelerated_h(&prob))))
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Weight in force during this iteration.
    pub rho: f64,
    /// Objective at the start of the iteration, at `rho`.
    pub objective_start: f64,
    /// Objective after the x-update, at `rho`.
    pub objective_mid: f64,
    /// Objective at the end of the iteration, at `rho`.
    pub objective: f64,
    pub residual_norm: f64,
    pub tv: f64,
    pub feasibility: Feasibility,
    pub masked_gradient: f64,
    /// `sum x / sum y`
    pub photometry: f64,
    /// Whether the x-update was kept (it is rejected if it increases L).
    pub x_accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone)]
pub struct BdResult {
    pub x_b: Image,
    pub h_b: Psf,
    pub trace: SolveTrace,
    pub rho: f64,
    /// Residual target the weight schedule aimed at.
    pub epsilon: f64,
}

fn check_finite(img: &Image, iteration: usize, what: &str) -> Result<()> {
    if img.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            iteration,
            what: format!("non-finite values in {what}"),
        })
    }
}

fn photometry(x: &Image, y: &Image) -> f64 {
    let sy = y.sum();
    if sy == 0.0 {
        f64::NAN
    } else {
        x.sum() / sy
    }
}

/// Jointly estimates the image and the PSF from one observation.
pub fn blind_deconvolve(y: &Image, omega: &RegionMask, cfg: &BdConfig) -> Result<BdResult> {
    cfg.validate()?;
    omega.ensure_grid(y.side())?;
    check_finite(y, 0, "observation")?;
    let n = y.side();
    let fft = Fft2::new(n);
    let groups = ConstancyGroups::from_mask(omega);
    let support = cfg.psf_support.map(|s| support_window(n, s)).transpose()?;

    let mut schedule = cfg.rho.schedule(y)?;
    let mut x = groups.project_nonneg(y);
    let mut h = Psf::delta(n);
    let mut dual = DualState::zeros(n);
    let mut trace = SolveTrace::default();

    for iteration in 0..cfg.max_outer {
        let rho = schedule.rho;
        let conv_h = ConvOperator::with_plan(fft.clone(), &h);
        let start = evaluate(&x, &conv_h.apply(&x)?, &h, y, rho, omega);

        let prob = XProblem {
            y,
            conv: &conv_h,
            rho,
            omega,
            groups: &groups,
            anchor: Some((&x, cfg.lambda_x)),
            iters: cfg.inner_x_iters,
            tol: cfg.inner_tol,
        };
        let candidate = primal_dual_x(&prob, &x, &mut dual);
        check_finite(&candidate, iteration, "image estimate")?;
        let mid = evaluate(&candidate, &conv_h.apply(&candidate)?, &h, y, rho, omega);
        let x_accepted = mid.value <= start.value;
        let mid = if x_accepted {
            x = candidate;
            mid
        } else {
            start
        };

        if x.max_abs() == 0.0 {
            return Err(Error::Numerical {
                iteration,
                what: "image estimate collapsed to zero".into(),
            });
        }
        let conv_x = ConvOperator::with_plan(fft.clone(), &x);
        let hprob = HProblem {
            y,
            conv_x: &conv_x,
            h_prev: &h,
            lambda_h: cfg.lambda_h,
            support: support.as_deref(),
            iters: cfg.inner_h_iters,
            tol: cfg.inner_tol,
        };
        h = Psf::new(Image::from_raw(n, accelerated_h(&hprob)));
        check_finite(&h, iteration, "psf estimate")?;

        let end = evaluate(&x, &conv_x.apply(&h)?, &h, y, rho, omega);
        trace.rows.push(TraceRow {
            iteration,
            rho,
            objective_start: start.value,
            objective_mid: mid.value,
            objective: end.value,
            residual_norm: end.residual_norm,
            tv: end.tv,
            feasibility: end.feasibility,
            masked_gradient: masked_gradient_max(&x, omega),
            photometry: photometry(&x, y),
            x_accepted,
        });

        let decrease = (start.value - end.value) / start.value.abs().max(1e-300);
        if iteration > 0 && decrease < cfg.objective_tol {
            break;
        }
        if !cfg.rho.frozen {
            schedule = rho_update(schedule, end.residual_norm);
        }
    }

    Ok(BdResult {
        x_b: x,
        h_b: h,
        trace,
        rho: schedule.rho,
        epsilon: schedule.epsilon,
    })
}

/// Result of the non-blind pass.
#[derive(Debug, Clone)]
pub struct NbdResult {
    pub x: Image,
    pub trace: SolveTrace,
    pub rho: f64,
}

/// TV deconvolution with a fixed PSF, no region constraint and no proximal
/// anchor. The weight follows the same residual-balancing schedule, updated
/// after every block of `inner_x_iters` primal-dual steps.
pub fn nonblind_deconvolve(y: &Image, h: &Psf, cfg: &BdConfig) -> Result<NbdResult> {
    cfg.validate()?;
    y.ensure_same_grid(h)?;
    h.ensure_simplex(1e-6)?;
    check_finite(y, 0, "observation")?;
    let n = y.side();
    let omega = RegionMask::empty(n);
    let groups = ConstancyGroups::from_mask(&omega);
    let conv_h = ConvOperator::new(h);

    let mut schedule = cfg.rho.schedule(y)?;
    let mut x = crate::prox::project_nonneg(y);
    let mut dual = DualState::zeros(n);
    let mut trace = SolveTrace::default();

    for iteration in 0..cfg.max_outer {
        let rho = schedule.rho;
        let start = evaluate(&x, &conv_h.apply(&x)?, h, y, rho, &omega);
        let prob = XProblem {
            y,
            conv: &conv_h,
            rho,
            omega: &omega,
            groups: &groups,
            anchor: None,
            iters: cfg.inner_x_iters,
            tol: cfg.inner_tol,
        };
        x = primal_dual_x(&prob, &x, &mut dual);
        check_finite(&x, iteration, "image estimate")?;
        let end = evaluate(&x, &conv_h.apply(&x)?, h, y, rho, &omega);
        trace.rows.push(TraceRow {
            iteration,
            rho,
            objective_start: start.value,
            objective_mid: end.value,
            objective: end.value,
            residual_norm: end.residual_norm,
            tv: end.tv,
            feasibility: end.feasibility,
            masked_gradient: 0.0,
            photometry: photometry(&x, y),
            x_accepted: true,
        });
        let decrease = (start.value - end.value) / start.value.abs().max(1e-300);
        if iteration > 0 && decrease.abs() < cfg.objective_tol {
            break;
        }
        if !cfg.rho.frozen {
            schedule = rho_update(schedule, end.residual_norm);
        }
    }
    Ok(NbdResult {
        x,
        trace,
        rho: schedule.rho,
    })
}
