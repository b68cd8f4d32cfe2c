//! The jump-size density `a(z)`.
//!
//! A [`JumpKernel`] is a normalized, nonnegative density on `R^d` dominated by
//! a super-exponential envelope `C exp(-k |z|^p)` with `p > 1`. Three families
//! are supported: the generalized Gaussian `c exp(-k |z|^p)`, the unit box
//! `1_{[-1/2,1/2]^d}`, and a one-dimensional tabulated profile with a
//! user-supplied envelope.
//!
//! Integrals are computed with composite Gauss–Legendre rules on the support
//! (truncated where the tilted envelope is negligible), refined by panel
//! doubling until two levels agree.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::quadrature::{for_each_tensor_node, AxisRule};

/// Upper bound `C exp(-k |z|^p)` on the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c: f64,
    pub k: f64,
    pub p: f64,
}

impl Envelope {
    pub fn eval(&self, r: f64) -> f64 {
        self.c * (-self.k * r.powf(self.p)).exp()
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.k > 0.0 && self.p > 1.0)
            || !self.c.is_finite()
            || !self.k.is_finite()
            || !self.p.is_finite()
        {
            return Err(Error::InvalidKernel(format!(
                "envelope needs C > 0, k > 0, p > 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Piecewise-linear profile on a strictly increasing grid, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedProfile {
    z: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedProfile {
    pub fn new(z: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if z.len() != values.len() || z.len() < 2 {
            return Err(Error::InvalidKernel(
                "table needs at least two (z, value) rows".into(),
            ));
        }
        check_finite("table z", &z)?;
        check_finite("table values", &values)?;
        if z.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidKernel("table z-grid must be strictly increasing".into()));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidKernel("table values must be nonnegative".into()));
        }
        Ok(Self { z, values })
    }

    /// Parses whitespace-separated `z value` rows; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut z = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::InvalidKernel(format!(
                    "table line {}: expected two columns",
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| {
                    Error::InvalidKernel(format!("table line {}: {e}", lineno + 1))
                })
            };
            z.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        Self::new(z, values)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.z
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn interpolate(&self, x: f64) -> f64 {
        let (z, v) = (&self.z, &self.values);
        if x < z[0] || x > z[z.len() - 1] {
            return 0.0;
        }
        let i = z.partition_point(|&zi| zi <= x).clamp(1, z.len() - 1);
        let t = (x - z[i - 1]) / (z[i] - z[i - 1]);
        v[i - 1] + t * (v[i] - v[i - 1])
    }

    fn raw_mass(&self) -> f64 {
        crate::quadrature::trapezoid(&self.z, &self.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// `c exp(-k |z|^p)`; `k = 1/2, p = 2` is the standard Gaussian.
    GeneralizedGaussian { k: f64, p: f64 },
    /// Indicator of the unit cube `[-1/2, 1/2]^d`.
    Box,
    /// One-dimensional piecewise-linear table.
    Tabulated(TabulatedProfile),
}

/// Accuracy knobs for kernel integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Relative agreement required between two refinement levels.
    pub rel_tol: f64,
    /// The tilted envelope beyond the truncation radius stays below this
    /// fraction of the integrand peak.
    pub tail_tol: f64,
    /// Gauss–Legendre nodes per panel.
    pub order: usize,
    /// Maximal panel count per axis interval.
    pub max_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            tail_tol: 1e-15,
            order: 8,
            max_panels: 512,
        }
    }
}

/// `M(λ)`, `∇M(λ)` and the Hessian of `M(λ) = ∫ a(z) e^{-λ·z} dz`.
#[derive(Debug, Clone)]
pub struct ExpMoments {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MomentOrder {
    Value,
    Gradient,
    Hessian,
}

/// Outcome of the kernel invariant suite.
#[derive(Debug, Clone, Serialize)]
pub struct KernelValidation {
    pub mass: f64,
    pub mass_ok: bool,
    pub max_envelope_ratio: f64,
    pub envelope_ok: bool,
    /// Minimal half-space mass over the sphere mesh (certificate for `C_0`).
    pub c0: f64,
    pub c0_direction: Vec<f64>,
    pub c0_ok: bool,
}

impl KernelValidation {
    pub fn passed(&self) -> bool {
        self.mass_ok && self.envelope_ok && self.c0_ok
    }
}

#[derive(Debug, Clone)]
pub struct JumpKernel {
    dim: usize,
    family: KernelFamily,
    envelope: Envelope,
    norm_const: f64,
    quad: QuadratureConfig,
    max_rejection_attempts: usize,
}

impl JumpKernel {
    pub fn generalized_gaussian(dim: usize, k: f64, p: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be positive".into()));
        }
        if !(k > 0.0 && k.is_finite() && p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "generalized Gaussian needs k > 0 and p > 1 (got k={k}, p={p})"
            )));
        }
        let d = dim as f64;
        // ∫ exp(-k|z|^p) dz = |S^{d-1}| Γ(d/p) / (p k^{d/p}),  |S^{d-1}| = 2π^{d/2}/Γ(d/2)
        let ln_mass = (2.0f64).ln() + 0.5 * d * PI.ln() - ln_gamma(0.5 * d) + ln_gamma(d / p)
            - p.ln()
            - (d / p) * k.ln();
        let norm_const = (-ln_mass).exp();
        Ok(Self {
            dim,
            family: KernelFamily::GeneralizedGaussian { k, p },
            envelope: Envelope { c: norm_const, k, p },
            norm_const,
            quad: QuadratureConfig::default(),
            max_rejection_attempts: 10_000,
        })
    }

    /// Standard Gaussian density in `R^d`.
    pub fn gaussian(dim: usize) -> Result<Self> {
        Self::generalized_gaussian(dim, 0.5, 2.0)
    }

    /// Indicator of the unit cube; the envelope `e^{d/4} e^{-|z|^2}` dominates it.
    pub fn unit_box(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            family: KernelFamily::Box,
            envelope: Envelope {
                c: (dim as f64 / 4.0).exp(),
                k: 1.0,
                p: 2.0,
            },
            norm_const: 1.0,
            quad: QuadratureConfig::default(),
            max_rejection_attempts: 10_000,
        })
    }

    /// One-dimensional tabulated kernel, normalized to unit mass. The envelope
    /// must dominate the normalized table at every node.
    pub fn tabulated(profile: TabulatedProfile, envelope: Envelope) -> Result<Self> {
        envelope.validate()?;
        let mass = profile.raw_mass();
        if !(mass > 0.0) {
            return Err(Error::InvalidKernel("table has zero mass".into()));
        }
        let norm_const = 1.0 / mass;
        for (&z, &v) in profile.z.iter().zip(&profile.values) {
            let bound = envelope.eval(z.abs());
            if norm_const * v > bound * (1.0 + 1e-12) {
                return Err(Error::InvalidKernel(format!(
                    "normalized table value {} at z={z} exceeds envelope {bound}",
                    norm_const * v
                )));
            }
        }
        Ok(Self {
            dim: 1,
            family: KernelFamily::Tabulated(profile),
            envelope,
            norm_const,
            quad: QuadratureConfig::default(),
            max_rejection_attempts: 10_000,
        })
    }

    pub fn with_quadrature(mut self, quad: QuadratureConfig) -> Self {
        self.quad = quad;
        self
    }

    pub fn with_max_rejection_attempts(mut self, attempts: usize) -> Self {
        self.max_rejection_attempts = attempts.max(1);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn envelope(&self) -> Envelope {
        self.envelope
    }

    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    /// Stable text identifying the kernel, used in cache keys.
    pub fn descriptor(&self) -> String {
        match &self.family {
            KernelFamily::GeneralizedGaussian { k, p } => {
                format!("gg(d={},k={k:e},p={p:e})", self.dim)
            }
            KernelFamily::Box => format!("box(d={})", self.dim),
            KernelFamily::Tabulated(t) => {
                let mut s = String::from("tab(");
                for (z, v) in t.z.iter().zip(&t.values) {
                    s.push_str(&format!("{z:e}:{v:e};"));
                }
                s.push(')');
                s
            }
        }
    }

    /// `a(z)`. Box faces carry the midpoint value so that lattice
    /// periodizations of the box sum to one.
    pub fn eval(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        match &self.family {
            KernelFamily::GeneralizedGaussian { k, p } => {
                self.norm_const * (-k * norm(z).powf(*p)).exp()
            }
            KernelFamily::Box => {
                let mut v = 1.0;
                for &zi in z {
                    let a = zi.abs();
                    if a > 0.5 {
                        return 0.0;
                    } else if a == 0.5 {
                        v *= 0.5;
                    }
                }
                v
            }
            KernelFamily::Tabulated(t) => self.norm_const * t.interpolate(z[0]),
        }
    }

    /// Smallest radius beyond which `C e^{-k r^p} e^{|λ| r}` (times polynomial
    /// factors) is negligible relative to its peak.
    pub fn truncation_radius(&self, tilt_norm: f64) -> f64 {
        match &self.family {
            KernelFamily::Box => 0.5 * (self.dim as f64).sqrt(),
            KernelFamily::Tabulated(t) => t.z[0].abs().max(t.z[t.z.len() - 1].abs()),
            KernelFamily::GeneralizedGaussian { k, p } => {
                let (k, p) = (*k, *p);
                let d = self.dim as f64;
                let log_env = |r: f64| -k * r.powf(p) + tilt_norm * r + (d + 2.0) * (1.0 + r).ln();
                let r_peak = (tilt_norm / (k * p)).powf(1.0 / (p - 1.0));
                let target = log_env(r_peak).max(0.0) + self.quad.tail_tol.ln();
                let mut hi = r_peak.max(1.0);
                while log_env(hi) > target {
                    hi *= 2.0;
                }
                let mut lo = r_peak;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if log_env(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }

    fn axis_breaks(&self, radius: f64) -> Vec<f64> {
        match &self.family {
            KernelFamily::GeneralizedGaussian { p, .. } => {
                if p.fract() == 0.0 && (*p as i64) % 2 == 0 {
                    vec![-radius, 0.0, radius]
                } else {
                    // |z|^p is not smooth at the origin: grade panels towards it
                    let mut b: Vec<f64> = (0..=14).map(|j| -radius * 0.5f64.powi(j)).collect();
                    b.push(0.0);
                    b.extend((0..=14).rev().map(|j| radius * 0.5f64.powi(j)));
                    b
                }
            }
            KernelFamily::Box => vec![-0.5, 0.0, 0.5],
            KernelFamily::Tabulated(t) => t.z.clone(),
        }
    }

    /// Integrand value used inside quadrature. On compact supports the
    /// smooth extension is used so that panel nodes never see the jump.
    fn quad_eval(&self, z: &[f64]) -> f64 {
        match &self.family {
            KernelFamily::Box => 1.0,
            _ => self.eval(z),
        }
    }

    /// One-dimensional factor of a kernel that is a product over axes.
    fn axis_factor(&self) -> Option<JumpKernel> {
        if self.dim == 1 {
            return None;
        }
        let factor = match &self.family {
            KernelFamily::GeneralizedGaussian { k, p } if *p == 2.0 => {
                Self::generalized_gaussian(1, *k, 2.0).ok()?
            }
            KernelFamily::Box => Self::unit_box(1).ok()?,
            _ => return None,
        };
        Some(factor.with_quadrature(self.quad))
    }

    fn product_moments(&self, factor: &JumpKernel, lambda: &[f64], order: MomentOrder) -> Result<ExpMoments> {
        let d = self.dim;
        let axes: Vec<ExpMoments> = lambda
            .iter()
            .map(|&l| factor.moments(&[l], order))
            .collect::<Result<_>>()?;
        // product of the zeroth moments over all axes except those listed
        let rest = |skip: &[usize]| -> f64 {
            (0..d)
                .filter(|i| !skip.contains(i))
                .map(|i| axes[i].value)
                .product()
        };
        let value = rest(&[]);
        let grad = if order == MomentOrder::Value {
            Vec::new()
        } else {
            (0..d).map(|i| axes[i].grad[0] * rest(&[i])).collect()
        };
        let hess = if order == MomentOrder::Hessian {
            DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    axes[i].hess[(0, 0)] * rest(&[i])
                } else {
                    axes[i].grad[0] * axes[j].grad[0] * rest(&[i, j])
                }
            })
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(ExpMoments { value, grad, hess })
    }

    fn moments(&self, lambda: &[f64], order: MomentOrder) -> Result<ExpMoments> {
        check_dim(self.dim, lambda.len())?;
        check_finite("tilt", lambda)?;
        if let Some(factor) = self.axis_factor() {
            return self.product_moments(&factor, lambda, order);
        }
        let d = self.dim;
        let radius = self.truncation_radius(norm(lambda));
        let breaks = self.axis_breaks(radius);
        let n_comp = match order {
            MomentOrder::Value => 1,
            MomentOrder::Gradient => 1 + d,
            MomentOrder::Hessian => 1 + d + d * d,
        };
        let max_panels = match d {
            1 => self.quad.max_panels,
            2 => (self.quad.max_panels / 8).max(4),
            _ => 8,
        };
        let integrate = |panels: usize| -> Vec<f64> {
            let axis = AxisRule::composite(&breaks, panels, self.quad.order);
            let axes = vec![axis; d];
            let mut acc = vec![0.0; n_comp];
            for_each_tensor_node(&axes, |z, w| {
                let a = self.quad_eval(z);
                if a == 0.0 {
                    return;
                }
                let e = w * a * (-dot(lambda, z)).exp();
                acc[0] += e;
                if order != MomentOrder::Value {
                    for i in 0..d {
                        acc[1 + i] -= e * z[i];
                    }
                }
                if order == MomentOrder::Hessian {
                    for i in 0..d {
                        for j in 0..d {
                            acc[1 + d + i * d + j] += e * z[i] * z[j];
                        }
                    }
                }
            });
            acc
        };
        let mut panels = 2;
        let mut prev = integrate(panels);
        let sums = loop {
            let next_panels = panels * 2;
            let next = integrate(next_panels);
            let scale = next[0].abs();
            let converged = prev
                .iter()
                .zip(&next)
                .all(|(a, b)| (a - b).abs() <= self.quad.rel_tol * (b.abs() + scale));
            if converged || next_panels >= max_panels {
                break next;
            }
            panels = next_panels;
            prev = next;
        };
        let value = sums[0];
        let grad = if order == MomentOrder::Value {
            Vec::new()
        } else {
            sums[1..=d].to_vec()
        };
        let hess = if order == MomentOrder::Hessian {
            DMatrix::from_row_slice(d, d, &sums[1 + d..])
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(ExpMoments { value, grad, hess })
    }

    /// `M(λ) = ∫ a(z) e^{-λ·z} dz`.
    pub fn exp_moment(&self, lambda: &[f64]) -> Result<f64> {
        Ok(self.moments(lambda, MomentOrder::Value)?.value)
    }

    /// `∇M(λ) = ∫ a(z) (-z) e^{-λ·z} dz`.
    pub fn exp_moment_grad(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        Ok(self.moments(lambda, MomentOrder::Gradient)?.grad)
    }

    /// Hessian `∫ a(z) z zᵀ e^{-λ·z} dz`.
    pub fn exp_moment_hess(&self, lambda: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.moments(lambda, MomentOrder::Hessian)?.hess)
    }

    /// Value, gradient and Hessian from one quadrature pass.
    pub fn exp_moments(&self, lambda: &[f64]) -> Result<ExpMoments> {
        self.moments(lambda, MomentOrder::Hessian)
    }

    /// First moment `∫ a(z) z dz`.
    pub fn mean(&self) -> Result<Vec<f64>> {
        let g = self.exp_moment_grad(&vec![0.0; self.dim])?;
        Ok(g.into_iter().map(|v| -v).collect())
    }

    /// Second-moment matrix `∫ a(z) z zᵀ dz`.
    pub fn second_moment(&self) -> Result<DMatrix<f64>> {
        self.exp_moment_hess(&vec![0.0; self.dim])
    }

    /// `∫_{z·α > 0} a(z) dz`.
    pub fn halfspace_mass(&self, alpha: &[f64]) -> Result<f64> {
        check_dim(self.dim, alpha.len())?;
        check_finite("direction", alpha)?;
        let n = norm(alpha);
        if n == 0.0 {
            return Err(Error::InvalidKernel("half-space direction must be nonzero".into()));
        }
        let alpha: Vec<f64> = alpha.iter().map(|v| v / n).collect();
        let d = self.dim;
        let basis = orthonormal_basis(&alpha);
        let radius = self.truncation_radius(0.0);
        let aligned = basis.is_permutation;
        let full_breaks: Vec<f64> = if aligned {
            self.axis_breaks(radius)
        } else {
            vec![-radius, 0.0, radius]
        };
        let half_breaks: Vec<f64> = {
            let mut b: Vec<f64> = full_breaks.iter().copied().filter(|&x| x > 0.0).collect();
            b.insert(0, 0.0);
            if b.len() < 2 {
                b.push(radius.max(1e-12));
            }
            b
        };
        let max_panels = match d {
            1 => self.quad.max_panels,
            2 => (self.quad.max_panels / 8).max(4),
            _ => 8,
        };
        let mut z = vec![0.0; d];
        let mut integrate = |panels: usize| -> f64 {
            let mut axes = Vec::with_capacity(d);
            axes.push(AxisRule::composite(&half_breaks, panels, self.quad.order));
            for _ in 1..d {
                axes.push(AxisRule::composite(&full_breaks, panels, self.quad.order));
            }
            let mut acc = 0.0;
            for_each_tensor_node(&axes, |s, w| {
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi = (0..d).map(|j| basis.columns[j][i] * s[j]).sum();
                }
                let a = if aligned { self.quad_eval(&z) } else { self.eval(&z) };
                acc += w * a;
            });
            acc
        };
        let mut panels = 2;
        let mut prev = integrate(panels);
        loop {
            panels *= 2;
            let next = integrate(panels);
            if (next - prev).abs() <= 10.0 * self.quad.rel_tol || panels >= max_panels {
                return Ok(next);
            }
            prev = next;
        }
    }

    /// Directions used for the `C_0` certificate: `±e_i` plus `100·d`
    /// pseudo-random unit vectors (fixed seed).
    pub fn sphere_mesh(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut dirs = Vec::new();
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut e = vec![0.0; d];
                e[i] = sign;
                dirs.push(e);
            }
        }
        if d > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x005e_edc0);
            for _ in 0..100 * d {
                dirs.push(random_unit(&mut rng, d));
            }
        }
        dirs
    }

    /// Runs the invariant suite: unit mass, envelope domination on a grid,
    /// and the half-space certificate over [`Self::sphere_mesh`].
    pub fn validate(&self) -> Result<KernelValidation> {
        let mass = self.exp_moment(&vec![0.0; self.dim])?;
        let mass_ok = (mass - 1.0).abs() < 1e-8;
        let max_envelope_ratio = self.max_envelope_ratio();
        let envelope_ok = max_envelope_ratio <= 1.0 + 1e-12;
        let mut c0 = f64::INFINITY;
        let mut c0_direction = Vec::new();
        for dir in self.sphere_mesh() {
            let m = self.halfspace_mass(&dir)?;
            if m < c0 {
                c0 = m;
                c0_direction = dir;
            }
        }
        Ok(KernelValidation {
            mass,
            mass_ok,
            max_envelope_ratio,
            envelope_ok,
            c0,
            c0_direction,
            c0_ok: c0 > 0.0,
        })
    }

    /// `max a(z) / (C e^{-k|z|^p})` over a grid covering the support;
    /// grid points are a.e. checks, so box faces are skipped.
    pub fn max_envelope_ratio(&self) -> f64 {
        let radius = self.truncation_radius(0.0);
        let per_axis = match self.dim {
            1 => 4001,
            2 => 201,
            _ => 31,
        };
        let mut worst: f64 = 0.0;
        let mut check = |z: &[f64]| {
            let a = self.eval(z);
            if a > 0.0 {
                let r = a / self.envelope.eval(norm(z));
                worst = worst.max(r);
            }
        };
        if let KernelFamily::Tabulated(t) = &self.family {
            for &z in &t.z {
                check(&[z]);
            }
        }
        let axis: Vec<f64> = (0..per_axis)
            .map(|i| -radius + 2.0 * radius * (i as f64 + 0.5) / per_axis as f64)
            .collect();
        let mut idx = vec![0usize; self.dim];
        let mut z = vec![0.0; self.dim];
        'outer: loop {
            for (zi, &i) in z.iter_mut().zip(&idx) {
                *zi = axis[i];
            }
            check(&z);
            for a in (0..self.dim).rev() {
                idx[a] += 1;
                if idx[a] < per_axis {
                    continue 'outer;
                }
                idx[a] = 0;
            }
            break;
        }
        worst
    }

    /// Draws `z ~ a` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.dim);
        match &self.family {
            KernelFamily::GeneralizedGaussian { k, p } => {
                sample_generalized_gaussian(rng, *k, *p, out);
                Ok(())
            }
            KernelFamily::Box => {
                for v in out.iter_mut() {
                    *v = rng.random::<f64>() - 0.5;
                }
                Ok(())
            }
            KernelFamily::Tabulated(_) => {
                let env = self.envelope;
                for _ in 0..self.max_rejection_attempts {
                    sample_generalized_gaussian(rng, env.k, env.p, out);
                    let bound = env.eval(norm(out));
                    if rng.random::<f64>() * bound < self.eval(out) {
                        return Ok(());
                    }
                }
                Err(Error::SamplerExhausted {
                    attempts: self.max_rejection_attempts,
                })
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.dim];
        self.sample_into(rng, &mut z)?;
        Ok(z)
    }
}

/// Sampler for the exponentially tilted law `a(z) e^{-λ·z} / M(λ)`, or for a
/// proposal close to it, together with the log likelihood ratio
/// `ln(a(z) / (M(λ) q(z)))` of each draw against the proposal density `q`.
#[derive(Debug, Clone)]
pub struct TiltedSampler {
    tilt: Vec<f64>,
    mass: f64,
    kind: TiltedKind,
}

#[derive(Debug, Clone)]
enum TiltedKind {
    Plain(Box<JumpKernel>),
    ShiftedGaussian { mean: Vec<f64>, sd: f64 },
    Box,
    Histogram(Box<HistogramProposal>),
}

impl TiltedSampler {
    pub fn new(kernel: &JumpKernel, tilt: &[f64]) -> Result<Self> {
        check_dim(kernel.dim, tilt.len())?;
        check_finite("tilt", tilt)?;
        if tilt.iter().all(|&v| v == 0.0) {
            return Ok(Self {
                tilt: tilt.to_vec(),
                mass: 1.0,
                kind: TiltedKind::Plain(Box::new(kernel.clone())),
            });
        }
        let mass = kernel.exp_moment(tilt)?;
        let kind = match kernel.family() {
            KernelFamily::GeneralizedGaussian { k, p } if *p == 2.0 => {
                // e^{-k|z|^2 - λ·z} ∝ e^{-k|z + λ/(2k)|^2}
                TiltedKind::ShiftedGaussian {
                    mean: tilt.iter().map(|l| -l / (2.0 * k)).collect(),
                    sd: (1.0 / (2.0 * k)).sqrt(),
                }
            }
            KernelFamily::Box => TiltedKind::Box,
            _ => TiltedKind::Histogram(Box::new(HistogramProposal::new(kernel, tilt)?)),
        };
        Ok(Self {
            tilt: tilt.to_vec(),
            mass,
            kind,
        })
    }

    /// `M(λ)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn tilt(&self) -> &[f64] {
        &self.tilt
    }

    pub fn is_tilted(&self) -> bool {
        !matches!(self.kind, TiltedKind::Plain(_))
    }

    /// Draws into `out` and returns the per-draw log likelihood ratio.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<f64> {
        match &self.kind {
            TiltedKind::Plain(kernel) => {
                kernel.sample_into(rng, out)?;
                Ok(0.0)
            }
            TiltedKind::ShiftedGaussian { mean, sd } => {
                for (v, m) in out.iter_mut().zip(mean) {
                    let n: f64 = rng.sample(StandardNormal);
                    *v = m + sd * n;
                }
                Ok(dot(&self.tilt, out))
            }
            TiltedKind::Box => {
                for (v, &l) in out.iter_mut().zip(&self.tilt) {
                    *v = sample_tilted_unit_interval(rng, l);
                }
                Ok(dot(&self.tilt, out))
            }
            TiltedKind::Histogram(h) => Ok(h.sample_into(rng, out) - self.mass.ln()),
        }
    }
}

/// Piecewise-constant proposal on a tensor grid covering the truncated
/// support; its density is known exactly, so likelihood ratios stay exact.
#[derive(Debug, Clone)]
struct HistogramProposal {
    kernel: JumpKernel,
    lo: f64,
    width: f64,
    cells: usize,
    cumulative: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl HistogramProposal {
    fn new(kernel: &JumpKernel, tilt: &[f64]) -> Result<Self> {
        let d = kernel.dim;
        if d > 2 {
            return Err(Error::InvalidKernel(
                "tilted sampling of this family is limited to d <= 2".into(),
            ));
        }
        let (lo, hi) = match kernel.family() {
            KernelFamily::Tabulated(t) => (t.z[0], t.z[t.z.len() - 1]),
            _ => {
                let r = kernel.truncation_radius(norm(tilt));
                (-r, r)
            }
        };
        let cells: usize = if d == 1 { 1 << 14 } else { 400 };
        let width = (hi - lo) / cells as f64;
        let total_cells = cells.pow(d as u32);
        let mut weights = Vec::with_capacity(total_cells);
        let mut z = vec![0.0; d];
        let probes: &[f64] = &[0.0, 0.5, 1.0];
        for c in 0..total_cells {
            let mut idx = [0usize; 2];
            let mut rem = c;
            for a in (0..d).rev() {
                idx[a] = rem % cells;
                rem /= cells;
            }
            let mut best: f64 = 0.0;
            let mut probe = |z: &[f64]| {
                let v = kernel.eval(z) * (-dot(tilt, z)).exp();
                best = best.max(v);
            };
            if d == 1 {
                for &t in probes {
                    z[0] = lo + (idx[0] as f64 + t) * width;
                    probe(&z);
                }
                if let KernelFamily::Tabulated(t) = kernel.family() {
                    let a = lo + idx[0] as f64 * width;
                    for &node in t.z.iter().filter(|&&n| n > a && n < a + width) {
                        probe(&[node]);
                    }
                }
            } else {
                for &t0 in probes {
                    for &t1 in probes {
                        z[0] = lo + (idx[0] as f64 + t0) * width;
                        z[1] = lo + (idx[1] as f64 + t1) * width;
                        probe(&z);
                    }
                }
            }
            weights.push(best * 1.000_001);
        }
        let mut cumulative = Vec::with_capacity(total_cells);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            kernel: kernel.clone(),
            lo,
            width,
            cells,
            cumulative,
            weights,
            total: acc,
        })
    }

    /// Returns `ln a(z) - ln q(z)`.
    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> f64 {
        let u = rng.random::<f64>() * self.total;
        let c = self.cumulative.partition_point(|&c| c <= u).min(self.weights.len() - 1);
        let mut rem = c;
        for a in (0..out.len()).rev() {
            let i = rem % self.cells;
            rem /= self.cells;
            out[a] = self.lo + (i as f64 + rng.random::<f64>()) * self.width;
        }
        let cell_volume = self.width.powi(out.len() as i32);
        let q = self.weights[c] / (self.total * cell_volume);
        self.kernel.eval(out).ln() - q.ln()
    }
}

fn sample_generalized_gaussian<R: Rng + ?Sized>(rng: &mut R, k: f64, p: f64, out: &mut [f64]) {
    let d = out.len();
    // |z|^p ~ Gamma(d/p, rate k)
    let gamma = Gamma::new(d as f64 / p, 1.0 / k).expect("valid gamma parameters");
    let s: f64 = gamma.sample(rng);
    let r = s.powf(1.0 / p);
    if d == 1 {
        out[0] = if rng.random::<bool>() { r } else { -r };
        return;
    }
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            n2 += *v * *v;
        }
        if n2 > 0.0 {
            let scale = r / n2.sqrt();
            for v in out.iter_mut() {
                *v *= scale;
            }
            return;
        }
    }
}

/// Inverse transform for the density `∝ e^{-l z}` on `[-1/2, 1/2]`.
fn sample_tilted_unit_interval<R: Rng + ?Sized>(rng: &mut R, l: f64) -> f64 {
    let u: f64 = rng.random();
    if l.abs() < 1e-10 {
        return u - 0.5;
    }
    // F(z) = (e^{l/2} - e^{-l z}) / (e^{l/2} - e^{-l/2})
    let a = 0.5 * l;
    let span = -(-2.0 * a).exp_m1(); // 1 - e^{-l}
    -(a + (-(u * span)).ln_1p()) / l
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

struct Basis {
    /// Column vectors; the first is the requested direction.
    columns: Vec<Vec<f64>>,
    is_permutation: bool,
}

fn orthonormal_basis(alpha: &[f64]) -> Basis {
    let d = alpha.len();
    let nonzero: Vec<usize> = (0..d).filter(|&i| alpha[i] != 0.0).collect();
    if nonzero.len() == 1 {
        let j = nonzero[0];
        let mut columns = Vec::with_capacity(d);
        let mut first = vec![0.0; d];
        first[j] = alpha[j].signum();
        columns.push(first);
        for i in (0..d).filter(|&i| i != j) {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            columns.push(e);
        }
        return Basis {
            columns,
            is_permutation: true,
        };
    }
    let mut columns = vec![alpha.to_vec()];
    for i in 0..d {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        for c in &columns {
            let proj = dot(&v, c);
            for (vk, ck) in v.iter_mut().zip(c) {
                *vk -= proj * ck;
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            columns.push(v.into_iter().map(|x| x / n).collect());
        }
        if columns.len() == d {
            break;
        }
    }
    Basis {
        columns,
        is_permutation: false,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
