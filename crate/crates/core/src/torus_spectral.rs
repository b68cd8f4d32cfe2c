//! Principal eigenvalue of the tilted generator on the unit torus.
//!
//! For a tilt `λ` the operator
//!
//! ```text
//! A_λ v(x) = ∫ a(x-y) Λ(x,y) e^{λ·(y-x)} v(y) dy - G(x) v(x),   G(x) = ∫ a(x-y) Λ(x,y) dy
//! ```
//!
//! acts on periodic functions. It is discretized with the midpoint rule on
//! an `N^d` lattice; the integral over `R^d` folds into a periodized
//! difference kernel `P(δ) = Σ_m a(δ-m) e^{-λ·(δ-m)}` tabulated once per
//! tilt. Power iteration on the nonnegative matrix `A_λ + g_max` yields the
//! principal eigenvalue `θ(λ)` whenever it sits above the essential-spectrum
//! edge `-g_min`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::PeriodicField;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::kernel::{norm, JumpKernel};

/// Uniform periodic lattice `{i/N}^d` on `[0,1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidConfig(format!("grid needs N >= 4 (got {n})")));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidConfig(format!("grid dimension must be 1..=3 (got {dim})")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    /// Number of nodes `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        (self.n as f64).powi(-(self.dim as i32))
    }

    /// Multi-index of a flat node index; axis 0 varies fastest.
    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for slot in idx.iter_mut().take(self.dim) {
            *slot = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        (0..self.dim).map(|a| idx[a] as f64 / self.n as f64).collect()
    }

    /// Flat index of `(x - y) mod 1` on the difference lattice.
    fn diff_index(&self, x: &[usize; 3], y: &[usize; 3]) -> usize {
        let mut flat = 0;
        let mut stride = 1;
        for a in 0..self.dim {
            flat += ((x[a] + self.n - y[a]) % self.n) * stride;
            stride *= self.n;
        }
        flat
    }
}

/// Solver knobs; defaults follow the documented tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Relative tolerance on successive eigenvalue estimates.
    pub tol: f64,
    pub max_iter: usize,
    /// Absolute part of the membership margin above `-g_min`.
    pub margin_abs: f64,
    /// Multiplier of the eigen-residual in the membership margin.
    pub residual_factor: f64,
    /// Extra margin `edge_rel · g_max` absorbing the finite-grid lift of the
    /// essential-spectrum edge.
    pub edge_rel: f64,
    /// Maximal lattice images per axis in the periodization.
    pub max_images: usize,
    /// Largest matrix size for the dense eigenvalue fallback.
    pub dense_fallback_max: usize,
    /// Largest accepted condition estimate of the derivative solve.
    pub cond_limit: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 20_000,
            margin_abs: 1e-8,
            residual_factor: 10.0,
            edge_rel: 1e-3,
            max_images: 64,
            dense_fallback_max: 1024,
            cond_limit: 1e13,
        }
    }
}

/// Outcome of the eigenvalue solve at one tilt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralResult {
    pub lambda: Vec<f64>,
    /// `θ(λ)` inside the region, `-g_min` outside.
    pub theta: f64,
    /// Unclamped top eigenvalue of the discretized operator.
    pub theta_raw: f64,
    pub u: Vec<f64>,
    pub u_star: Vec<f64>,
    pub g_min: f64,
    pub g_max: f64,
    pub in_gamma: bool,
    /// `‖A u - θ u‖∞ / ‖u‖∞`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `"power"` or `"dense"`.
    pub method: String,
}

impl SpectralResult {
    /// Distance of `θ` above the membership threshold (negative outside).
    pub fn margin(&self, cfg: &SpectralConfig) -> f64 {
        self.theta_raw - membership_threshold(cfg, self.g_min, self.g_max, self.residual)
    }
}

fn membership_threshold(cfg: &SpectralConfig, g_min: f64, g_max: f64, residual: f64) -> f64 {
    -g_min + cfg.residual_factor * residual + cfg.margin_abs + cfg.edge_rel * g_max
}

/// Homogenized coefficients at zero tilt.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveCoefficients {
    /// Effective drift `b = -∇θ(0)`.
    pub b: Vec<f64>,
    /// Correctors `κ_i = ∂_{λ_i} u_λ |_{λ=0}` on the grid.
    pub kappa: Vec<Vec<f64>>,
    /// Effective diffusion matrix (row-major `d × d`).
    pub theta_matrix: Vec<Vec<f64>>,
    /// `∇∇θ(0)` for cross-checking `Θ + Θᵀ`.
    pub hessian: Vec<Vec<f64>>,
}

/// Gradient, Hessian and eigenvector derivatives at one tilt.
#[derive(Debug, Clone)]
pub struct ThetaDerivatives {
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    /// `∂_{λ_i} u` with `⟨w_i, u*⟩ = 0`.
    pub du: Vec<DVector<f64>>,
    pub condition: f64,
}

/// Discretized `A_λ = K - diag(G)`.
#[derive(Debug, Clone)]
pub struct SkewedOperator {
    grid: TorusGrid,
    lambda: Vec<f64>,
    k: DMatrix<f64>,
    g: DVector<f64>,
    g_min: f64,
    g_max: f64,
    /// `P^{(i)}/P` on the difference lattice, factors `(m-δ)_i`.
    first: Vec<Vec<f64>>,
    /// `P^{(ij)}/P` for `i ≤ j`, factors `(m-δ)_i (m-δ)_j`.
    second: Vec<Vec<f64>>,
    cfg: SpectralConfig,
}

impl SkewedOperator {
    pub fn assemble(
        grid: TorusGrid,
        kernel: &JumpKernel,
        field: &PeriodicField,
        lambda: &[f64],
        cfg: SpectralConfig,
    ) -> Result<Self> {
        let d = grid.dim();
        check_dim(d, kernel.dim())?;
        check_dim(d, field.dim())?;
        check_dim(d, lambda.len())?;
        check_finite("tilt", lambda)?;
        let radius = kernel.truncation_radius(norm(lambda));
        let images = radius.ceil() as usize + 1;
        if images > cfg.max_images {
            return Err(Error::CutoffOverflow {
                needed: images,
                limit: cfg.max_images,
            });
        }
        let nn = grid.len();
        let n = grid.points_per_axis();
        let h = 1.0 / n as f64;
        let n_pairs = d * (d + 1) / 2;

        // Periodized tables on the difference lattice.
        let mut p_tilt = vec![0.0; nn];
        let mut p_zero = vec![0.0; nn];
        let mut first = vec![vec![0.0; nn]; d];
        let mut second = vec![vec![0.0; nn]; n_pairs];
        let span = 2 * images + 1;
        let n_images = span.pow(d as u32);
        let mut z = vec![0.0; d];
        let mut shift = vec![0.0; d];
        for (k, pt) in p_tilt.iter_mut().enumerate() {
            let idx = grid.multi_index(k);
            let mut p0 = 0.0;
            let mut p1 = vec![0.0; d];
            let mut p2 = vec![0.0; n_pairs];
            for img in 0..n_images {
                let mut rem = img;
                for a in 0..d {
                    let m = (rem % span) as f64 - images as f64;
                    rem /= span;
                    // y_R - x = m - δ
                    shift[a] = m - idx[a] as f64 * h;
                    z[a] = -shift[a];
                }
                let a_val = kernel.eval(&z);
                if a_val == 0.0 {
                    continue;
                }
                let e = a_val * (crate::kernel::dot(lambda, &shift)).exp();
                p0 += a_val;
                *pt += e;
                let mut pair = 0;
                for i in 0..d {
                    p1[i] += e * shift[i];
                    for j in i..d {
                        p2[pair] += e * shift[i] * shift[j];
                        pair += 1;
                    }
                }
            }
            p_zero[k] = p0;
            if *pt > 0.0 {
                for i in 0..d {
                    first[i][k] = p1[i] / *pt;
                }
                for (q, v) in p2.iter().enumerate() {
                    second[q][k] = v / *pt;
                }
            }
        }

        let nodes: Vec<Vec<f64>> = (0..nn).map(|i| grid.node(i)).collect();
        let midx: Vec<[usize; 3]> = (0..nn).map(|i| grid.multi_index(i)).collect();
        let vol = grid.cell_volume();
        let mut kmat = DMatrix::zeros(nn, nn);
        let mut g = DVector::zeros(nn);
        for x in 0..nn {
            let mut gx = 0.0;
            for y in 0..nn {
                let lam = field.eval(&nodes[x], &nodes[y]);
                let dk = grid.diff_index(&midx[x], &midx[y]);
                kmat[(x, y)] = vol * lam * p_tilt[dk];
                gx += vol * lam * p_zero[dk];
            }
            g[x] = gx;
        }
        let g_min = g.min();
        let g_max = g.max();
        Ok(Self {
            grid,
            lambda: lambda.to_vec(),
            k: kmat,
            g,
            g_min,
            g_max,
            first,
            second,
            cfg,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// The nonnegative jump part `K`.
    pub fn jump_matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// The killing rate `G` on the grid.
    pub fn killing(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn g_min(&self) -> f64 {
        self.g_min
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.cfg
    }

    /// `A_λ v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.k * v - self.g.component_mul(v)
    }

    /// `K + diag(g_max - G)`, entrywise nonnegative.
    pub fn shifted_matrix(&self) -> DMatrix<f64> {
        let mut b = self.k.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += self.g_max - self.g[i];
        }
        b
    }

    /// The operator `D⁻¹ K D - diag(G)` with `D = diag(weights)`; similar to
    /// this one, so it has the same spectrum.
    pub fn conjugated(&self, weights: &[f64]) -> Result<Self> {
        check_dim(self.grid.len(), weights.len())?;
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidField("conjugation weights must be positive".into()));
        }
        let mut out = self.clone();
        for x in 0..weights.len() {
            for y in 0..weights.len() {
                out.k[(x, y)] *= weights[y] / weights[x];
            }
        }
        Ok(out)
    }

    /// `K^{(ratio)} v` where entries of `K` are reweighted by a
    /// difference-lattice table.
    fn weighted_apply(&self, table: &[f64], v: &DVector<f64>) -> DVector<f64> {
        let nn = self.grid.len();
        let midx: Vec<[usize; 3]> = (0..nn).map(|i| self.grid.multi_index(i)).collect();
        let mut out = DVector::zeros(nn);
        for x in 0..nn {
            let mut s = 0.0;
            for y in 0..nn {
                let kxy = self.k[(x, y)];
                if kxy != 0.0 {
                    s += kxy * table[self.grid.diff_index(&midx[x], &midx[y])] * v[y];
                }
            }
            out[x] = s;
        }
        out
    }

    fn second_table(&self, i: usize, j: usize) -> &[f64] {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let d = self.grid.dim();
        // index of (i, j) in the packed upper triangle
        let q = i * d - i * (i + 1) / 2 + j;
        &self.second[q]
    }

    pub fn principal_eig(&self) -> Result<SpectralResult> {
        let nn = self.grid.len();
        let b = self.shifted_matrix();
        let vol = self.grid.cell_volume();
        let cfg = &self.cfg;

        let fwd = power_iterate(&b, false, cfg.tol, cfg.max_iter);
        let iterations = fwd.iterations;
        let mut v = fwd.v;
        let mut vartheta = fwd.estimate;
        let mut method = "power";
        let mut converged = fwd.converged;
        let mut v_star = DVector::zeros(0);
        if converged {
            let bwd = power_iterate(&b, true, cfg.tol, cfg.max_iter);
            converged = bwd.converged;
            v_star = bwd.v;
        }
        if !converged {
            if nn > cfg.dense_fallback_max {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: residual(&b, &v, vartheta),
                });
            }
            vartheta = perron_root(&b, fwd.lower, fwd.upper);
            v = inverse_iterate(&b, vartheta, &v)?;
            let start = DVector::from_element(nn, 1.0);
            v_star = inverse_iterate(&b.transpose(), vartheta, &start)?;
            method = "dense";
            converged = true;
        }

        let res = residual(&b, &v, vartheta);
        let theta_raw = vartheta - self.g_max;
        let in_gamma = theta_raw > membership_threshold(cfg, self.g_min, self.g_max, res);

        let mass = vol * v.sum();
        let u = &v / mass;
        let pair = vol * u.dot(&v_star);
        let u_star = if pair != 0.0 { &v_star / pair } else { v_star };

        Ok(SpectralResult {
            lambda: self.lambda.clone(),
            theta: if in_gamma { theta_raw } else { -self.g_min },
            theta_raw,
            u: u.iter().copied().collect(),
            u_star: u_star.iter().copied().collect(),
            g_min: self.g_min,
            g_max: self.g_max,
            in_gamma,
            residual: res,
            iterations,
            converged,
            method: method.into(),
        })
    }

    fn require_inside(&self, result: &SpectralResult) -> Result<()> {
        if !result.in_gamma {
            return Err(Error::OutsideGamma);
        }
        if result.u.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: result.u.len(),
            });
        }
        Ok(())
    }

    /// `∂_{λ_i} θ = ∬ a Λ (y-x)_i e^{λ·(y-x)} u(y) u*(x)`.
    pub fn theta_grad(&self, result: &SpectralResult) -> Result<Vec<f64>> {
        self.require_inside(result)?;
        let u = DVector::from_column_slice(&result.u);
        let us = DVector::from_column_slice(&result.u_star);
        let vol = self.grid.cell_volume();
        Ok(self
            .first
            .iter()
            .map(|t| vol * us.dot(&self.weighted_apply(t, &u)))
            .collect())
    }

    /// Gradient, Hessian and `∂_λ u` from the bordered derivative solve.
    pub fn theta_derivatives(&self, result: &SpectralResult) -> Result<ThetaDerivatives> {
        self.require_inside(result)?;
        let d = self.grid.dim();
        let nn = self.grid.len();
        let vol = self.grid.cell_volume();
        let theta = result.theta;
        let u = DVector::from_column_slice(&result.u);
        let us = DVector::from_column_slice(&result.u_star);

        let ku: Vec<DVector<f64>> = self.first.iter().map(|t| self.weighted_apply(t, &u)).collect();
        let grad: Vec<f64> = ku.iter().map(|k| vol * us.dot(k)).collect();

        // [[A - θ, u], [h u*ᵀ, 0]] [w; μ] = [r; 0]
        let mut m = DMatrix::zeros(nn + 1, nn + 1);
        m.view_mut((0, 0), (nn, nn)).copy_from(&self.k);
        for i in 0..nn {
            m[(i, i)] -= self.g[i] + theta;
            m[(i, nn)] = u[i];
            m[(nn, i)] = vol * us[i];
        }
        let norm1 = one_norm(&m);
        let lu = m.lu();
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
        let mut inv_est: f64 = 0.0;
        for _ in 0..3 {
            let r = DVector::from_fn(nn + 1, |_, _| rng.random::<f64>() - 0.5);
            let s = lu
                .solve(&r)
                .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
            inv_est = inv_est.max(s.lp_norm(1) / r.lp_norm(1));
        }
        let condition = norm1 * inv_est;
        if !condition.is_finite() || condition > self.cfg.cond_limit {
            return Err(Error::IllConditioned { condition });
        }

        let mut du = Vec::with_capacity(d);
        for j in 0..d {
            let mut rhs = DVector::zeros(nn + 1);
            for x in 0..nn {
                rhs[x] = grad[j] * u[x] - ku[j][x];
            }
            let sol = lu
                .solve(&rhs)
                .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
            du.push(sol.rows(0, nn).into_owned());
        }

        let kw: Vec<Vec<DVector<f64>>> = self
            .first
            .iter()
            .map(|t| du.iter().map(|w| self.weighted_apply(t, w)).collect())
            .collect();
        let overlap: Vec<f64> = du.iter().map(|w| vol * w.dot(&us)).collect();
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let kij = self.weighted_apply(self.second_table(i, j), &u);
                let v = vol * (us.dot(&kij) + us.dot(&kw[i][j]) + us.dot(&kw[j][i]))
                    - grad[i] * overlap[j]
                    - grad[j] * overlap[i];
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok(ThetaDerivatives {
            grad,
            hess,
            du,
            condition,
        })
    }

    pub fn theta_hess(&self, result: &SpectralResult) -> Result<DMatrix<f64>> {
        Ok(self.theta_derivatives(result)?.hess)
    }

    /// Drift, correctors and effective diffusion; requires zero tilt.
    pub fn effective_coeffs(&self, result: &SpectralResult) -> Result<EffectiveCoefficients> {
        if self.lambda.iter().any(|&l| l != 0.0) {
            return Err(Error::InvalidConfig(
                "effective coefficients need the operator at zero tilt".into(),
            ));
        }
        let der = self.theta_derivatives(result)?;
        let d = self.grid.dim();
        let nn = self.grid.len();
        let vol = self.grid.cell_volume();
        let us = DVector::from_column_slice(&result.u_star);
        let one = DVector::from_element(nn, 1.0);
        let b: Vec<f64> = der.grad.iter().map(|g| -g).collect();
        let mut theta_matrix = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                let k2 = self.weighted_apply(self.second_table(i, j), &one);
                let k1 = self.weighted_apply(&self.first[i], &der.du[j]);
                theta_matrix[i][j] = 0.5 * vol * us.dot(&k2)
                    + vol * us.dot(&k1)
                    + b[i] * vol * der.du[j].dot(&us);
            }
        }
        Ok(EffectiveCoefficients {
            b,
            kappa: der.du.iter().map(|w| w.iter().copied().collect()).collect(),
            theta_matrix,
            hessian: (0..d)
                .map(|i| (0..d).map(|j| der.hess[(i, j)]).collect())
                .collect(),
        })
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

struct PowerOutcome {
    v: DVector<f64>,
    estimate: f64,
    iterations: usize,
    converged: bool,
    /// Collatz–Wielandt bounds `min/max (Bv)_i / v_i` from the last step.
    lower: f64,
    upper: f64,
}

/// Power iteration from the all-ones vector, normalized to unit sum. Stops
/// when successive estimates agree and the eigen-residual is small.
fn power_iterate(b: &DMatrix<f64>, transpose: bool, tol: f64, max_iter: usize) -> PowerOutcome {
    let n = b.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut next = DVector::zeros(n);
    let mut prev = f64::NAN;
    let mut lower = 0.0;
    let mut upper = f64::INFINITY;
    for it in 1..=max_iter {
        if transpose {
            b.tr_mul_to(&v, &mut next);
        } else {
            b.mul_to(&v, &mut next);
        }
        // v has unit sum, so the sum of Bv is the eigenvalue estimate
        let est = next.sum();
        if !(est > 0.0) || !est.is_finite() {
            return PowerOutcome {
                v,
                estimate: est,
                iterations: it,
                converged: false,
                lower,
                upper,
            };
        }
        lower = f64::INFINITY;
        upper = 0.0;
        let mut res: f64 = 0.0;
        for i in 0..n {
            if v[i] > 0.0 {
                let q = next[i] / v[i];
                lower = lower.min(q);
                upper = upper.max(q);
            }
            res = res.max((next[i] - est * v[i]).abs());
        }
        let scale = est.abs().max(1.0);
        let rel_res = res / v.amax();
        std::mem::swap(&mut v, &mut next);
        v /= est;
        if (est - prev).abs() <= tol * scale && rel_res <= 1e3 * tol * scale {
            return PowerOutcome {
                v,
                estimate: est,
                iterations: it,
                converged: true,
                lower,
                upper,
            };
        }
        prev = est;
    }
    PowerOutcome {
        v,
        estimate: prev,
        iterations: max_iter,
        converged: false,
        lower,
        upper,
    }
}

/// Whether `s I - B` is a nonsingular M-matrix, i.e. `s > ρ(B)`, decided by
/// elimination without pivoting (all pivots positive).
fn exceeds_perron_root(b: &DMatrix<f64>, s: f64) -> bool {
    let n = b.nrows();
    let mut m = -b.clone();
    for i in 0..n {
        m[(i, i)] += s;
    }
    for k in 0..n {
        let pivot = m[(k, k)];
        if !(pivot > 0.0) {
            return false;
        }
        for i in (k + 1)..n {
            let f = m[(i, k)] / pivot;
            if f != 0.0 {
                for j in (k + 1)..n {
                    m[(i, j)] -= f * m[(k, j)];
                }
            }
        }
    }
    true
}

/// Perron root of a nonnegative matrix by bisection between bounds.
fn perron_root(b: &DMatrix<f64>, mut lo: f64, mut hi: f64) -> f64 {
    let rows: Vec<f64> = b.row_iter().map(|r| r.sum()).collect();
    lo = lo.max(rows.iter().copied().fold(f64::INFINITY, f64::min));
    hi = hi.min(rows.iter().copied().fold(0.0, f64::max));
    if hi < lo {
        std::mem::swap(&mut lo, &mut hi);
    }
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if exceeds_perron_root(b, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A few steps of shifted inverse iteration near `target`.
fn inverse_iterate(b: &DMatrix<f64>, target: f64, start: &DVector<f64>) -> Result<DVector<f64>> {
    let n = b.nrows();
    let sigma = target + 1e-10 * target.abs().max(1.0);
    let mut m = b.clone();
    for i in 0..n {
        m[(i, i)] -= sigma;
    }
    let lu = m.lu();
    let mut v = start.map(|x| x.abs() + 1e-300);
    for _ in 0..4 {
        let next = lu.solve(&v).ok_or(Error::NonConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        let s = next.sum();
        if s == 0.0 || !s.is_finite() {
            break;
        }
        v = next / s;
    }
    Ok(v)
}

fn residual(b: &DMatrix<f64>, v: &DVector<f64>, vartheta: f64) -> f64 {
    let r = b * v - v * vartheta;
    let vmax = v.amax();
    if vmax == 0.0 {
        f64::INFINITY
    } else {
        r.amax() / vmax
    }
}

/// Assembles and solves in one call.
pub fn solve(
    grid: TorusGrid,
    kernel: &JumpKernel,
    field: &PeriodicField,
    lambda: &[f64],
    cfg: SpectralConfig,
) -> Result<(SkewedOperator, SpectralResult)> {
    let op = SkewedOperator::assemble(grid, kernel, field, lambda, cfg)?;
    let res = op.principal_eig()?;
    Ok((op, res))
}

/// Central second differences of `θ`, the cross-check for the Hessian.
pub fn theta_hess_fd(
    grid: TorusGrid,
    kernel: &JumpKernel,
    field: &PeriodicField,
    lambda: &[f64],
    cfg: SpectralConfig,
    step: f64,
) -> Result<DMatrix<f64>> {
    let d = lambda.len();
    let theta = |l: &[f64]| -> Result<f64> { Ok(solve(grid, kernel, field, l, cfg)?.1.theta) };
    let at = |di: &[(usize, f64)]| {
        let mut l = lambda.to_vec();
        for &(i, s) in di {
            l[i] += s;
        }
        l
    };
    let f0 = theta(lambda)?;
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = theta(&at(&[(i, step)]))?;
        let fm = theta(&at(&[(i, -step)]))?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (step * step);
        for j in (i + 1)..d {
            let fpp = theta(&at(&[(i, step), (j, step)]))?;
            let fpm = theta(&at(&[(i, step), (j, -step)]))?;
            let fmp = theta(&at(&[(i, -step), (j, step)]))?;
            let fmm = theta(&at(&[(i, -step), (j, -step)]))?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Content-addressed on-disk store of spectral results.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    dir: PathBuf,
}

impl SpectralCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    /// Hex digest of (kernel, field, grid, tilt rounded to 1e-12).
    pub fn key(kernel: &JumpKernel, field: &PeriodicField, grid: TorusGrid, lambda: &[f64]) -> String {
        let mut h = Sha256::new();
        h.update(kernel.descriptor().as_bytes());
        h.update(b"|");
        h.update(field.descriptor().as_bytes());
        h.update(format!("|d={},N={}|", grid.dim(), grid.points_per_axis()).as_bytes());
        for l in lambda {
            let r = (l * 1e12).round() as i64;
            h.update(format!("{r};").as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<SpectralResult>> {
        let p = self.path(key);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(p)?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn store(&self, key: &str, result: &SpectralResult) -> Result<()> {
        static WRITES: AtomicUsize = AtomicUsize::new(0);
        let n = WRITES.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!("{key}.{}.{n}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_string(result)?)?;
        fs::rename(tmp, self.path(key))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{TrigPolynomial, TrigTerm};
    use std::sync::Arc;

    fn cosine_field() -> PeriodicField {
        let f = TrigPolynomial::new(
            1,
            1.5,
            vec![TrigTerm {
                amplitude: 0.5,
                freq_xi: vec![1],
                freq_eta: vec![-1],
                phase: 0.0,
            }],
        )
        .unwrap();
        PeriodicField::new(1, Arc::new(f), 1.0, 2.0)
    }

    fn skew_field() -> PeriodicField {
        let f = TrigPolynomial::new(
            1,
            1.0,
            vec![
                TrigTerm {
                    amplitude: 0.3,
                    freq_xi: vec![1],
                    freq_eta: vec![0],
                    phase: 0.0,
                },
                TrigTerm {
                    amplitude: 0.2,
                    freq_xi: vec![0],
                    freq_eta: vec![1],
                    phase: 0.7,
                },
            ],
        )
        .unwrap();
        PeriodicField::new(1, Arc::new(f), 0.5, 1.5)
    }

    #[test]
    fn grid_rejects_small_n() {
        assert!(TorusGrid::new(1, 3).is_err());
        assert!(TorusGrid::new(4, 8).is_err());
        let g = TorusGrid::new(2, 4).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.node(5), vec![0.25, 0.25]);
    }

    #[test]
    fn constant_field_rows_sum_to_one() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let op = SkewedOperator::assemble(
            grid,
            &k,
            &PeriodicField::constant(1, 1.0),
            &[0.0],
            SpectralConfig::default(),
        )
        .unwrap();
        for i in 0..16 {
            assert!((op.jump_matrix().row(i).sum() - 1.0).abs() < 1e-8);
            assert!((op.killing()[i] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn killing_rate_matches_direct_quadrature() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let field = cosine_field();
        let op = SkewedOperator::assemble(grid, &k, &field, &[0.0], SpectralConfig::default())
            .unwrap();
        // G(x) = ∫ a(x-y)(1.5 + 0.5cos 2π(x-y)) dy = 1.5 + 0.5 e^{-2π²}
        let want = 1.5 + 0.5 * (-2.0 * std::f64::consts::PI.powi(2)).exp();
        for i in 0..8 {
            assert!((op.killing()[i] - want).abs() < 1e-8, "{}", op.killing()[i]);
        }
    }

    #[test]
    fn theta_vanishes_at_zero_tilt() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let (_, res) = solve(grid, &k, &skew_field(), &[0.0], SpectralConfig::default()).unwrap();
        assert!(res.theta.abs() < 1e-10);
        assert!(res.u.iter().all(|u| (u - 1.0).abs() < 1e-8));
        assert!(res.in_gamma);
    }

    #[test]
    fn outside_region_refuses_gradient() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let (op, mut res) =
            solve(grid, &k, &skew_field(), &[0.5], SpectralConfig::default()).unwrap();
        res.in_gamma = false;
        assert!(matches!(op.theta_grad(&res), Err(Error::OutsideGamma)));
    }

    #[test]
    fn cutoff_overflow_for_huge_tilt() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let cfg = SpectralConfig {
            max_images: 4,
            ..Default::default()
        };
        let err = SkewedOperator::assemble(grid, &k, &skew_field(), &[30.0], cfg).unwrap_err();
        assert!(matches!(err, Error::CutoffOverflow { .. }));
    }

    #[test]
    fn conjugation_preserves_theta() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let op = SkewedOperator::assemble(grid, &k, &skew_field(), &[0.8], SpectralConfig::default())
            .unwrap();
        let w: Vec<f64> = (0..16).map(|i| 1.0 + 0.5 * (i as f64 * 0.4).sin()).collect();
        let a = op.principal_eig().unwrap().theta;
        let b = op.conjugated(&w).unwrap().principal_eig().unwrap().theta;
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn shifted_matrix_is_positivity_preserving() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let op = SkewedOperator::assemble(grid, &k, &skew_field(), &[-1.3], SpectralConfig::default())
            .unwrap();
        let b = op.shifted_matrix();
        assert!(b.iter().all(|&v| v >= 0.0));
        let v = DVector::from_fn(16, |i, _| 0.1 + i as f64);
        assert!((b * v).iter().all(|&x| x > 0.0));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectralCache::new(dir.path()).unwrap();
        let grid = TorusGrid::new(1, 8).unwrap();
        let k = JumpKernel::gaussian(1).unwrap();
        let field = skew_field();
        let key = SpectralCache::key(&k, &field, grid, &[0.25]);
        assert!(cache.load(&key).unwrap().is_none());
        let (_, res) = solve(grid, &k, &field, &[0.25], SpectralConfig::default()).unwrap();
        cache.store(&key, &res).unwrap();
        let back = cache.load(&key).unwrap().unwrap();
        assert_eq!(back.theta, res.theta);
        assert_ne!(key, SpectralCache::key(&k, &field, grid, &[0.25 + 1e-9]));
    }
}
