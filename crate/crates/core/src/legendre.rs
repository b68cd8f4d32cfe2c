//! Legendre transform `L(ζ) = sup_λ (λ·ζ - H(λ))` of a convex Hamiltonian.
//!
//! The concave objective is maximized by damped Newton while iterates stay
//! in the eigenvalue region. When trial steps keep leaving it (the maximizer
//! sits on the region boundary, where `H` meets its flat branch) the search
//! falls back to golden section in one dimension and to the ellipsoid
//! method with subgradients otherwise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::hamiltonian::ConvexHamiltonian;
use crate::kernel::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LegendreConfig {
    /// Stop when `|ζ - ∇H(λ)| <` this.
    pub grad_tol: f64,
    /// Bracket width for the one-dimensional fallback.
    pub bracket_tol: f64,
    pub max_newton: usize,
    pub max_fallback: usize,
    /// Smallest Hessian eigenvalue for an exposed point.
    pub exposed_eig: f64,
    /// Radius beyond which the search gives up.
    pub max_radius: f64,
}

impl Default for LegendreConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            bracket_tol: 1e-10,
            max_newton: 200,
            max_fallback: 4000,
            exposed_eig: 1e-6,
            max_radius: 1e6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LagrangianValue {
    pub value: f64,
    pub argmax_lambda: Vec<f64>,
    /// Maximizer strictly inside the region with a nondegenerate Hessian.
    pub exposed: bool,
    /// Maximizer on the region boundary.
    pub on_linear_segment: bool,
    pub iterations: usize,
    /// `"newton"`, `"golden"` or `"ellipsoid"`.
    pub method: &'static str,
}

fn objective(h: &dyn ConvexHamiltonian, zeta: &[f64], lambda: &[f64]) -> Result<(f64, bool)> {
    let v = h.value(lambda)?;
    Ok((dot(lambda, zeta) - v.value, v.in_gamma))
}

/// Radius `R` with `H(Rφ) ≥ R|ζ| + 1` on a set of probe directions, so the
/// maximizer lies in the ball of radius `R`.
pub fn search_radius(h: &dyn ConvexHamiltonian, zeta: &[f64], cfg: &LegendreConfig) -> Result<f64> {
    let d = h.dim();
    let mut dirs = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            dirs.push(e);
        }
    }
    if d > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1e9e);
        for _ in 0..8 * d {
            let v: Vec<f64> = (0..d)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            let n = norm(&v);
            dirs.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let zn = norm(zeta);
    let mut r: f64 = 1.0;
    'grow: loop {
        if r > cfg.max_radius {
            return Err(Error::SearchRadiusOverflow { radius: cfg.max_radius });
        }
        for dir in &dirs {
            let lam: Vec<f64> = dir.iter().map(|x| r * x).collect();
            if h.value(&lam)?.value < r * zn + 1.0 {
                r *= 2.0;
                continue 'grow;
            }
        }
        return Ok(r);
    }
}

/// `L(ζ)` with its maximizer and classification.
pub fn lagrangian(
    h: &dyn ConvexHamiltonian,
    zeta: &[f64],
    cfg: &LegendreConfig,
) -> Result<LagrangianValue> {
    let d = h.dim();
    check_dim(d, zeta.len())?;
    check_finite("velocity", zeta)?;
    let radius = search_radius(h, zeta, cfg)?;

    let mut lambda = vec![0.0; d];
    let (mut g, _) = objective(h, zeta, &lambda)?;
    let mut iterations = 0;
    while iterations < cfg.max_newton {
        iterations += 1;
        let grad_h = h.grad(&lambda)?;
        let resid: Vec<f64> = zeta.iter().zip(&grad_h).map(|(z, g)| z - g).collect();
        if norm(&resid) < cfg.grad_tol {
            return classify(h, zeta, lambda, g, iterations, "newton", cfg);
        }
        let hess = h.hess(&lambda)?;
        let step = newton_step(&hess, &resid);
        let mut step_norm = norm(&step);
        let mut scale = 1.0;
        if step_norm > radius {
            scale = radius / step_norm;
            step_norm = radius;
        }
        let slope = dot(&resid, &step) * scale;
        let mut t = 1.0;
        let mut accepted = false;
        let mut left_region = false;
        while t * step_norm > 1e-14 * (1.0 + norm(&lambda)) {
            let trial: Vec<f64> = lambda
                .iter()
                .zip(&step)
                .map(|(l, s)| l + t * scale * s)
                .collect();
            let (gt, inside) = objective(h, zeta, &trial)?;
            if inside && gt >= g + 1e-4 * t * slope {
                lambda = trial;
                g = gt;
                accepted = true;
                break;
            }
            left_region |= !inside;
            t *= 0.5;
        }
        if !accepted {
            // Without a region exit the objective is flat to rounding here;
            // otherwise the maximizer is on the region boundary.
            if !left_region {
                return classify(h, zeta, lambda, g, iterations, "newton", cfg);
            }
            break;
        }
    }
    if d == 1 {
        golden(h, zeta, radius, iterations, cfg)
    } else {
        ellipsoid(h, zeta, radius, lambda, g, iterations, cfg)
    }
}

fn newton_step(hess: &DMatrix<f64>, resid: &[f64]) -> Vec<f64> {
    let d = resid.len();
    let r = DVector::from_column_slice(resid);
    let mut shift = 0.0;
    for _ in 0..30 {
        let m = hess + DMatrix::identity(d, d) * shift;
        if let Some(ch) = m.cholesky() {
            return ch.solve(&r).iter().copied().collect();
        }
        shift = if shift == 0.0 { 1e-10 * (1.0 + hess.amax()) } else { shift * 10.0 };
    }
    resid.to_vec()
}

fn classify(
    h: &dyn ConvexHamiltonian,
    zeta: &[f64],
    lambda: Vec<f64>,
    g: f64,
    iterations: usize,
    method: &'static str,
    cfg: &LegendreConfig,
) -> Result<LagrangianValue> {
    let inside = h.value(&lambda)?.in_gamma;
    let mut exposed = false;
    let mut on_boundary = !inside;
    if inside {
        let stationary = match h.grad(&lambda) {
            Ok(gr) => {
                let r: Vec<f64> = zeta.iter().zip(&gr).map(|(z, g)| z - g).collect();
                norm(&r) < 1e3 * cfg.grad_tol
            }
            Err(_) => false,
        };
        if stationary {
            if let Ok(hess) = h.hess(&lambda) {
                exposed = hess.symmetric_eigenvalues().min() > cfg.exposed_eig;
            }
        } else {
            on_boundary = true;
        }
    }
    Ok(LagrangianValue {
        value: g.max(0.0),
        argmax_lambda: lambda,
        exposed,
        on_linear_segment: on_boundary,
        iterations,
        method,
    })
}

fn golden(
    h: &dyn ConvexHamiltonian,
    zeta: &[f64],
    radius: f64,
    iterations: usize,
    cfg: &LegendreConfig,
) -> Result<LagrangianValue> {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |x: f64| objective(h, zeta, &[x]).map(|v| v.0);
    let (mut a, mut b) = (-radius, radius);
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let mut fc = f(c)?;
    let mut fe = f(e)?;
    let mut it = iterations;
    while b - a > cfg.bracket_tol && it < iterations + cfg.max_fallback {
        it += 1;
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = f(e)?;
        }
    }
    let x = 0.5 * (a + b);
    let gx = f(x)?;
    // The origin always gives zero; keep the better point.
    let (x, gx) = if gx >= 0.0 { (x, gx) } else { (0.0, f(0.0)?) };
    let mut out = classify(h, zeta, vec![x], gx, it, "golden", cfg)?;
    out.method = "golden";
    Ok(out)
}

fn ellipsoid(
    h: &dyn ConvexHamiltonian,
    zeta: &[f64],
    radius: f64,
    start: Vec<f64>,
    start_value: f64,
    iterations: usize,
    cfg: &LegendreConfig,
) -> Result<LagrangianValue> {
    let d = zeta.len();
    let df = d as f64;
    let mut center = DVector::zeros(d);
    let mut p = DMatrix::identity(d, d) * (radius * radius);
    let mut best = (start, start_value);
    let mut it = iterations;
    while it < iterations + cfg.max_fallback {
        it += 1;
        let c: Vec<f64> = center.iter().copied().collect();
        let v = h.value(&c)?;
        let g = dot(&c, zeta) - v.value;
        if g > best.1 {
            best = (c.clone(), g);
        }
        // subgradient of -g
        let grad_h = if v.in_gamma { h.grad(&c)? } else { vec![0.0; d] };
        let s = DVector::from_iterator(d, grad_h.iter().zip(zeta).map(|(gh, z)| gh - z));
        let ps = &p * &s;
        let width = s.dot(&ps);
        if !(width > 0.0) || width.sqrt() < 1e-12 {
            break;
        }
        let gt = &ps / width.sqrt();
        center -= &gt / (df + 1.0);
        p = (&p - (&gt * gt.transpose()) * (2.0 / (df + 1.0))) * (df * df / (df * df - 1.0));
    }
    let mut out = classify(h, zeta, best.0, best.1, it, "ellipsoid", cfg)?;
    out.method = "ellipsoid";
    Ok(out)
}

/// `L_t(ζ) = t · L(ζ/t)`.
pub fn l_t(h: &dyn ConvexHamiltonian, zeta: &[f64], t: f64, cfg: &LegendreConfig) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidConfig(format!("time must be positive (got {t})")));
    }
    let scaled: Vec<f64> = zeta.iter().map(|z| z / t).collect();
    Ok(t * lagrangian(h, &scaled, cfg)?.value)
}

/// Large- and small-velocity asymptotics of the Lagrangian along a ray.
#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Exponent of `ln r` with the power of `r` fixed at one.
    pub log_exponent: f64,
    /// Exponent of `r` from a free three-parameter fit.
    pub power: f64,
    /// Exponent of `ln r` from the free fit.
    pub free_log_exponent: f64,
    pub expected_log_exponent: f64,
    /// Mean of `L(rφ) / (r (ln r)^{(p-1)/p})` over the largest radii.
    pub plateau: f64,
    pub expected_plateau: f64,
    /// `L(ζ* + s φ)` against `½ (sφ)ᵀ Σ⁻¹ (sφ)` with `Σ = ∇∇H(0)`.
    pub small_step: f64,
    pub small_value: f64,
    pub small_quadratic: f64,
    pub small_rel_error: f64,
}

/// Fits the tail of `L` along direction `phi` for a kernel whose envelope
/// decays like `exp(-k |z|^p)`.
pub fn tail_diagnostic(
    h: &dyn ConvexHamiltonian,
    phi: &[f64],
    radii: &[f64],
    k: f64,
    p: f64,
    cfg: &LegendreConfig,
) -> Result<TailReport> {
    let d = h.dim();
    check_dim(d, phi.len())?;
    let n = norm(phi);
    let phi: Vec<f64> = phi.iter().map(|x| x / n).collect();
    let zero = vec![0.0; d];
    let zeta_star = h.grad(&zero)?;
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let z: Vec<f64> = zeta_star.iter().zip(&phi).map(|(s, f)| s + r * f).collect();
        values.push(lagrangian(h, &z, cfg)?.value);
    }
    let lnr: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let lnlnr: Vec<f64> = lnr.iter().map(|l| l.ln()).collect();
    let lnl: Vec<f64> = values.iter().map(|v| v.ln()).collect();

    // ln L - ln r = c + β ln ln r
    let y: Vec<f64> = lnl.iter().zip(&lnr).map(|(a, b)| a - b).collect();
    let fixed = least_squares(&[vec![1.0; radii.len()], lnlnr.clone()], &y);
    let free = least_squares(&[vec![1.0; radii.len()], lnr.clone(), lnlnr.clone()], &lnl);

    let q = (p - 1.0) / p;
    let tail_count = (radii.len() / 4).max(1);
    let plateau = radii
        .iter()
        .zip(&values)
        .rev()
        .take(tail_count)
        .map(|(r, v)| v / (r * r.ln().powf(q)))
        .sum::<f64>()
        / tail_count as f64;
    let expected_plateau = p / (p - 1.0) * (k * (p - 1.0)).powf(1.0 / p);

    let s = 0.05;
    let z: Vec<f64> = zeta_star.iter().zip(&phi).map(|(a, f)| a + s * f).collect();
    let small_value = lagrangian(h, &z, cfg)?.value;
    let sigma = h.hess(&zero)?;
    let step = DVector::from_iterator(d, phi.iter().map(|f| s * f));
    let small_quadratic = match sigma.clone().cholesky() {
        Some(ch) => 0.5 * step.dot(&ch.solve(&step)),
        None => f64::NAN,
    };
    Ok(TailReport {
        radii: radii.to_vec(),
        values,
        log_exponent: fixed[1],
        power: free[1],
        free_log_exponent: free[2],
        expected_log_exponent: q,
        plateau,
        expected_plateau,
        small_step: s,
        small_value,
        small_quadratic,
        small_rel_error: (small_value - small_quadratic).abs() / small_quadratic,
    })
}

/// Ordinary least squares `y ≈ Σ β_j x_j` via normal equations.
fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let m = columns.len();
    let n = y.len();
    let x = DMatrix::from_fn(n, m, |i, j| columns[j][i]);
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * yv;
    xtx.lu()
        .solve(&xty)
        .map(|b| b.iter().copied().collect())
        .unwrap_or_else(|| vec![f64::NAN; m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HValue;

    /// `½|λ|²`, whose transform is `½|ζ|²`.
    struct Quadratic(usize);

    impl ConvexHamiltonian for Quadratic {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, l: &[f64]) -> Result<HValue> {
            Ok(HValue {
                value: 0.5 * dot(l, l),
                in_gamma: true,
            })
        }
        fn grad(&self, l: &[f64]) -> Result<Vec<f64>> {
            Ok(l.to_vec())
        }
        fn hess(&self, _l: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(self.0, self.0))
        }
    }

    /// `max(½|λ - c|² - ½|c|², -f)`: convex with a flat branch around `c`.
    struct Flat {
        c: Vec<f64>,
        floor: f64,
    }

    impl Flat {
        fn raw(&self, l: &[f64]) -> f64 {
            let diff: Vec<f64> = l.iter().zip(&self.c).map(|(a, b)| a - b).collect();
            0.5 * dot(&diff, &diff) - 0.5 * dot(&self.c, &self.c)
        }
    }

    impl ConvexHamiltonian for Flat {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn value(&self, l: &[f64]) -> Result<HValue> {
            let v = self.raw(l);
            Ok(if v > -self.floor {
                HValue { value: v, in_gamma: true }
            } else {
                HValue { value: -self.floor, in_gamma: false }
            })
        }
        fn grad(&self, l: &[f64]) -> Result<Vec<f64>> {
            if self.raw(l) <= -self.floor {
                return Err(Error::OutsideGamma);
            }
            Ok(l.iter().zip(&self.c).map(|(a, b)| a - b).collect())
        }
        fn hess(&self, _l: &[f64]) -> Result<DMatrix<f64>> {
            let d = self.c.len();
            Ok(DMatrix::identity(d, d))
        }
        fn flat_level(&self) -> Option<f64> {
            Some(-self.floor)
        }
    }

    #[test]
    fn quadratic_transform() {
        let h = Quadratic(2);
        let l = lagrangian(&h, &[0.3, -1.2], &LegendreConfig::default()).unwrap();
        assert!((l.value - 0.5 * (0.09 + 1.44)).abs() < 1e-12);
        assert!(l.exposed && !l.on_linear_segment);
    }

    #[test]
    fn flat_branch_in_one_dimension() {
        // θ = ½(λ-2)² - 2 > -1 except on (2-√2, 2+√2)
        let h = Flat {
            c: vec![2.0],
            floor: 1.0,
        };
        let cfg = LegendreConfig::default();
        // for small ζ > 0 the maximizer is the right end 2+√2 of the flat
        // interval, where g(λ) = λζ + 1
        let ub = 2.0 + 2f64.sqrt();
        for z in [0.1, 0.3, 0.5] {
            let l = lagrangian(&h, &[z], &cfg).unwrap();
            assert!(l.on_linear_segment, "ζ={z}: {l:?}");
            assert!((l.value - (ub * z + 1.0)).abs() < 1e-8, "ζ={z}: {}", l.value);
        }
        // stationary point λ = -1 lies outside the flat interval
        let l = lagrangian(&h, &[-3.0], &cfg).unwrap();
        assert!(l.exposed);
        assert!((l.value - 0.5).abs() < 1e-10);
    }

    #[test]
    fn flat_branch_in_two_dimensions() {
        let h = Flat {
            c: vec![2.0, 0.0],
            floor: 1.0,
        };
        let cfg = LegendreConfig::default();
        let ub = 2.0 + 2f64.sqrt();
        let l = lagrangian(&h, &[0.2, 0.0], &cfg).unwrap();
        assert!(l.on_linear_segment);
        assert!((l.value - (ub * 0.2 + 1.0)).abs() < 1e-6, "{l:?}");
    }

    #[test]
    fn time_scaling_identity() {
        let h = Quadratic(1);
        let cfg = LegendreConfig::default();
        let v = l_t(&h, &[2.0], 4.0, &cfg).unwrap();
        assert!((v - 4.0 * 0.5 * 0.25).abs() < 1e-12);
        assert!(l_t(&h, &[1.0], 0.0, &cfg).is_err());
    }

    #[test]
    fn least_squares_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 + 3.0 * x).collect();
        let b = least_squares(&[vec![1.0; 10], x], &y);
        assert!((b[0] - 2.0).abs() < 1e-10 && (b[1] - 3.0).abs() < 1e-10);
    }
}
