//! The Hamiltonian `H(λ)` (or `H(x, λ)`) behind one interface.
//!
//! Constant and slow environments use the closed form
//! `Λ · (∫ a(z) e^{-λ·z} dz - 1)`; periodic and locally periodic ones use the
//! principal eigenvalue of the tilted operator with the slow variable frozen,
//! clamped to the flat level `-g_min` outside the eigenvalue region.

use std::collections::HashMap;
use std::sync::RwLock;

use nalgebra::DMatrix;

use crate::environment::{PeriodicField, RateField, Regime};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::kernel::JumpKernel;
use crate::torus_spectral::{SkewedOperator, SpectralCache, SpectralConfig, TorusGrid};

/// Value of a Hamiltonian together with the branch it lies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub value: f64,
    /// `false` on the flat branch `H = -g_min`.
    pub in_gamma: bool,
}

/// Convex, superlinear function of the tilt with an optional flat branch.
/// Gradients and Hessians are only defined where `in_gamma` holds.
pub trait ConvexHamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, lambda: &[f64]) -> Result<HValue>;
    fn grad(&self, lambda: &[f64]) -> Result<Vec<f64>>;
    fn hess(&self, lambda: &[f64]) -> Result<DMatrix<f64>>;
    /// Level of the flat branch, if the Hamiltonian may have one.
    fn flat_level(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone)]
enum Backing {
    ClosedForm {
        rate: f64,
    },
    Spectral {
        grid: TorusGrid,
        field: PeriodicField,
        cfg: SpectralConfig,
        cache: Option<SpectralCache>,
    },
}

#[derive(Debug, Clone, Default)]
struct Entry {
    value: Option<HValue>,
    g_min: Option<f64>,
    grad: Option<Vec<f64>>,
    hess: Option<DMatrix<f64>>,
}

#[derive(Debug)]
pub struct Hamiltonian {
    kernel: JumpKernel,
    backing: Backing,
    memo: RwLock<HashMap<Vec<u64>, Entry>>,
}

impl Clone for Hamiltonian {
    fn clone(&self) -> Self {
        Self {
            kernel: self.kernel.clone(),
            backing: self.backing.clone(),
            memo: RwLock::new(self.memo.read().map(|m| m.clone()).unwrap_or_default()),
        }
    }
}

fn memo_key(lambda: &[f64]) -> Vec<u64> {
    lambda.iter().map(|l| ((l * 1e12).round() + 0.0).to_bits()).collect()
}

impl Hamiltonian {
    /// `Λ · (M(λ) - 1)`.
    pub fn closed_form(kernel: JumpKernel, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidField(format!("rate must be positive (got {rate})")));
        }
        Ok(Self {
            kernel,
            backing: Backing::ClosedForm { rate },
            memo: RwLock::new(HashMap::new()),
        })
    }

    /// Principal eigenvalue of the tilted operator for a periodic field.
    pub fn spectral(
        kernel: JumpKernel,
        grid: TorusGrid,
        field: PeriodicField,
        cfg: SpectralConfig,
    ) -> Result<Self> {
        check_dim(kernel.dim(), grid.dim())?;
        check_dim(kernel.dim(), field.dim())?;
        Ok(Self {
            kernel,
            backing: Backing::Spectral {
                grid,
                field,
                cfg,
                cache: None,
            },
            memo: RwLock::new(HashMap::new()),
        })
    }

    /// Hamiltonian of `field` at the slow point `x` (ignored for constant
    /// and periodic regimes). Constant and slow regimes use the closed form.
    pub fn for_field(
        kernel: &JumpKernel,
        field: &RateField,
        x: &[f64],
        grid: TorusGrid,
        cfg: SpectralConfig,
    ) -> Result<Self> {
        check_dim(field.dim(), kernel.dim())?;
        check_dim(field.dim(), x.len())?;
        match field.regime() {
            Regime::Constant(c) => Self::closed_form(kernel.clone(), *c),
            Regime::Slow(_) => Self::closed_form(kernel.clone(), field.diagonal(x)),
            Regime::Periodic(_) | Regime::LocallyPeriodic(_) => {
                let frozen = field.freeze(x)?;
                if let Some(c) = frozen.as_constant() {
                    return Self::closed_form(kernel.clone(), c);
                }
                Self::spectral(kernel.clone(), grid, frozen, cfg)
            }
        }
    }

    /// Forces the spectral path even for a constant field (oracle checks).
    pub fn force_spectral(
        kernel: &JumpKernel,
        field: &RateField,
        x: &[f64],
        grid: TorusGrid,
        cfg: SpectralConfig,
    ) -> Result<Self> {
        let frozen = match field.regime() {
            Regime::Slow(_) => PeriodicField::constant(field.dim(), field.diagonal(x)),
            _ => field.freeze(x)?,
        };
        Self::spectral(kernel.clone(), grid, frozen, cfg)
    }

    pub fn with_disk_cache(mut self, cache: SpectralCache) -> Self {
        if let Backing::Spectral { cache: c, .. } = &mut self.backing {
            *c = Some(cache);
        }
        self
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.backing, Backing::ClosedForm { .. })
    }

    /// `∇H(0)`, the most likely velocity.
    pub fn zero_velocity(&self) -> Result<Vec<f64>> {
        self.grad(&vec![0.0; self.kernel.dim()])
    }

    fn lookup<T>(&self, key: &[u64], pick: impl Fn(&Entry) -> Option<T>) -> Option<T> {
        self.memo.read().ok()?.get(key).and_then(pick)
    }

    fn update(&self, key: Vec<u64>, f: impl FnOnce(&mut Entry)) {
        if let Ok(mut m) = self.memo.write() {
            f(m.entry(key).or_default());
        }
    }

    fn spectral_op(&self, lambda: &[f64]) -> Result<(SkewedOperator, crate::SpectralResult)> {
        match &self.backing {
            Backing::Spectral { grid, field, cfg, .. } => {
                let op = SkewedOperator::assemble(*grid, &self.kernel, field, lambda, *cfg)?;
                let res = op.principal_eig()?;
                Ok((op, res))
            }
            Backing::ClosedForm { .. } => unreachable!("closed form has no operator"),
        }
    }

    fn check(&self, lambda: &[f64]) -> Result<()> {
        check_dim(self.kernel.dim(), lambda.len())?;
        check_finite("tilt", lambda)
    }

    /// `-g_min` of the frozen field (the flat level).
    pub fn g_min(&self) -> Result<f64> {
        match &self.backing {
            Backing::ClosedForm { rate } => Ok(*rate),
            Backing::Spectral { .. } => {
                let zero = vec![0.0; self.kernel.dim()];
                let key = memo_key(&zero);
                if let Some(g) = self.lookup(&key, |e| e.g_min) {
                    return Ok(g);
                }
                self.value(&zero)?;
                self.lookup(&key, |e| e.g_min)
                    .ok_or_else(|| Error::InvalidConfig("missing spectral data".into()))
            }
        }
    }
}

impl ConvexHamiltonian for Hamiltonian {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn value(&self, lambda: &[f64]) -> Result<HValue> {
        self.check(lambda)?;
        let key = memo_key(lambda);
        if let Some(v) = self.lookup(&key, |e| e.value) {
            return Ok(v);
        }
        let (v, g_min) = match &self.backing {
            Backing::ClosedForm { rate } => (
                HValue {
                    value: rate * (self.kernel.exp_moment(lambda)? - 1.0),
                    in_gamma: true,
                },
                *rate,
            ),
            Backing::Spectral {
                grid, field, cache, ..
            } => {
                let disk_key = cache
                    .as_ref()
                    .map(|_| SpectralCache::key(&self.kernel, field, *grid, lambda));
                let stored = match (cache, &disk_key) {
                    (Some(c), Some(k)) => c.load(k)?,
                    _ => None,
                };
                let res = match stored {
                    Some(r) => r,
                    None => {
                        let (_, r) = self.spectral_op(lambda)?;
                        if let (Some(c), Some(k)) = (cache, &disk_key) {
                            c.store(k, &r)?;
                        }
                        r
                    }
                };
                (
                    HValue {
                        value: res.theta,
                        in_gamma: res.in_gamma,
                    },
                    res.g_min,
                )
            }
        };
        self.update(key, |e| {
            e.value = Some(v);
            e.g_min = Some(g_min);
        });
        Ok(v)
    }

    fn grad(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check(lambda)?;
        let key = memo_key(lambda);
        if let Some(g) = self.lookup(&key, |e| e.grad.clone()) {
            return Ok(g);
        }
        let g = match &self.backing {
            Backing::ClosedForm { rate } => self
                .kernel
                .exp_moment_grad(lambda)?
                .into_iter()
                .map(|v| rate * v)
                .collect(),
            Backing::Spectral { .. } => {
                let (op, res) = self.spectral_op(lambda)?;
                let g = op.theta_grad(&res)?;
                self.update(key.clone(), |e| {
                    e.value = Some(HValue {
                        value: res.theta,
                        in_gamma: res.in_gamma,
                    });
                    e.g_min = Some(res.g_min);
                });
                g
            }
        };
        let stored = g.clone();
        self.update(key, |e| e.grad = Some(stored));
        Ok(g)
    }

    fn hess(&self, lambda: &[f64]) -> Result<DMatrix<f64>> {
        self.check(lambda)?;
        let key = memo_key(lambda);
        if let Some(h) = self.lookup(&key, |e| e.hess.clone()) {
            return Ok(h);
        }
        let (grad, hess) = match &self.backing {
            Backing::ClosedForm { rate } => {
                let m = self.kernel.exp_moments(lambda)?;
                (
                    m.grad.iter().map(|v| rate * v).collect::<Vec<_>>(),
                    m.hess * *rate,
                )
            }
            Backing::Spectral { .. } => {
                let (op, res) = self.spectral_op(lambda)?;
                let der = op.theta_derivatives(&res)?;
                (der.grad, der.hess)
            }
        };
        let h = hess.clone();
        self.update(key, |e| {
            e.grad = Some(grad);
            e.hess = Some(h);
        });
        Ok(hess)
    }

    fn flat_level(&self) -> Option<f64> {
        match &self.backing {
            Backing::ClosedForm { .. } => None,
            Backing::Spectral { .. } => self.g_min().ok().map(|g| -g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::QuadraticSlow;
    use std::sync::Arc;

    #[test]
    fn zero_tilt_gives_zero() {
        let k = JumpKernel::gaussian(1).unwrap();
        let h = Hamiltonian::closed_form(k, 2.0).unwrap();
        assert!(h.value(&[0.0]).unwrap().value.abs() < 1e-13);
    }

    #[test]
    fn slow_regime_scales_by_diagonal_rate() {
        let k = JumpKernel::gaussian(1).unwrap();
        let slow = QuadraticSlow {
            base: 1.0,
            coef: 1.0,
            cap: 10.0,
        };
        let field = RateField::new(1, Regime::Slow(Arc::new(slow)), 1.0, 10.0).unwrap();
        let grid = TorusGrid::new(1, 16).unwrap();
        let h = Hamiltonian::for_field(&k, &field, &[1.0], grid, SpectralConfig::default()).unwrap();
        let want = 2.0 * (0.5f64.exp() - 1.0);
        assert!((h.value(&[1.0]).unwrap().value - want).abs() < 1e-10);
        assert!((want - 1.29744).abs() < 1e-5);
    }

    #[test]
    fn closed_form_gradient() {
        let k = JumpKernel::gaussian(1).unwrap();
        let h = Hamiltonian::closed_form(k, 2.0).unwrap();
        let g = h.grad(&[1.0]).unwrap()[0];
        let want = 2.0 * 0.5f64.exp();
        assert!((g - want).abs() < 1e-10, "{g} vs {want}");
        assert!((want - 3.29744).abs() < 1e-5);
    }

    #[test]
    fn memo_returns_same_value() {
        let k = JumpKernel::gaussian(1).unwrap();
        let h = Hamiltonian::closed_form(k, 1.0).unwrap();
        let a = h.value(&[0.3]).unwrap();
        let b = h.value(&[0.3 + 1e-14]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_tilts() {
        let k = JumpKernel::gaussian(2).unwrap();
        let h = Hamiltonian::closed_form(k, 1.0).unwrap();
        assert!(h.value(&[0.0]).is_err());
        assert!(h.value(&[f64::NAN, 0.0]).is_err());
    }
}
