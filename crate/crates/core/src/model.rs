//! A kernel together with a rate field, and the position-dependent
//! Hamiltonian and Lagrangian it induces.

use std::sync::OnceLock;

use crate::environment::{RateField, Regime};
use crate::error::{check_dim, Result};
use crate::hamiltonian::{ConvexHamiltonian, Hamiltonian};
use crate::kernel::JumpKernel;
use crate::legendre::{lagrangian, LagrangianValue, LegendreConfig};
use crate::torus_spectral::{SpectralCache, SpectralConfig, TorusGrid};

pub struct Model {
    kernel: JumpKernel,
    field: RateField,
    grid: TorusGrid,
    spectral: SpectralConfig,
    legendre: LegendreConfig,
    cache: Option<SpectralCache>,
    /// Shared Hamiltonian when it does not depend on position.
    uniform: OnceLock<Hamiltonian>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            kernel: self.kernel.clone(),
            field: self.field.clone(),
            grid: self.grid,
            spectral: self.spectral,
            legendre: self.legendre,
            cache: self.cache.clone(),
            uniform: OnceLock::new(),
        }
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("kernel", &self.kernel.descriptor())
            .field("field", &self.field.descriptor())
            .field("grid", &self.grid)
            .finish()
    }
}

impl Model {
    /// Uses a torus grid of 32 nodes per axis.
    pub fn new(kernel: JumpKernel, field: RateField) -> Result<Self> {
        check_dim(kernel.dim(), field.dim())?;
        let grid = TorusGrid::new(kernel.dim(), 32)?;
        Ok(Self {
            kernel,
            field,
            grid,
            spectral: SpectralConfig::default(),
            legendre: LegendreConfig::default(),
            cache: None,
            uniform: OnceLock::new(),
        })
    }

    pub fn with_grid(mut self, grid: TorusGrid) -> Result<Self> {
        check_dim(self.kernel.dim(), grid.dim())?;
        self.grid = grid;
        self.uniform = OnceLock::new();
        Ok(self)
    }

    pub fn with_spectral(mut self, cfg: SpectralConfig) -> Self {
        self.spectral = cfg;
        self.uniform = OnceLock::new();
        self
    }

    pub fn with_legendre(mut self, cfg: LegendreConfig) -> Self {
        self.legendre = cfg;
        self
    }

    /// Stores spectral solves on disk, keyed by kernel, field, grid and tilt.
    pub fn with_cache(mut self, cache: SpectralCache) -> Self {
        self.cache = Some(cache);
        self.uniform = OnceLock::new();
        self
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    pub fn field(&self) -> &RateField {
        &self.field
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn spectral_config(&self) -> SpectralConfig {
        self.spectral
    }

    pub fn legendre_config(&self) -> LegendreConfig {
        self.legendre
    }

    /// True for the slow and locally periodic regimes.
    pub fn depends_on_position(&self) -> bool {
        matches!(
            self.field.regime(),
            Regime::Slow(_) | Regime::LocallyPeriodic(_)
        )
    }

    fn build(&self, x: &[f64]) -> Result<Hamiltonian> {
        let h = Hamiltonian::for_field(&self.kernel, &self.field, x, self.grid, self.spectral)?;
        Ok(match &self.cache {
            Some(c) => h.with_disk_cache(c.clone()),
            None => h,
        })
    }

    /// Runs `f` on the Hamiltonian at `x`, reusing a shared instance when it
    /// does not depend on position.
    pub fn with_hamiltonian<T>(
        &self,
        x: &[f64],
        f: impl FnOnce(&Hamiltonian) -> Result<T>,
    ) -> Result<T> {
        check_dim(self.dim(), x.len())?;
        if self.depends_on_position() {
            return f(&self.build(x)?);
        }
        if let Some(h) = self.uniform.get() {
            return f(h);
        }
        let h = self.build(x)?;
        let h = self.uniform.get_or_init(|| h);
        f(h)
    }

    pub fn hamiltonian_at(&self, x: &[f64]) -> Result<Hamiltonian> {
        check_dim(self.dim(), x.len())?;
        self.build(x)
    }

    /// `L(x, ζ)`.
    pub fn lagrangian_at(&self, x: &[f64], zeta: &[f64]) -> Result<LagrangianValue> {
        let cfg = self.legendre;
        self.with_hamiltonian(x, |h| lagrangian(h, zeta, &cfg))
    }

    /// Velocity of the effective flow at `x`, `∇_λ H(x, 0)`.
    pub fn drift_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.dim()];
        self.with_hamiltonian(x, |h| h.grad(&zero))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::QuadraticSlow;
    use std::sync::Arc;

    #[test]
    fn slow_lagrangian_scales_with_diagonal_rate() {
        let k = JumpKernel::gaussian(1).unwrap();
        let slow = QuadraticSlow { base: 1.0, coef: 1.0, cap: 5.0 };
        let field = RateField::new(1, Regime::Slow(Arc::new(slow)), 1.0, 5.0).unwrap();
        let m = Model::new(k.clone(), field).unwrap();
        let unit = Model::new(k, RateField::constant(1, 1.0).unwrap()).unwrap();
        // L(x, ζ) = Λ L₀(ζ / Λ) with Λ = 2 at x = 1
        let a = m.lagrangian_at(&[1.0], &[0.8]).unwrap().value;
        let b = unit.lagrangian_at(&[0.0], &[0.4]).unwrap().value;
        assert!((a - 2.0 * b).abs() < 1e-10);
        assert!(m.depends_on_position() && !unit.depends_on_position());
    }
}
