//! A periodic environment whose principal-eigenvalue region is not the
//! whole space.
//!
//! The kernel is the indicator of the unit cell and the rate is
//! `b(ξ) Λ₀(ξ - η)`: `b` has a shallow cusp down to `b_min`, and `Λ₀` is a
//! narrow peak at `z₀` over a tiny floor, normalized so that its cell integral
//! is one. Two sufficient inequalities make the eigenvalue equation
//! unsolvable at a tilt `λ₀` pointing towards `z₀`:
//!
//! * `‖b / (b - b_min)‖_{L²} < 2`, and
//! * `Λ₀(z) e^{-λ₀·z} < 1/2` on the whole cell.
//!
//! They are only sufficient, so [`Counterexample::search`] also asks the
//! spectral solver directly.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{PeriodicField, RateField, Regime, SeparableField, TorusProfile};
use crate::error::{Error, Result};
use crate::hamiltonian::{ConvexHamiltonian, HValue, Hamiltonian};
use crate::kernel::JumpKernel;
use crate::torus_spectral::{SpectralConfig, TorusGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub dim: usize,
    /// Floor of the peak profile.
    pub peak_floor: f64,
    /// Outer radius of the peak; the plateau has radius `peak_width / 2`.
    pub peak_width: f64,
    pub peak_center: Vec<f64>,
    /// Minimum of the site factor `b`.
    pub site_floor: f64,
    pub site_center: Vec<f64>,
    /// Exponent of the cusp of `b`; the norm condition needs `2 · exponent < dim`.
    pub site_exponent: f64,
}

/// Numerical status of the sufficient inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    /// Plateau height of the normalized peak.
    pub plateau: f64,
    /// Cell integral of the peak profile (should be 1).
    pub normalization: f64,
    /// `‖b / (b - b_min)‖_{L²}`.
    pub site_norm: f64,
    pub site_norm_ok: bool,
    /// Best tilt along `z₀` for the pointwise bound, and the bound there.
    pub tilt: Vec<f64>,
    pub tilt_bound: f64,
    pub tilt_bound_ok: bool,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.site_norm_ok && self.tilt_bound_ok && (self.normalization - 1.0).abs() < 1e-6
    }
}

/// Spectral confirmation of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: Counterexample,
    pub report: ScenarioReport,
    pub at_origin: bool,
    pub at_tilt: bool,
    pub theta_at_tilt: f64,
    pub flat_level: f64,
}

impl Counterexample {
    /// One-dimensional defaults that satisfy both inequalities with
    /// `|λ₀| < 20`.
    pub fn one_dimensional() -> Self {
        Self {
            dim: 1,
            peak_floor: 1e-5,
            peak_width: 0.08,
            peak_center: vec![0.3],
            site_floor: 0.02,
            site_center: vec![0.1],
            site_exponent: 0.3,
        }
    }

    fn check(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || d > 3 {
            return Err(Error::InvalidConfig(format!("dimension must be 1, 2 or 3 (got {d})")));
        }
        if self.peak_center.len() != d || self.site_center.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.peak_center.len().min(self.site_center.len()),
            });
        }
        if self.peak_center.iter().all(|&z| z == 0.0) {
            return Err(Error::InvalidConfig("peak center must differ from the origin".into()));
        }
        if !(self.site_floor > 0.0 && self.site_floor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "site floor must lie in (0, 1) (got {})",
                self.site_floor
            )));
        }
        if !(self.site_exponent > 0.0) {
            return Err(Error::InvalidConfig("site exponent must be positive".into()));
        }
        Ok(())
    }

    pub fn peak(&self) -> Result<TorusProfile> {
        self.check()?;
        TorusProfile::normalized_peak(self.peak_center.clone(), self.peak_width, self.peak_floor)
    }

    pub fn site(&self) -> TorusProfile {
        TorusProfile::Cusp {
            center: self.site_center.clone(),
            floor: self.site_floor,
            exponent: self.site_exponent,
        }
    }

    pub fn kernel(&self) -> Result<JumpKernel> {
        JumpKernel::unit_box(self.dim)
    }

    fn separable(&self) -> Result<(SeparableField, f64, f64)> {
        let sep = SeparableField {
            site: self.site(),
            jump: self.peak()?,
        };
        let (lo, hi) = sep.bounds();
        Ok((sep, lo, hi))
    }

    pub fn periodic_field(&self) -> Result<PeriodicField> {
        let (sep, lo, hi) = self.separable()?;
        Ok(PeriodicField::new(self.dim, Arc::new(sep), lo, hi))
    }

    pub fn rate_field(&self) -> Result<RateField> {
        let (sep, lo, hi) = self.separable()?;
        RateField::new(self.dim, Regime::Periodic(Arc::new(sep)), lo, hi)
    }

    pub fn hamiltonian(&self, grid: TorusGrid, cfg: SpectralConfig) -> Result<Hamiltonian> {
        Hamiltonian::spectral(self.kernel()?, grid, self.periodic_field()?, cfg)
    }

    /// `‖b/(b - b_min)‖_{L²}` in closed form. With `s = 2 d_∞(ξ, center)`,
    /// `b/(b - b_min) = 1 + β s^{-α}` and `s` has density `d s^{d-1}` on
    /// `[0, 1]`.
    pub fn site_norm(&self) -> f64 {
        let d = self.dim as f64;
        let a = self.site_exponent;
        if 2.0 * a >= d {
            return f64::INFINITY;
        }
        let beta = self.site_floor / (1.0 - self.site_floor);
        (1.0 + 2.0 * beta * d / (d - a) + beta * beta * d / (d - 2.0 * a)).sqrt()
    }

    /// Nodes of a tensor grid on the closed cell `[-1/2, 1/2]^d`.
    fn cell_nodes(&self) -> (Vec<Vec<f64>>, f64) {
        let per_axis: usize = match self.dim {
            1 => 8001,
            2 => 401,
            _ => 81,
        };
        let h = 1.0 / (per_axis - 1) as f64;
        let total = per_axis.pow(self.dim as u32);
        let nodes = (0..total)
            .map(|mut flat| {
                (0..self.dim)
                    .map(|_| {
                        let i = flat % per_axis;
                        flat /= per_axis;
                        -0.5 + i as f64 * h
                    })
                    .collect()
            })
            .collect();
        (nodes, h)
    }

    /// Largest `Λ₀(z) e^{-λ·z}` on the cell.
    pub fn tilt_bound(&self, peak: &TorusProfile, lambda: &[f64]) -> f64 {
        let (nodes, _) = self.cell_nodes();
        nodes
            .iter()
            .map(|z| {
                let dot: f64 = z.iter().zip(lambda).map(|(a, b)| a * b).sum();
                peak.eval(z) * (-dot).exp()
            })
            .fold(0.0, f64::max)
    }

    /// Evaluates both inequalities, scanning tilts `t z₀/|z₀|` for
    /// `t ∈ (0, max_tilt]`.
    pub fn report(&self, max_tilt: f64) -> Result<ScenarioReport> {
        let peak = self.peak()?;
        let plateau = match &peak {
            TorusProfile::Peak { high, .. } => *high,
            _ => unreachable!(),
        };
        // midpoint rule on the cell
        let m: usize = match self.dim {
            1 => 200_000,
            2 => 1000,
            _ => 100,
        };
        let h = 1.0 / m as f64;
        let total = m.pow(self.dim as u32);
        let mut z = vec![0.0; self.dim];
        let mut normalization = 0.0;
        for mut flat in 0..total {
            for zi in z.iter_mut() {
                *zi = -0.5 + (flat % m) as f64 * h + 0.5 * h;
                flat /= m;
            }
            normalization += peak.eval(&z);
        }
        normalization *= h.powi(self.dim as i32);

        let norm = self.peak_center.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dir: Vec<f64> = self.peak_center.iter().map(|v| v / norm).collect();
        let steps = (max_tilt / 0.05).ceil().max(1.0) as usize;
        let (mut best_t, mut best) = (0.0, f64::INFINITY);
        for i in 1..=steps {
            let t = max_tilt * i as f64 / steps as f64;
            let lam: Vec<f64> = dir.iter().map(|u| t * u).collect();
            let b = self.tilt_bound(&peak, &lam);
            if b < best {
                best = b;
                best_t = t;
            }
        }
        let site_norm = self.site_norm();
        Ok(ScenarioReport {
            plateau,
            normalization,
            site_norm,
            site_norm_ok: site_norm < 2.0,
            tilt: dir.iter().map(|u| best_t * u).collect(),
            tilt_bound: best,
            tilt_bound_ok: best < 0.5,
        })
    }

    /// Membership at the origin and at the reported tilt.
    pub fn confirm(&self, max_tilt: f64, grid: TorusGrid, cfg: SpectralConfig) -> Result<ScenarioOutcome> {
        let report = self.report(max_tilt)?;
        let h = self.hamiltonian(grid, cfg)?;
        let origin = h.value(&vec![0.0; self.dim])?;
        let tilted: HValue = h.value(&report.tilt)?;
        Ok(ScenarioOutcome {
            scenario: self.clone(),
            at_origin: origin.in_gamma,
            at_tilt: tilted.in_gamma,
            theta_at_tilt: tilted.value,
            flat_level: -h.g_min()?,
            report,
        })
    }

    /// Walks a ladder of shrinking floors and widths from `self` until both
    /// inequalities hold and the solver places the tilt outside the region
    /// while keeping the origin inside.
    pub fn search(&self, max_tilt: f64, grid: TorusGrid, cfg: SpectralConfig) -> Result<ScenarioOutcome> {
        self.check()?;
        let mut tried = 0;
        for shrink_floor in [1.0, 1e-1, 1e-2, 1e-3] {
            for shrink_width in [1.0, 0.75, 0.5] {
                for shrink_site in [1.0, 0.5, 0.25] {
                    let mut cand = self.clone();
                    cand.peak_floor *= shrink_floor;
                    cand.peak_width *= shrink_width;
                    cand.site_floor *= shrink_site;
                    tried += 1;
                    if !cand.report(max_tilt)?.passed() {
                        continue;
                    }
                    let out = cand.confirm(max_tilt, grid, cfg)?;
                    if out.at_origin && !out.at_tilt {
                        return Ok(out);
                    }
                }
            }
        }
        Err(Error::InvalidConfig(format!(
            "no counterexample found among {tried} candidates with |λ| ≤ {max_tilt}"
        )))
    }
}

/// In-region flags of a Hamiltonian on a list of tilts.
pub fn gamma_region(h: &dyn ConvexHamiltonian, tilts: &[Vec<f64>]) -> Result<Vec<HValue>> {
    tilts.iter().map(|l| h.value(l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_norm_matches_quadrature() {
        let s = Counterexample::one_dimensional();
        let b = s.site();
        let n = 2_000_000;
        let mut acc = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            let v = b.eval(&[x]);
            let r = v / (v - s.site_floor);
            acc += r * r;
        }
        let quad = (acc / n as f64).sqrt();
        assert!((quad - s.site_norm()).abs() < 1e-3, "{quad} vs {}", s.site_norm());

        let mut wide = s.clone();
        wide.site_exponent = 0.5;
        assert!(wide.site_norm().is_infinite());
    }

    #[test]
    fn defaults_satisfy_both_inequalities() {
        let r = Counterexample::one_dimensional().report(20.0).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.tilt[0] > 0.0 && r.tilt[0] <= 20.0);
        assert!(r.plateau > 5.0);
    }

    #[test]
    fn wide_floor_breaks_pointwise_bound() {
        let mut s = Counterexample::one_dimensional();
        s.peak_floor = 1e-2;
        let r = s.report(20.0).unwrap();
        assert!(!r.tilt_bound_ok);
    }

    #[test]
    fn rejects_peak_at_origin() {
        let mut s = Counterexample::one_dimensional();
        s.peak_center = vec![0.0];
        assert!(s.report(20.0).is_err());
    }
}
