//! The rate field `Λ(x, y, ξ, η)` in its four regimes.
//!
//! Slow arguments `x, y` are physical positions; fast arguments `ξ, η` live
//! on the unit torus. A [`RateField`] dispatches on the regime, enforces the
//! two-sided bound `Λ⁻ ≤ Λ ≤ Λ⁺`, and freezes the slow variables to produce
//! the [`PeriodicField`] consumed by the spectral solver.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::quadrature::AxisRule;

/// Periodic function of the fast pair `(ξ, η)`.
pub trait PairField: Send + Sync {
    fn eval(&self, xi: &[f64], eta: &[f64]) -> f64;
    /// Stable text identifying the field (used in cache keys).
    fn descriptor(&self) -> String;
    /// `Some(c)` when the field is the constant `c`.
    fn as_constant(&self) -> Option<f64> {
        None
    }
}

/// Function of the slow pair `(x, y)`.
pub trait SlowField: Send + Sync {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
    fn descriptor(&self) -> String;
}

/// Function of all four arguments, periodic in `(ξ, η)`.
pub trait LocalField: Send + Sync {
    fn eval(&self, x: &[f64], y: &[f64], xi: &[f64], eta: &[f64]) -> f64;
    fn descriptor(&self) -> String;
}

#[derive(Clone)]
pub enum Regime {
    Constant(f64),
    Periodic(Arc<dyn PairField>),
    Slow(Arc<dyn SlowField>),
    LocallyPeriodic(Arc<dyn LocalField>),
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Constant(_) => "constant",
            Regime::Periodic(_) => "periodic",
            Regime::Slow(_) => "slow",
            Regime::LocallyPeriodic(_) => "locally-periodic",
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            Regime::Constant(c) => format!("const({c:e})"),
            Regime::Periodic(f) => f.descriptor(),
            Regime::Slow(f) => f.descriptor(),
            Regime::LocallyPeriodic(f) => f.descriptor(),
        }
    }
}

impl fmt::Debug for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name(), self.descriptor())
    }
}

#[derive(Clone, Debug)]
pub struct RateField {
    dim: usize,
    regime: Regime,
    lambda_minus: f64,
    lambda_plus: f64,
}

impl RateField {
    pub fn new(dim: usize, regime: Regime, lambda_minus: f64, lambda_plus: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidField("dimension must be positive".into()));
        }
        if !(lambda_minus > 0.0 && lambda_plus >= lambda_minus && lambda_plus.is_finite()) {
            return Err(Error::InvalidField(format!(
                "bounds need 0 < Λ⁻ ≤ Λ⁺ < ∞ (got {lambda_minus}, {lambda_plus})"
            )));
        }
        if let Regime::Constant(c) = regime {
            if !(lambda_minus..=lambda_plus).contains(&c) {
                return Err(Error::BoundViolation {
                    value: c,
                    lower: lambda_minus,
                    upper: lambda_plus,
                    location: "constant field".into(),
                });
            }
        }
        Ok(Self {
            dim,
            regime,
            lambda_minus,
            lambda_plus,
        })
    }

    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::new(dim, Regime::Constant(value), value, value)
    }

    /// Builds a field whose bounds are the extremes over a dense sample.
    /// Slow arguments are sampled from `[-slow_box, slow_box]^d`.
    pub fn with_sampled_bounds(dim: usize, regime: Regime, slow_box: f64) -> Result<Self> {
        let probe = Self {
            dim,
            regime,
            lambda_minus: f64::MIN_POSITIVE,
            lambda_plus: f64::MAX,
        };
        let (lo, hi) = probe.sample_range(20_000, slow_box, 17);
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::InvalidField(format!(
                "sampled range [{lo}, {hi}] is not a positive bounded interval"
            )));
        }
        Self::new(dim, probe.regime, lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    pub fn lambda_minus(&self) -> f64 {
        self.lambda_minus
    }

    pub fn lambda_plus(&self) -> f64 {
        self.lambda_plus
    }

    pub fn descriptor(&self) -> String {
        self.regime.descriptor()
    }

    /// Unchecked evaluation with explicit slow and fast arguments.
    pub fn eval_raw(&self, x: &[f64], y: &[f64], xi: &[f64], eta: &[f64]) -> f64 {
        match &self.regime {
            Regime::Constant(c) => *c,
            Regime::Periodic(f) => f.eval(xi, eta),
            Regime::Slow(f) => f.eval(x, y),
            Regime::LocallyPeriodic(f) => f.eval(x, y, xi, eta),
        }
    }

    /// `Λ(x, y, x/ε, y/ε)`, checked against the bounds.
    pub fn eval_scaled(&self, x: &[f64], y: &[f64], eps: f64) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        check_finite("x", x)?;
        check_finite("y", y)?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidField(format!("ε must be positive (got {eps})")));
        }
        let v = self.eval_scaled_unchecked(x, y, eps);
        self.check_bounds(v, || format!("x={x:?}, y={y:?}, ε={eps}"))?;
        Ok(v)
    }

    /// Hot-path evaluation used by the simulator (no argument validation).
    pub fn eval_scaled_unchecked(&self, x: &[f64], y: &[f64], eps: f64) -> f64 {
        match &self.regime {
            Regime::Constant(c) => *c,
            Regime::Slow(f) => f.eval(x, y),
            Regime::Periodic(_) | Regime::LocallyPeriodic(_) => {
                let mut xi = [0.0; 8];
                let mut eta = [0.0; 8];
                let d = self.dim;
                for i in 0..d {
                    xi[i] = (x[i] / eps).rem_euclid(1.0);
                    eta[i] = (y[i] / eps).rem_euclid(1.0);
                }
                self.eval_raw(x, y, &xi[..d], &eta[..d])
            }
        }
    }

    fn check_bounds(&self, v: f64, location: impl FnOnce() -> String) -> Result<()> {
        let slack = 1e-12 * self.lambda_plus;
        if !v.is_finite() || v < self.lambda_minus - slack || v > self.lambda_plus + slack {
            return Err(Error::BoundViolation {
                value: v,
                lower: self.lambda_minus,
                upper: self.lambda_plus,
                location: location(),
            });
        }
        Ok(())
    }

    /// The periodic field `(ξ, η) ↦ Λ(x, x, ξ, η)` with the same bounds.
    pub fn freeze(&self, x: &[f64]) -> Result<PeriodicField> {
        check_dim(self.dim, x.len())?;
        check_finite("x", x)?;
        let field: Arc<dyn PairField> = match &self.regime {
            Regime::Constant(c) => Arc::new(ConstantPair(*c)),
            Regime::Periodic(f) => f.clone(),
            Regime::Slow(f) => Arc::new(ConstantPair(f.eval(x, x))),
            Regime::LocallyPeriodic(f) => Arc::new(FrozenLocal {
                local: f.clone(),
                x: x.to_vec(),
            }),
        };
        Ok(PeriodicField {
            dim: self.dim,
            field,
            lambda_minus: self.lambda_minus,
            lambda_plus: self.lambda_plus,
        })
    }

    /// `Λ(x, x)` for the slow regime (the diagonal rate multiplying the
    /// constant-field Hamiltonian).
    pub fn diagonal(&self, x: &[f64]) -> f64 {
        match &self.regime {
            Regime::Constant(c) => *c,
            Regime::Slow(f) => f.eval(x, x),
            _ => f64::NAN,
        }
    }

    fn sample_range(&self, samples: usize, slow_box: f64, seed: u64) -> (f64, f64) {
        let d = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut pts = vec![vec![0.0; d]; 4];
        for s in 0..samples {
            for p in pts.iter_mut().take(2) {
                for v in p.iter_mut() {
                    *v = slow_box * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            for p in pts.iter_mut().skip(2) {
                for v in p.iter_mut() {
                    *v = rng.random::<f64>();
                }
            }
            if s % 2 == 0 {
                // diagonal samples matter for freeze
                pts[1] = pts[0].clone();
            }
            let v = self.eval_raw(&pts[0], &pts[1], &pts[2], &pts[3]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Invariant suite: sampled bounds, lattice periodicity of the fast
    /// arguments, and a modulus-of-continuity probe on the slow diagonal.
    pub fn validate(&self, slow_box: f64, continuity_threshold: f64) -> FieldValidation {
        let d = self.dim;
        let (sample_min, sample_max) = self.sample_range(20_000, slow_box, 29);
        let slack = 1e-12 * self.lambda_plus;
        let bounds_ok =
            sample_min >= self.lambda_minus - slack && sample_max <= self.lambda_plus + slack;

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut periodicity_error: f64 = 0.0;
        let mut modulus: f64 = 0.0;
        let h = 1e-3;
        let rand_vec = |rng: &mut ChaCha8Rng, scale: f64, centered: bool| -> Vec<f64> {
            (0..d)
                .map(|_| {
                    let u: f64 = rng.random();
                    if centered {
                        scale * (2.0 * u - 1.0)
                    } else {
                        scale * u
                    }
                })
                .collect()
        };
        for _ in 0..200 {
            let x = rand_vec(&mut rng, slow_box, true);
            let y = rand_vec(&mut rng, slow_box, true);
            let xi = rand_vec(&mut rng, 1.0, false);
            let eta = rand_vec(&mut rng, 1.0, false);
            let base = self.eval_raw(&x, &y, &xi, &eta);
            for i in 0..d {
                let mut xs = xi.clone();
                xs[i] += 1.0;
                let mut es = eta.clone();
                es[i] -= 1.0;
                periodicity_error = periodicity_error
                    .max((self.eval_raw(&x, &y, &xs, &eta) - base).abs())
                    .max((self.eval_raw(&x, &y, &xi, &es) - base).abs());
            }
            if matches!(self.regime, Regime::Slow(_) | Regime::LocallyPeriodic(_)) {
                let dir = rand_vec(&mut rng, 1.0, true);
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let x2: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + h * b / n).collect();
                let f0 = self.eval_raw(&x, &x, &xi, &eta);
                let f1 = self.eval_raw(&x2, &x2, &xi, &eta);
                modulus = modulus.max((f1 - f0).abs());
            }
        }
        FieldValidation {
            sample_min,
            sample_max,
            bounds_ok,
            periodicity_error,
            periodicity_ok: periodicity_error < 1e-9 * self.lambda_plus,
            continuity_step: h,
            continuity_modulus: modulus,
            continuity_warning: modulus > continuity_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldValidation {
    pub sample_min: f64,
    pub sample_max: f64,
    pub bounds_ok: bool,
    pub periodicity_error: f64,
    pub periodicity_ok: bool,
    pub continuity_step: f64,
    pub continuity_modulus: f64,
    /// Set when the diagonal oscillation over one step exceeds the threshold.
    pub continuity_warning: bool,
}

impl FieldValidation {
    pub fn passed(&self) -> bool {
        self.bounds_ok && self.periodicity_ok
    }
}

/// Pure-periodic field on the torus with its bounds.
#[derive(Clone)]
pub struct PeriodicField {
    dim: usize,
    field: Arc<dyn PairField>,
    lambda_minus: f64,
    lambda_plus: f64,
}

impl fmt::Debug for PeriodicField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PeriodicField[{}]", self.field.descriptor())
    }
}

impl PeriodicField {
    pub fn new(dim: usize, field: Arc<dyn PairField>, lambda_minus: f64, lambda_plus: f64) -> Self {
        Self {
            dim,
            field,
            lambda_minus,
            lambda_plus,
        }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::new(dim, Arc::new(ConstantPair(value)), value, value)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, xi: &[f64], eta: &[f64]) -> f64 {
        self.field.eval(xi, eta)
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.field.as_constant()
    }

    pub fn descriptor(&self) -> String {
        self.field.descriptor()
    }

    pub fn lambda_minus(&self) -> f64 {
        self.lambda_minus
    }

    pub fn lambda_plus(&self) -> f64 {
        self.lambda_plus
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPair(pub f64);

impl PairField for ConstantPair {
    fn eval(&self, _xi: &[f64], _eta: &[f64]) -> f64 {
        self.0
    }
    fn descriptor(&self) -> String {
        format!("const({:e})", self.0)
    }
    fn as_constant(&self) -> Option<f64> {
        Some(self.0)
    }
}

struct FrozenLocal {
    local: Arc<dyn LocalField>,
    x: Vec<f64>,
}

impl PairField for FrozenLocal {
    fn eval(&self, xi: &[f64], eta: &[f64]) -> f64 {
        self.local.eval(&self.x, &self.x, xi, eta)
    }
    fn descriptor(&self) -> String {
        let x: Vec<String> = self.x.iter().map(|v| format!("{v:e}")).collect();
        format!("frozen({};x=[{}])", self.local.descriptor(), x.join(","))
    }
}

/// One cosine mode `amplitude · cos(2π(j·ξ + l·η) + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub freq_xi: Vec<i32>,
    pub freq_eta: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

/// Trigonometric polynomial in `(ξ, η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPolynomial {
    pub offset: f64,
    pub terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn new(dim: usize, offset: f64, terms: Vec<TrigTerm>) -> Result<Self> {
        for t in &terms {
            if t.freq_xi.len() != dim || t.freq_eta.len() != dim {
                return Err(Error::InvalidField(format!(
                    "trigonometric term frequencies must have length {dim}"
                )));
            }
        }
        Ok(Self { offset, terms })
    }

    /// `offset - Σ|amplitude|` and `offset + Σ|amplitude|`.
    pub fn crude_bounds(&self) -> (f64, f64) {
        let s: f64 = self.terms.iter().map(|t| t.amplitude.abs()).sum();
        (self.offset - s, self.offset + s)
    }
}

impl PairField for TrigPolynomial {
    fn eval(&self, xi: &[f64], eta: &[f64]) -> f64 {
        let mut v = self.offset;
        for t in &self.terms {
            let mut arg = t.phase;
            for i in 0..xi.len() {
                arg += 2.0 * PI * (t.freq_xi[i] as f64 * xi[i] + t.freq_eta[i] as f64 * eta[i]);
            }
            v += t.amplitude * arg.cos();
        }
        v
    }
    fn descriptor(&self) -> String {
        let mut s = format!("trig({:e}", self.offset);
        for t in &self.terms {
            s.push_str(&format!(
                ";{:e}@{:?}/{:?}+{:e}",
                t.amplitude, t.freq_xi, t.freq_eta, t.phase
            ));
        }
        s.push(')');
        s
    }
    fn as_constant(&self) -> Option<f64> {
        self.terms
            .iter()
            .all(|t| t.amplitude == 0.0)
            .then_some(self.offset)
    }
}

/// Periodic function of a single torus variable.
#[derive(Debug, Clone, PartialEq)]
pub enum TorusProfile {
    Constant(f64),
    /// Plateau `high` within distance `width/2` of `center`, floor `low`
    /// beyond `width`, joined by a C¹ smoothstep.
    Peak {
        center: Vec<f64>,
        width: f64,
        low: f64,
        high: f64,
    },
    /// `floor + (1 - floor)(2 d_∞(ξ, center))^exponent`; equals 1 at the
    /// point farthest from `center`.
    Cusp {
        center: Vec<f64>,
        floor: f64,
        exponent: f64,
    },
    /// `offset + Σ amplitude cos(2π j·ξ + phase)`.
    Trig {
        offset: f64,
        modes: Vec<(f64, Vec<i32>, f64)>,
    },
}

impl TorusProfile {
    /// Peak profile whose torus integral is one, given the floor.
    pub fn normalized_peak(center: Vec<f64>, width: f64, low: f64) -> Result<Self> {
        let d = center.len();
        if !(width > 0.0 && width <= 0.5) {
            return Err(Error::InvalidField(format!(
                "peak width must lie in (0, 1/2] (got {width})"
            )));
        }
        if !(low > 0.0 && low < 1.0) {
            return Err(Error::InvalidField(format!("peak floor must lie in (0, 1) (got {low})")));
        }
        let shape = peak_shape_integral(d, width);
        let high = low + (1.0 - low) / shape;
        Ok(TorusProfile::Peak {
            center,
            width,
            low,
            high,
        })
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            TorusProfile::Constant(c) => *c,
            TorusProfile::Peak {
                center,
                width,
                low,
                high,
            } => {
                let r = torus_distance(z, center);
                low + (high - low) * peak_shape(r, *width)
            }
            TorusProfile::Cusp {
                center,
                floor,
                exponent,
            } => {
                let r = torus_sup_distance(z, center);
                floor + (1.0 - floor) * (2.0 * r).min(1.0).powf(*exponent)
            }
            TorusProfile::Trig { offset, modes } => {
                let mut v = *offset;
                for (amp, freq, phase) in modes {
                    let arg: f64 = phase
                        + freq
                            .iter()
                            .zip(z)
                            .map(|(&j, &x)| 2.0 * PI * j as f64 * x)
                            .sum::<f64>();
                    v += amp * arg.cos();
                }
                v
            }
        }
    }

    pub fn descriptor(&self) -> String {
        format!("{self:?}")
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            TorusProfile::Constant(c) => (*c, *c),
            TorusProfile::Peak { low, high, .. } => (low.min(*high), low.max(*high)),
            TorusProfile::Cusp { floor, .. } => (*floor, 1.0),
            TorusProfile::Trig { offset, modes } => {
                let s: f64 = modes.iter().map(|m| m.0.abs()).sum();
                (offset - s, offset + s)
            }
        }
    }
}

/// Radial blend: 1 inside `width/2`, 0 beyond `width`.
fn peak_shape(r: f64, width: f64) -> f64 {
    let half = 0.5 * width;
    if r <= half {
        1.0
    } else if r >= width {
        0.0
    } else {
        let t = (r - half) / half;
        1.0 - t * t * (3.0 - 2.0 * t)
    }
}

/// `∫_{R^d} peak_shape(|z|) dz`.
fn peak_shape_integral(d: usize, width: f64) -> f64 {
    let half = 0.5 * width;
    let df = d as f64;
    let sphere = 2.0 * PI.powf(0.5 * df) / statrs::function::gamma::gamma(0.5 * df);
    let ball = sphere / df * half.powf(df);
    let rule = AxisRule::composite(&[half, width], 4, 8);
    ball + sphere * rule.integrate(|r| peak_shape(r, width) * r.powf(df - 1.0))
}

/// Euclidean distance on the unit torus.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = (x - y).rem_euclid(1.0);
            let t = t.min(1.0 - t);
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

fn torus_sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = (x - y).rem_euclid(1.0);
            t.min(1.0 - t)
        })
        .fold(0.0, f64::max)
}

/// `b(ξ) Λ₀(ξ - η)`.
#[derive(Debug, Clone)]
pub struct SeparableField {
    pub site: TorusProfile,
    pub jump: TorusProfile,
}

impl SeparableField {
    pub fn bounds(&self) -> (f64, f64) {
        let (a, b) = self.site.bounds();
        let (c, d) = self.jump.bounds();
        (a * c, b * d)
    }
}

impl PairField for SeparableField {
    fn eval(&self, xi: &[f64], eta: &[f64]) -> f64 {
        let mut diff = [0.0; 8];
        for i in 0..xi.len() {
            diff[i] = xi[i] - eta[i];
        }
        self.site.eval(xi) * self.jump.eval(&diff[..xi.len()])
    }
    fn descriptor(&self) -> String {
        format!("sep({};{})", self.site.descriptor(), self.jump.descriptor())
    }
}

/// `min(base + coef · x₁², cap)`, depending on the departure point only.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticSlow {
    pub base: f64,
    pub coef: f64,
    pub cap: f64,
}

impl QuadraticSlow {
    pub fn bounds(&self) -> (f64, f64) {
        let lo = self.base.min(self.cap);
        let hi = if self.coef > 0.0 { self.cap } else { self.base.min(self.cap) };
        (lo, hi.max(lo))
    }
}

impl SlowField for QuadraticSlow {
    fn eval(&self, x: &[f64], _y: &[f64]) -> f64 {
        (self.base + self.coef * x[0] * x[0]).min(self.cap)
    }
    fn descriptor(&self) -> String {
        format!("quad({:e},{:e},{:e})", self.base, self.coef, self.cap)
    }
}

/// `slow(x, y) · fast(ξ, η)`.
pub struct ProductField {
    pub slow: Arc<dyn SlowField>,
    pub fast: Arc<dyn PairField>,
}

impl LocalField for ProductField {
    fn eval(&self, x: &[f64], y: &[f64], xi: &[f64], eta: &[f64]) -> f64 {
        self.slow.eval(x, y) * self.fast.eval(xi, eta)
    }
    fn descriptor(&self) -> String {
        format!("prod({};{})", self.slow.descriptor(), self.fast.descriptor())
    }
}

/// Wraps a closure as a field of the fast pair.
pub struct FnPair<F> {
    name: String,
    f: F,
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Send + Sync> FnPair<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Send + Sync> PairField for FnPair<F> {
    fn eval(&self, xi: &[f64], eta: &[f64]) -> f64 {
        (self.f)(xi, eta)
    }
    fn descriptor(&self) -> String {
        format!("fn({})", self.name)
    }
}

/// Wraps a closure as a slow field.
pub struct FnSlow<F> {
    name: String,
    f: F,
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Send + Sync> FnSlow<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Send + Sync> SlowField for FnSlow<F> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.f)(x, y)
    }
    fn descriptor(&self) -> String {
        format!("fn({})", self.name)
    }
}

/// Wraps a closure as a locally periodic field.
pub struct FnLocal<F> {
    name: String,
    f: F,
}

impl<F> FnLocal<F>
where
    F: Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> LocalField for FnLocal<F>
where
    F: Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, x: &[f64], y: &[f64], xi: &[f64], eta: &[f64]) -> f64 {
        (self.f)(x, y, xi, eta)
    }
    fn descriptor(&self) -> String {
        format!("fn({})", self.name)
    }
}
