//! Experiment configuration: a TOML document with one table per block.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use ldp_core::environment::{ProductField, QuadraticSlow, TrigPolynomial, TrigTerm};
use ldp_core::path_rate::DistanceConfig;
use ldp_core::scenario::Counterexample;
use ldp_core::{
    Envelope, Error, JumpKernel, LegendreConfig, Model, Path, RateConfig, RateField, Regime,
    SpectralConfig, TabulatedProfile, TiltChoice, TorusGrid,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelBlock,
    pub environment: EnvironmentBlock,
    #[serde(default)]
    pub counterexample: Option<CounterexampleBlock>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub legendre: LegendreConfig,
    #[serde(default)]
    pub scan: ScanBlock,
    #[serde(default)]
    pub rate: RateBlock,
    #[serde(default)]
    pub flow: Option<FlowBlock>,
    #[serde(default)]
    pub simulation: Option<SimulationBlock>,
    #[serde(default)]
    pub validate: ValidateBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamilyName {
    Gaussian,
    GeneralizedGaussian,
    Box,
    Tabulated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub family: KernelFamilyName,
    pub dim: usize,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    /// Two-column `z value` table, relative to the config file.
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub envelope: Option<Envelope>,
    #[serde(default)]
    pub max_rejection_attempts: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeName {
    Constant,
    Periodic,
    Slow,
    LocallyPeriodic,
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowBlock {
    pub base: f64,
    pub coef: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBlock {
    pub regime: RegimeName,
    #[serde(default)]
    pub value: Option<f64>,
    /// Fast part: `offset + Σ amplitude cos(2π(j·ξ + l·η) + phase)`.
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
    /// Slow part `min(base + coef x₁², cap)`.
    #[serde(default)]
    pub slow: Option<SlowBlock>,
    #[serde(default)]
    pub lambda_minus: Option<f64>,
    #[serde(default)]
    pub lambda_plus: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleBlock {
    #[serde(flatten)]
    pub params: Counterexample,
    /// Search a ladder of smaller floors and widths before reporting.
    #[serde(default)]
    pub search: bool,
    #[serde(default = "default_max_tilt")]
    pub max_tilt: f64,
}

fn default_max_tilt() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub n: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self { n: 32 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => vec![],
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanBlock {
    /// Tensor grid of tilts, one axis spec shared by all coordinates.
    pub lambda: Axis,
    pub zeta: Axis,
    /// Slow position at which position-dependent quantities are evaluated.
    pub x: Option<Vec<f64>>,
    /// Horizon of the fixed-time rate column in `lagrangian-scan`.
    pub horizon: Option<f64>,
}

impl Default for ScanBlock {
    fn default() -> Self {
        Self {
            lambda: Axis { min: -2.0, max: 2.0, points: 41 },
            zeta: Axis { min: -2.0, max: 2.0, points: 41 },
            x: None,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RateBlock {
    pub path: Option<PathBuf>,
    /// Second path; its distance to `path` is reported as well.
    pub reference: Option<PathBuf>,
    pub quadrature: RateConfig,
    pub distance: DistanceConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    pub x0: Vec<f64>,
    pub horizon: f64,
    #[serde(default = "default_flow_steps")]
    pub steps: usize,
}

fn default_flow_steps() -> usize {
    512
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventBlock {
    Whole,
    Halfspace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    /// Tube around a path file, the straight line `x0 + v t`, or the
    /// effective flow from `x0` when neither is given.
    Tube {
        radius: f64,
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        velocity: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub eps: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub tilt: TiltChoice,
    pub replications: usize,
    /// Scale sequence for `ldp-verify`.
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub event: Option<EventBlock>,
    /// Number of trajectories written out by `simulate`.
    #[serde(default)]
    pub dump: usize,
    /// Flow steps used for tube events around the effective flow.
    #[serde(default = "default_flow_steps")]
    pub flow_steps: usize,
    /// Constant `c` of the bound `c √ε` on the mean sup-distance between
    /// trajectories and the effective flow.
    #[serde(default)]
    pub flow_band: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateBlock {
    /// Slow arguments are probed in `[-slow_box, slow_box]^d`.
    pub slow_box: f64,
    pub continuity_threshold: f64,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            slow_box: 2.0,
            continuity_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

/// Parsed configuration together with the directory relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// SHA-256 of the canonical JSON form after overrides.
    pub hash: String,
}

/// Replaces the value at a dotted key, creating intermediate tables.
/// The value is parsed as a TOML literal and kept as a string otherwise.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {spec:?} is not KEY=VALUE")))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key {key:?}")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("override key {key:?} passes through a non-table"))
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl LoadedConfig {
    pub fn load(path: &FsPath, overrides: &[String]) -> Result<Self, Error> {
        let text = fs::read_to_string(path)?;
        let base_dir = path.parent().map(FsPath::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir, overrides)
    }

    pub fn from_str(text: &str, base_dir: PathBuf, overrides: &[String]) -> Result<Self, Error> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let canonical = serde_json::to_string(&config)?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        let loaded = Self {
            config,
            base_dir,
            hash,
        };
        loaded.check()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &FsPath) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dim(&self) -> usize {
        self.config.kernel.dim
    }

    fn check(&self) -> Result<(), Error> {
        let c = &self.config;
        let d = c.kernel.dim;
        let same = |label: &str, len: usize| -> Result<(), Error> {
            if len == d {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{label} has dimension {len}, kernel has {d}"
                )))
            }
        };
        if let Some(x) = &c.scan.x {
            same("scan.x", x.len())?;
        }
        if let Some(f) = &c.flow {
            same("flow.x0", f.x0.len())?;
        }
        if let Some(ce) = &c.counterexample {
            same("counterexample", ce.params.dim)?;
        }
        if let Some(s) = &c.simulation {
            same("simulation.x0", s.x0.len())?;
            match &s.event {
                Some(EventBlock::Halfspace { normal, .. }) => same("event.normal", normal.len())?,
                Some(EventBlock::Ball { center, .. }) => same("event.center", center.len())?,
                Some(EventBlock::Tube { velocity: Some(v), .. }) => same("event.velocity", v.len())?,
                _ => {}
            }
        }
        let mut files = vec![];
        if let Some(t) = &c.kernel.table {
            files.push(t.clone());
        }
        files.extend(c.rate.path.iter().cloned());
        files.extend(c.rate.reference.iter().cloned());
        if let Some(SimulationBlock {
            event: Some(EventBlock::Tube { path: Some(p), .. }),
            ..
        }) = &c.simulation
        {
            files.push(p.clone());
        }
        for f in files {
            let p = self.resolve(&f);
            if !p.exists() {
                return Err(Error::InvalidConfig(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<JumpKernel, Error> {
        let k = &self.config.kernel;
        if self.config.environment.regime == RegimeName::Counterexample {
            return JumpKernel::unit_box(k.dim);
        }
        let kernel = match k.family {
            KernelFamilyName::Gaussian => JumpKernel::gaussian(k.dim)?,
            KernelFamilyName::GeneralizedGaussian => JumpKernel::generalized_gaussian(
                k.dim,
                k.k.ok_or_else(|| missing("kernel.k"))?,
                k.p.ok_or_else(|| missing("kernel.p"))?,
            )?,
            KernelFamilyName::Box => JumpKernel::unit_box(k.dim)?,
            KernelFamilyName::Tabulated => {
                let table = k.table.as_ref().ok_or_else(|| missing("kernel.table"))?;
                let text = fs::read_to_string(self.resolve(table))?;
                let env = k.envelope.ok_or_else(|| missing("kernel.envelope"))?;
                if k.dim != 1 {
                    return Err(Error::InvalidConfig("tabulated kernels are one-dimensional".into()));
                }
                JumpKernel::tabulated(TabulatedProfile::parse(&text)?, env)?
            }
        };
        Ok(match k.max_rejection_attempts {
            Some(n) => kernel.with_max_rejection_attempts(n),
            None => kernel,
        })
    }

    pub fn counterexample(&self) -> Result<Counterexample, Error> {
        Ok(self
            .config
            .counterexample
            .as_ref()
            .map(|c| c.params.clone())
            .unwrap_or_else(Counterexample::one_dimensional))
    }

    pub fn field(&self) -> Result<RateField, Error> {
        let e = &self.config.environment;
        let d = self.dim();
        let bounds = |lo: f64, hi: f64| (e.lambda_minus.unwrap_or(lo), e.lambda_plus.unwrap_or(hi));
        let trig = || -> Result<TrigPolynomial, Error> {
            TrigPolynomial::new(d, e.offset.ok_or_else(|| missing("environment.offset"))?, e.terms.clone())
        };
        let slow = || -> Result<QuadraticSlow, Error> {
            let s = e.slow.ok_or_else(|| missing("environment.slow"))?;
            Ok(QuadraticSlow {
                base: s.base,
                coef: s.coef,
                cap: s.cap,
            })
        };
        match e.regime {
            RegimeName::Constant => {
                let v = e.value.ok_or_else(|| missing("environment.value"))?;
                let (lo, hi) = bounds(v, v);
                RateField::new(d, Regime::Constant(v), lo, hi)
            }
            RegimeName::Periodic => {
                let f = trig()?;
                let (lo, hi) = f.crude_bounds();
                let (lo, hi) = bounds(lo, hi);
                RateField::new(d, Regime::Periodic(Arc::new(f)), lo, hi)
            }
            RegimeName::Slow => {
                let s = slow()?;
                let (lo, hi) = s.bounds();
                let (lo, hi) = bounds(lo, hi);
                RateField::new(d, Regime::Slow(Arc::new(s)), lo, hi)
            }
            RegimeName::LocallyPeriodic => {
                let s = slow()?;
                let f = trig()?;
                let (a, b) = s.bounds();
                let (c, dd) = f.crude_bounds();
                let (lo, hi) = bounds((a * c).min(b * c), (a * dd).max(b * dd));
                let prod = ProductField {
                    slow: Arc::new(s),
                    fast: Arc::new(f),
                };
                RateField::new(d, Regime::LocallyPeriodic(Arc::new(prod)), lo, hi)
            }
            RegimeName::Counterexample => self.counterexample()?.rate_field(),
        }
    }

    pub fn grid(&self) -> Result<TorusGrid, Error> {
        TorusGrid::new(self.dim(), self.config.grid.n)
    }

    /// Kernel, field, grid and solver settings; the disk cache is attached
    /// by the caller.
    pub fn model(&self) -> Result<Model, Error> {
        Ok(Model::new(self.kernel()?, self.field()?)?
            .with_grid(self.grid()?)?
            .with_spectral(self.config.spectral)
            .with_legendre(self.config.legendre))
    }

    pub fn read_path(&self, p: &FsPath) -> Result<Path, Error> {
        Path::read(&self.resolve(p))
    }

    pub fn scan_position(&self) -> Vec<f64> {
        self.config.scan.x.clone().unwrap_or_else(|| vec![0.0; self.dim()])
    }
}

fn missing(key: &str) -> Error {
    Error::InvalidConfig(format!("missing key {key}"))
}
