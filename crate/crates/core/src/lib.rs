//! Large-deviation rate functions for small-jump Markov processes in
//! periodic and locally periodic environments.

pub mod environment;
pub mod error;
pub mod hamiltonian;
pub mod kernel;
pub mod legendre;
pub mod model;
pub mod path_rate;
pub mod quadrature;
pub mod scenario;
pub mod simulator;
pub mod torus_spectral;

pub use error::{Error, Result};
pub use kernel::{Envelope, JumpKernel, KernelFamily, TabulatedProfile, TiltedSampler};
pub use environment::{PairField, PeriodicField, RateField, Regime};
pub use torus_spectral::{SkewedOperator, SpectralConfig, SpectralResult, TorusGrid};
pub use hamiltonian::{ConvexHamiltonian, HValue, Hamiltonian};
pub use legendre::{l_t, lagrangian, LagrangianValue, LegendreConfig};
pub use model::Model;
pub use path_rate::{effective_flow, path_distance, rate, Path, PathDistance, RateConfig, RateReport};
pub use simulator::{estimate_event, Event, EventEstimate, SimConfig, Simulator, TiltChoice, Trajectory};
