//! Exact simulation of the scaled jump process by thinning, optional
//! exponential tilting with likelihood-ratio weights, and Monte Carlo
//! estimates of event probabilities.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::hamiltonian::ConvexHamiltonian;
use crate::kernel::{norm, TiltedSampler};
use crate::legendre::lagrangian;
use crate::model::Model;
use crate::path_rate::{rate, Path, RateConfig};

/// Name of the generator recorded in output metadata.
pub const RNG_NAME: &str = "ChaCha8Rng(seed, stream = replication)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TiltChoice {
    /// Plain thinning, unit weights.
    #[default]
    None,
    /// Tilt at the maximizer dual to the event's dominant point.
    Auto,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub eps: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub tilt: TiltChoice,
    pub replications: usize,
}

impl SimConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        check_dim(dim, self.x0.len())?;
        check_finite("x0", &self.x0)?;
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidConfig(format!("ε must lie in (0, 1] (got {})", self.eps)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive (got {})",
                self.horizon
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if let TiltChoice::Fixed(l) = &self.tilt {
            check_dim(dim, l.len())?;
            check_finite("tilt", l)?;
        }
        Ok(())
    }
}

/// States after each accepted jump, starting with `(0, x0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub horizon: f64,
    /// Log likelihood ratio of the original law against the sampling law.
    pub log_weight: f64,
    pub proposals: usize,
    pub accepted: usize,
    /// Sum of acceptance probabilities over all proposals.
    pub acceptance_sum: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    pub fn state_at(&self, t: f64) -> &[f64] {
        let j = self.times.partition_point(|&s| s <= t).max(1) - 1;
        &self.states[j]
    }

    /// `sup_{t ≤ T} |ξ(t) - γ(t)|`. The state is constant between jumps and
    /// `γ` is affine between its breakpoints, so the sup over each piece is
    /// attained at an end.
    pub fn sup_distance_to(&self, path: &Path) -> f64 {
        let mut worst: f64 = 0.0;
        let mut gap = |x: &[f64], t: f64| {
            let g = path.eval(t);
            let d = x
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        };
        let pt = path.times();
        for (i, x) in self.states.iter().enumerate() {
            let t0 = self.times[i];
            let t1 = self.times.get(i + 1).copied().unwrap_or(self.horizon);
            gap(x, t0);
            gap(x, t1);
            let lo = pt.partition_point(|&s| s <= t0);
            for &s in pt[lo..].iter().take_while(|&&s| s < t1) {
                gap(x, s);
            }
        }
        worst
    }

    /// One `t x₁ … x_d` line per state, after a comment with the horizon and
    /// log weight.
    pub fn to_text(&self) -> String {
        let mut s = format!("# horizon {} log_weight {}\n", self.horizon, self.log_weight);
        for (t, x) in self.times.iter().zip(&self.states) {
            let _ = write!(s, "{t}");
            for v in x {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    /// Reads the format written by [`Trajectory::to_text`]. Proposal
    /// counters are not stored and come back as zero.
    pub fn parse(text: &str) -> Result<Self> {
        let mut horizon = None;
        let mut log_weight = 0.0;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let bad = |m: String| Error::InvalidPath(m);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let words: Vec<&str> = rest.split_whitespace().collect();
                for pair in words.chunks(2) {
                    if let [k @ ("horizon" | "log_weight"), v] = pair {
                        let v: f64 = v.parse().map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
                        if *k == "horizon" {
                            horizon = Some(v);
                        } else {
                            log_weight = v;
                        }
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            if vals.len() < 2 {
                return Err(bad(format!("line {}: expected a time and a state", n + 1)));
            }
            times.push(vals[0]);
            states.push(vals[1..].to_vec());
        }
        if times.is_empty() {
            return Err(bad("trajectory has no states".into()));
        }
        let horizon = horizon.unwrap_or(times[times.len() - 1]);
        Ok(Self {
            times,
            states,
            horizon,
            log_weight,
            proposals: 0,
            accepted: 0,
            acceptance_sum: 0.0,
        })
    }
}

/// Prepared sampler for one configuration.
pub struct Simulator<'a> {
    model: &'a Model,
    cfg: SimConfig,
    sampler: TiltedSampler,
    lambda_plus: f64,
    /// Proposal clock rate `Λ⁺ M(λ) / ε`.
    clock: f64,
    /// `-(Λ⁺/ε)(1 - M(λ)) T`.
    log_weight_offset: f64,
}

impl<'a> Simulator<'a> {
    /// `tilt` is the kernel tilt (zero or `None` for plain thinning).
    pub fn new(model: &'a Model, cfg: &SimConfig, tilt: Option<&[f64]>) -> Result<Self> {
        cfg.validate(model.dim())?;
        let zero = vec![0.0; model.dim()];
        let sampler = TiltedSampler::new(model.kernel(), tilt.unwrap_or(&zero))?;
        let lambda_plus = model.field().lambda_plus();
        let base = lambda_plus / cfg.eps;
        let m = sampler.mass();
        Ok(Self {
            model,
            cfg: cfg.clone(),
            sampler,
            lambda_plus,
            clock: base * m,
            log_weight_offset: -base * (1.0 - m) * cfg.horizon,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn tilt(&self) -> &[f64] {
        self.sampler.tilt()
    }

    /// Replication `rep` on its own generator stream.
    pub fn run(&self, rep: u64) -> Result<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(rep);
        let d = self.model.dim();
        let eps = self.cfg.eps;
        let horizon = self.cfg.horizon;
        let field = self.model.field();
        let mut x = self.cfg.x0.clone();
        let mut y = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut tr = Trajectory {
            times: vec![0.0],
            states: vec![x.clone()],
            horizon,
            log_weight: self.log_weight_offset,
            proposals: 0,
            accepted: 0,
            acceptance_sum: 0.0,
        };
        let mut t = 0.0;
        loop {
            let e: f64 = rng.sample(Exp1);
            t += e / self.clock;
            if t > horizon {
                break;
            }
            tr.log_weight += self.sampler.sample_into(&mut rng, &mut z)?;
            for i in 0..d {
                y[i] = x[i] - eps * z[i];
            }
            let p = field.eval_scaled_unchecked(&x, &y, eps) / self.lambda_plus;
            tr.proposals += 1;
            tr.acceptance_sum += p;
            if rng.random::<f64>() < p {
                std::mem::swap(&mut x, &mut y);
                tr.accepted += 1;
                tr.times.push(t);
                tr.states.push(x.clone());
            }
        }
        Ok(tr)
    }

    /// Runs every replication in parallel; results come back in replication
    /// order regardless of scheduling.
    pub fn run_all<T: Send>(&self, f: impl Fn(&Trajectory) -> T + Sync) -> Result<Vec<T>> {
        (0..self.cfg.replications as u64)
            .into_par_iter()
            .map(|rep| self.run(rep).map(|tr| f(&tr)))
            .collect()
    }
}

/// Set of paths whose probability is estimated.
#[derive(Debug, Clone)]
pub enum Event {
    Whole,
    /// `n · ξ(T) ≥ offset`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// `|ξ(T) - center| ≤ radius`.
    Ball { center: Vec<f64>, radius: f64 },
    /// `sup_t |ξ(t) - γ(t)| ≤ radius`.
    Tube { path: Path, radius: f64 },
}

impl Event {
    pub fn contains(&self, tr: &Trajectory) -> bool {
        match self {
            Event::Whole => true,
            Event::HalfSpace { normal, offset } => {
                normal.iter().zip(tr.final_state()).map(|(n, x)| n * x).sum::<f64>() >= *offset
            }
            Event::Ball { center, radius } => {
                let d: Vec<f64> = tr.final_state().iter().zip(center).map(|(a, b)| a - b).collect();
                norm(&d) <= *radius
            }
            Event::Tube { path, radius } => tr.sup_distance_to(path) <= *radius,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Event::Whole => "whole".into(),
            Event::HalfSpace { normal, offset } => format!("halfspace(n={normal:?},c={offset})"),
            Event::Ball { center, radius } => format!("ball(c={center:?},r={radius})"),
            Event::Tube { path, radius } => format!(
                "tube(breakpoints={},T={},r={radius})",
                path.times().len(),
                path.horizon()
            ),
        }
    }

    fn check(&self, dim: usize, horizon: f64) -> Result<()> {
        match self {
            Event::Whole => Ok(()),
            Event::HalfSpace { normal, offset } => {
                check_dim(dim, normal.len())?;
                check_finite("normal", normal)?;
                check_finite("offset", &[*offset])?;
                if norm(normal) == 0.0 {
                    return Err(Error::InvalidConfig("half-space normal is zero".into()));
                }
                Ok(())
            }
            Event::Ball { center, radius } => {
                check_dim(dim, center.len())?;
                check_finite("center", center)?;
                if !(*radius > 0.0) {
                    return Err(Error::InvalidConfig("ball radius must be positive".into()));
                }
                Ok(())
            }
            Event::Tube { path, radius } => {
                check_dim(dim, path.dim())?;
                if (path.horizon() - horizon).abs() > 1e-9 * horizon {
                    return Err(Error::InvalidConfig(format!(
                        "tube path horizon {} differs from the simulation horizon {horizon}",
                        path.horizon()
                    )));
                }
                if !(*radius > 0.0) {
                    return Err(Error::InvalidConfig("tube radius must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Infimum of the action over an event and the tilt dual to its dominant
/// point. `rate` is NaN when no closed expression is available.
#[derive(Debug, Clone, Serialize)]
pub struct EventTheory {
    pub rate: f64,
    pub tilt: Option<Vec<f64>>,
}

/// `sup_{s ≥ 0} (s c - H(s n))` and its maximizer, by golden section.
fn halfspace_dual(h: &dyn ConvexHamiltonian, normal: &[f64], c: f64) -> Result<(f64, f64)> {
    let phi = |s: f64| -> Result<f64> {
        let l: Vec<f64> = normal.iter().map(|n| s * n).collect();
        Ok(s * c - h.value(&l)?.value)
    };
    let zero = vec![0.0; normal.len()];
    let slope0 = c - normal.iter().zip(&h.grad(&zero)?).map(|(n, g)| n * g).sum::<f64>();
    if slope0 <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut hi = 1.0;
    while phi(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::SearchRadiusOverflow { radius: hi });
        }
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, hi);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (phi(x1)?, phi(x2)?);
    while b - a > 1e-11 * hi.max(1.0) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = phi(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = phi(x1)?;
        }
    }
    let s = 0.5 * (a + b);
    Ok((phi(s)?.max(0.0), s))
}

fn unit_directions(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..720)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / 720.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci sphere
            let n = 4000;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let zc = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - zc * zc).sqrt();
                    let a = golden * i as f64;
                    let mut v = vec![r * a.cos(), r * a.sin(), zc];
                    v.resize(d, 0.0);
                    v
                })
                .collect()
        }
    }
}

/// Rate of the event and the dual tilt. Terminal events use `T L((y - x0)/T)`,
/// which requires a position-free Lagrangian; tubes use the action of the
/// tube's center path.
pub fn event_theory(model: &Model, cfg: &SimConfig, event: &Event) -> Result<EventTheory> {
    let d = model.dim();
    let t = cfg.horizon;
    event.check(d, t)?;
    let lcfg = model.legendre_config();
    match event {
        Event::Whole => Ok(EventTheory { rate: 0.0, tilt: None }),
        Event::Tube { path, .. } => {
            let r = rate(model, path, &RateConfig::default())?;
            let start = path.start().to_vec();
            let mean_v: Vec<f64> = path
                .eval(path.horizon())
                .iter()
                .zip(&start)
                .map(|(b, a)| (b - a) / path.horizon())
                .collect();
            let tilt = model.lagrangian_at(&start, &mean_v)?.argmax_lambda;
            Ok(EventTheory { rate: r.value, tilt: Some(tilt) })
        }
        Event::HalfSpace { normal, offset } => {
            let c = (offset - normal.iter().zip(&cfg.x0).map(|(n, x)| n * x).sum::<f64>()) / t;
            let (value, s) = model.with_hamiltonian(&cfg.x0, |h| halfspace_dual(h, normal, c))?;
            let tilt = normal.iter().map(|n| s * n).collect();
            let rate = if model.depends_on_position() { f64::NAN } else { t * value };
            Ok(EventTheory { rate, tilt: Some(tilt) })
        }
        Event::Ball { center, radius } => {
            let c: Vec<f64> = center.iter().zip(&cfg.x0).map(|(a, x)| (a - x) / t).collect();
            let r = radius / t;
            let (value, tilt) = model.with_hamiltonian(&cfg.x0, |h| {
                if d == 1 {
                    let star = h.grad(&[0.0])?[0];
                    let zeta = star.clamp(c[0] - r, c[0] + r);
                    let l = lagrangian(h, &[zeta], &lcfg)?;
                    return Ok((l.value, l.argmax_lambda));
                }
                // the ball is the intersection of its supporting half-spaces
                let mut best = (0.0, vec![0.0; d]);
                for u in unit_directions(d) {
                    let off = u.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() - r;
                    let (v, s) = halfspace_dual(h, &u, off)?;
                    if v > best.0 {
                        best = (v, u.iter().map(|a| s * a).collect());
                    }
                }
                Ok(best)
            })?;
            let rate = if model.depends_on_position() { f64::NAN } else { t * value };
            Ok(EventTheory { rate, tilt: Some(tilt) })
        }
    }
}

/// Monte Carlo estimate of an event probability.
#[derive(Debug, Clone, Serialize)]
pub struct EventEstimate {
    pub event: String,
    pub eps: f64,
    pub replications: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub stderr: f64,
    /// `ε ln p̂`; NaN without hits.
    pub eps_log_p: f64,
    /// One-sided 95% bound `3/n` reported when nothing hit.
    pub upper_bound: Option<f64>,
    /// `-inf` of the action over the event.
    pub theory: f64,
    pub tilt: Vec<f64>,
    /// Fraction of accepted proposals and mean acceptance probability.
    pub acceptance: f64,
    pub mean_acceptance_probability: f64,
}

pub fn estimate_event(model: &Model, cfg: &SimConfig, event: &Event) -> Result<EventEstimate> {
    cfg.validate(model.dim())?;
    let theory = event_theory(model, cfg, event)?;
    let tilt = match &cfg.tilt {
        TiltChoice::None => None,
        TiltChoice::Fixed(l) => Some(l.clone()),
        TiltChoice::Auto => theory.tilt.clone(),
    };
    let sim = Simulator::new(model, cfg, tilt.as_deref())?;
    let per_rep = sim.run_all(|tr| {
        let w = if event.contains(tr) { tr.log_weight.exp() } else { 0.0 };
        (w, tr.proposals, tr.accepted, tr.acceptance_sum)
    })?;
    let n = per_rep.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut hits = 0;
    let (mut proposals, mut accepted, mut acc_sum) = (0usize, 0usize, 0.0);
    for &(w, p, a, s) in &per_rep {
        sum += w;
        sum_sq += w * w;
        if w > 0.0 {
            hits += 1;
        }
        proposals += p;
        accepted += a;
        acc_sum += s;
    }
    let p_hat = sum / n;
    let var = if per_rep.len() > 1 {
        ((sum_sq - n * p_hat * p_hat) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let stderr = (var / n).sqrt();
    let (eps_log_p, upper_bound) = if hits == 0 {
        (f64::NAN, Some(3.0 / n))
    } else {
        (cfg.eps * p_hat.ln(), None)
    };
    let proposals_f = proposals.max(1) as f64;
    Ok(EventEstimate {
        event: event.describe(),
        eps: cfg.eps,
        replications: per_rep.len(),
        hits,
        p_hat,
        stderr,
        eps_log_p,
        upper_bound,
        theory: -theory.rate,
        tilt: sim.tilt().to_vec(),
        acceptance: accepted as f64 / proposals_f,
        mean_acceptance_probability: acc_sum / proposals_f,
    })
}
