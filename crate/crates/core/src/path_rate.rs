//! Piecewise-linear paths, the action functional `∫ L(γ, γ̇) dt` on them,
//! a reparametrization distance, and the effective flow.

use std::fmt::Write as _;
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_finite, Error, Result};
use crate::model::Model;
use crate::quadrature::gauss_legendre;

/// Polygonal path through `points[j]` at `times[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    times: Vec<f64>,
    points: Vec<Vec<f64>>,
}

impl Path {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != points.len() {
            return Err(Error::InvalidPath(format!(
                "need at least two breakpoints with one point each (got {} times, {} points)",
                times.len(),
                points.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidPath(format!("path must start at t = 0 (got {})", times[0])));
        }
        check_finite("path times", &times)?;
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPath(format!(
                "times must increase strictly ({} then {})",
                w[0], w[1]
            )));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidPath("points must have at least one coordinate".into()));
        }
        for p in &points {
            if p.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: p.len() });
            }
            check_finite("path point", p)?;
        }
        Ok(Self { times, points })
    }

    /// `x0 + v t` on `[0, T]`.
    pub fn straight(x0: &[f64], velocity: &[f64], horizon: f64) -> Result<Self> {
        if x0.len() != velocity.len() {
            return Err(Error::DimensionMismatch { expected: x0.len(), got: velocity.len() });
        }
        let end: Vec<f64> = x0.iter().zip(velocity).map(|(x, v)| x + v * horizon).collect();
        Self::new(vec![0.0, horizon], vec![x0.to_vec(), end])
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> &[f64] {
        &self.points[0]
    }

    pub fn velocity(&self, j: usize) -> Vec<f64> {
        let dt = self.times[j + 1] - self.times[j];
        self.points[j + 1]
            .iter()
            .zip(&self.points[j])
            .map(|(b, a)| (b - a) / dt)
            .collect()
    }

    /// Position at time `t`, held constant outside `[0, T]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= 0.0 {
            return self.points[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.points[n - 1].clone();
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        self.points[j]
            .iter()
            .zip(&self.points[j + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// The same polygon with every segment split into `parts` pieces.
    pub fn refine(&self, parts: usize) -> Self {
        let parts = parts.max(1);
        let mut times = vec![0.0];
        let mut points = vec![self.points[0].clone()];
        for j in 0..self.segments() {
            let (t0, t1) = (self.times[j], self.times[j + 1]);
            for q in 1..=parts {
                let w = q as f64 / parts as f64;
                times.push(if q == parts { t1 } else { t0 + w * (t1 - t0) });
                points.push(
                    self.points[j]
                        .iter()
                        .zip(&self.points[j + 1])
                        .map(|(a, b)| if q == parts { *b } else { a + w * (b - a) })
                        .collect(),
                );
            }
        }
        Self { times, points }
    }

    /// Reads `t x₁ … x_d` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidPath(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() < 2 {
                return Err(Error::InvalidPath(format!(
                    "line {}: expected a time and at least one coordinate",
                    lineno + 1
                )));
            }
            times.push(vals[0]);
            points.push(vals[1..].to_vec());
        }
        Self::new(times, points)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, p) in self.times.iter().zip(&self.points) {
            let _ = write!(s, "{t}");
            for x in p {
                let _ = write!(s, " {x}");
            }
            s.push('\n');
        }
        s
    }

    pub fn read(path: &FsPath) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Segment quadrature settings for position-dependent Lagrangians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RateConfig {
    pub initial_nodes: usize,
    pub max_nodes: usize,
    pub rel_tol: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            initial_nodes: 4,
            max_nodes: 64,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentRate {
    pub t0: f64,
    pub t1: f64,
    pub velocity: Vec<f64>,
    pub value: f64,
    /// Quadrature nodes of the accepted rule (1 when `L` is position-free).
    pub nodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub value: f64,
    pub finite: bool,
    pub segments: Vec<SegmentRate>,
}

fn segment_integral(model: &Model, path: &Path, j: usize, v: &[f64], n: usize) -> Result<f64> {
    let (t0, t1) = (path.times[j], path.times[j + 1]);
    let half = 0.5 * (t1 - t0);
    let mid = 0.5 * (t1 + t0);
    let (nodes, weights) = gauss_legendre(n);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let pos = path.eval(mid + half * x);
        acc += w * model.lagrangian_at(&pos, v)?.value;
    }
    Ok(half * acc)
}

/// `∫₀ᵀ L(γ(t), γ̇(t)) dt` for a polygonal `γ`.
pub fn rate(model: &Model, path: &Path, cfg: &RateConfig) -> Result<RateReport> {
    if path.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: path.dim() });
    }
    let segments: Vec<SegmentRate> = (0..path.segments())
        .into_par_iter()
        .map(|j| {
            let v = path.velocity(j);
            let (t0, t1) = (path.times[j], path.times[j + 1]);
            if !model.depends_on_position() {
                let l = model.lagrangian_at(path.start(), &v)?.value;
                return Ok(SegmentRate { t0, t1, velocity: v, value: (t1 - t0) * l, nodes: 1 });
            }
            let mut n = cfg.initial_nodes.max(1);
            let mut coarse = segment_integral(model, path, j, &v, n)?;
            loop {
                let fine = segment_integral(model, path, j, &v, 2 * n)?;
                n *= 2;
                if (fine - coarse).abs() <= cfg.rel_tol * fine.abs() + 1e-14 || n >= cfg.max_nodes {
                    return Ok(SegmentRate { t0, t1, velocity: v, value: fine, nodes: n });
                }
                coarse = fine;
            }
        })
        .collect::<Result<_>>()?;
    let value: f64 = segments.iter().map(|s| s.value).sum();
    Ok(RateReport { value, finite: value.is_finite(), segments })
}

/// Upper bound on the reparametrization distance together with the plain
/// sup distance.
#[derive(Debug, Clone, Serialize)]
pub struct PathDistance {
    pub distance: f64,
    pub sup_distance: f64,
    /// `sup |log slope|` of the optimized time change.
    pub stretch: f64,
    /// Values of the time change at the equally spaced knots.
    pub time_change: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DistanceConfig {
    pub knots: usize,
    /// Resolution of the time-change values in the global search, per knot
    /// interval.
    pub levels_per_knot: usize,
    pub min_step: f64,
    pub max_sweeps: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            knots: 64,
            levels_per_knot: 16,
            min_step: 1e-9,
            max_sweeps: 10_000,
        }
    }
}

fn stretch(s: &[f64], values: &[f64]) -> f64 {
    s.windows(2)
        .zip(values.windows(2))
        .map(|(s, v)| ((v[1] - v[0]) / (s[1] - s[0])).ln().abs())
        .fold(0.0, f64::max)
}

/// `max(|log slope|, sup |f - g∘π|)` on one linear piece of `π` from
/// `(s0, u0)` to `(s1, u1)`. Between the collected times both paths are
/// affine, so the sup is attained at one of them.
fn piece_cost(f: &Path, g: &Path, s0: f64, s1: f64, u0: f64, u1: f64) -> f64 {
    let slope = (u1 - u0) / (s1 - s0);
    let mut worst = slope.ln().abs();
    let mut probe = |t: f64| {
        let u = u0 + slope * (t - s0);
        let a = f.eval(t);
        let b = g.eval(u);
        let gap = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(gap);
    };
    probe(s0);
    probe(s1);
    let lo = f.times.partition_point(|&t| t <= s0);
    for &t in f.times[lo..].iter().take_while(|&&t| t < s1) {
        probe(t);
    }
    let lo = g.times.partition_point(|&y| y <= u0);
    for &y in g.times[lo..].iter().take_while(|&&y| y < u1) {
        probe(s0 + (y - u0) / slope);
    }
    worst
}

fn total_cost(f: &Path, g: &Path, s: &[f64], values: &[f64]) -> f64 {
    (1..s.len())
        .map(|k| piece_cost(f, g, s[k - 1], s[k], values[k - 1], values[k]))
        .fold(0.0, f64::max)
}

/// Piece costs in decreasing order. Comparing these lexicographically lets
/// the search make progress when several pieces share the maximum.
fn sorted_costs(f: &Path, g: &Path, s: &[f64], values: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((1..s.len()).map(|k| piece_cost(f, g, s[k - 1], s[k], values[k - 1], values[k])));
    out.sort_unstable_by(|a, b| b.total_cmp(a));
}

/// Bottleneck dynamic program over time changes whose knot values lie on
/// the lattice `T i / M`.
fn lattice_search(f: &Path, g: &Path, s: &[f64], levels: usize, cap: f64) -> Vec<f64> {
    let k = s.len() - 1;
    let m = k * levels;
    let horizon = s[k];
    let u = |i: usize| horizon * i as f64 / m as f64;
    // admissible index jumps per knot interval
    let lo_jump = (((-cap).exp() * levels as f64).ceil() as usize).clamp(1, levels);
    let hi_jump = ((cap.exp() * levels as f64).floor() as usize).max(levels);
    let mut cost = vec![f64::INFINITY; m + 1];
    cost[0] = 0.0;
    let mut back = vec![vec![0u32; m + 1]; k + 1];
    for layer in 1..=k {
        let mut next = vec![f64::INFINITY; m + 1];
        let (s0, s1) = (s[layer - 1], s[layer]);
        for i in 1..=m {
            if layer == k && i != m {
                continue;
            }
            let jmin = i.saturating_sub(hi_jump);
            let jmax = i.saturating_sub(lo_jump);
            for j in jmin..=jmax {
                if !cost[j].is_finite() || cost[j] >= next[i] {
                    continue;
                }
                let c = cost[j].max(piece_cost(f, g, s0, s1, u(j), u(i)));
                if c < next[i] {
                    next[i] = c;
                    back[layer][i] = j as u32;
                }
            }
        }
        cost = next;
    }
    let mut values = vec![0.0; k + 1];
    let mut i = m;
    for layer in (1..=k).rev() {
        values[layer] = u(i);
        i = back[layer][i] as usize;
    }
    values[k] = horizon;
    values
}

/// Minimizes `max(ℓ(π), sup |f - g∘π|)` over time changes that are linear
/// between equally spaced knots: a lattice search followed by coordinate
/// search on blocks of knots.
pub fn path_distance(f: &Path, g: &Path, cfg: &DistanceConfig) -> Result<PathDistance> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: g.dim() });
    }
    let horizon = f.horizon();
    if (g.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::InvalidPath(format!(
            "horizons differ ({} vs {})",
            horizon,
            g.horizon()
        )));
    }
    let k = cfg.knots.max(1);
    let levels = cfg.levels_per_knot.max(1);
    let s: Vec<f64> = (0..=k).map(|i| horizon * i as f64 / k as f64).collect();
    let sup_distance = total_cost(f, g, &s, &s);
    if sup_distance == 0.0 {
        return Ok(PathDistance {
            distance: 0.0,
            sup_distance,
            stretch: 0.0,
            time_change: s,
        });
    }

    let mut values = lattice_search(f, g, &s, levels, sup_distance);
    if total_cost(f, g, &s, &values) > sup_distance {
        values = s.clone();
    }
    let mut best = Vec::with_capacity(k);
    let mut candidate = Vec::with_capacity(k);
    sorted_costs(f, g, &s, &values, &mut best);

    let mut widths = vec![];
    let mut w = 1;
    while w < k {
        widths.push(w);
        w *= 2;
    }
    if k > 1 && widths.last() != Some(&(k - 1)) {
        widths.push(k - 1);
    }
    let mut step = 0.5 * horizon / (k * levels) as f64;
    let mut sweeps = 0;
    let mut trial = values.clone();
    while step > cfg.min_step * horizon && sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut improved = false;
        for &w in &widths {
            for start in 1..=(k - w) {
                let end = start + w;
                for dir in [1.0, -1.0] {
                    let shift = dir * step;
                    if values[start] + shift <= values[start - 1]
                        || values[end - 1] + shift >= values[end]
                    {
                        continue;
                    }
                    trial.copy_from_slice(&values);
                    for v in &mut trial[start..end] {
                        *v += shift;
                    }
                    sorted_costs(f, g, &s, &trial, &mut candidate);
                    if candidate < best {
                        std::mem::swap(&mut best, &mut candidate);
                        values.copy_from_slice(&trial);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(PathDistance {
        distance: best[0],
        sup_distance,
        stretch: stretch(&s, &values),
        time_change: values,
    })
}

/// Fourth-order Runge–Kutta for `γ̇ = ∇_λ H(γ, 0)` with `steps` equal steps.
pub fn effective_flow(model: &Model, x0: &[f64], horizon: f64, steps: usize) -> Result<Path> {
    if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "flow needs a positive horizon and step count (got T={horizon}, steps={steps})"
        )));
    }
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x0.len() });
    }
    check_finite("x0", x0)?;
    let h = horizon / steps as f64;
    let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        x.iter().zip(k).map(|(x, k)| x + a * k).collect()
    };
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    times.push(0.0);
    points.push(x.clone());
    for i in 0..steps {
        let k1 = model.drift_at(&x)?;
        let k2 = model.drift_at(&axpy(&x, 0.5 * h, &k1))?;
        let k3 = model.drift_at(&axpy(&x, 0.5 * h, &k2))?;
        let k4 = model.drift_at(&axpy(&x, h, &k3))?;
        for j in 0..x.len() {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        check_finite("flow state", &x)?;
        times.push(if i + 1 == steps { horizon } else { (i + 1) as f64 * h });
        points.push(x.clone());
    }
    Path::new(times, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(at: f64, width: f64) -> Path {
        Path::new(
            vec![0.0, at, at + width, 1.0],
            vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip() {
        let p = Path::new(
            vec![0.0, 0.1, 0.7],
            vec![vec![0.0, 1.0], vec![1.0 / 3.0, -2.5e-9], vec![4.0, 5.0]],
        )
        .unwrap();
        let q = Path::parse(&format!("# header\n{}", p.to_text())).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_bad_paths() {
        assert!(Path::new(vec![0.0], vec![vec![0.0]]).is_err());
        assert!(Path::new(vec![0.0, 0.0], vec![vec![0.0], vec![1.0]]).is_err());
        assert!(Path::new(vec![0.0, 1.0], vec![vec![0.0], vec![1.0, 2.0]]).is_err());
        assert!(Path::new(vec![0.5, 1.0], vec![vec![0.0], vec![1.0]]).is_err());
        assert!(Path::parse("0 1\n1 x\n").is_err());
    }

    #[test]
    fn refine_keeps_the_polygon() {
        let p = ramp(0.3, 0.2);
        let q = p.refine(3);
        assert_eq!(q.segments(), 9);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert!((p.eval(t)[0] - q.eval(t)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn distance_of_identical_paths_is_zero() {
        let p = ramp(0.3, 0.2);
        let d = path_distance(&p, &p, &DistanceConfig::default()).unwrap();
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.sup_distance, 0.0);
    }

    #[test]
    fn time_change_beats_sup_distance_for_shifted_ramps() {
        let f = ramp(0.375, 1.0 / 64.0);
        let g = ramp(0.5, 1.0 / 64.0);
        let d = path_distance(&f, &g, &DistanceConfig::default()).unwrap();
        assert!((d.sup_distance - 1.0).abs() < 1e-12);
        assert!(d.distance < 0.35, "{d:?}");
        assert!(d.distance <= d.sup_distance);
    }

    #[test]
    fn flow_rejects_bad_steps() {
        let m = Model::new(
            crate::kernel::JumpKernel::gaussian(1).unwrap(),
            crate::environment::RateField::constant(1, 1.0).unwrap(),
        )
        .unwrap();
        assert!(effective_flow(&m, &[0.0], 1.0, 0).is_err());
        assert!(effective_flow(&m, &[0.0], -1.0, 4).is_err());
    }
}
