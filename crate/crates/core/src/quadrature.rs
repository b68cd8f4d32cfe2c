//! Small quadrature toolkit: Gauss–Legendre rules, composite panels on an
//! axis, and tensor products of axis rules.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// A one-dimensional quadrature rule.
#[derive(Debug, Clone)]
pub struct AxisRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AxisRule {
    /// Composite Gauss–Legendre rule: every interval between consecutive
    /// `breaks` is split into `panels` equal panels carrying `order` nodes.
    pub fn composite(breaks: &[f64], panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity((breaks.len().saturating_sub(1)) * panels * order);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let lo = a + p as f64 * h;
                let mid = lo + 0.5 * h;
                for (xi, wi) in x.iter().zip(&w) {
                    nodes.push(mid + 0.5 * h * xi);
                    weights.push(0.5 * h * wi);
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Visits every node of the tensor product of `axes` with its product weight.
pub fn for_each_tensor_node(axes: &[AxisRule], mut visit: impl FnMut(&[f64], f64)) {
    let d = axes.len();
    if d == 0 || axes.iter().any(AxisRule::is_empty) {
        return;
    }
    let mut idx = vec![0usize; d];
    let mut point: Vec<f64> = axes.iter().map(|a| a.nodes[0]).collect();
    loop {
        let w: f64 = idx.iter().zip(axes).map(|(&i, a)| a.weights[i]).product();
        visit(&point, w);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < axes[axis].len() {
                point[axis] = axes[axis].nodes[idx[axis]];
                break;
            }
            idx[axis] = 0;
            point[axis] = axes[axis].nodes[0];
        }
    }
}

/// Composite trapezoid rule on a uniform grid; used where the integrand is
/// only known on nodes.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
