//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ldp_cli::config::LoadedConfig;
use ldp_cli::output::Table;
use ldp_cli::{run, Cli, Command};
use ldp_core::environment::{PeriodicField, SeparableField, TorusProfile, TrigPolynomial, TrigTerm};
use ldp_core::hamiltonian::ConvexHamiltonian;
use ldp_core::kernel::{Envelope, JumpKernel, TabulatedProfile};
use ldp_core::legendre::{lagrangian, LegendreConfig};
use ldp_core::path_rate::effective_flow;
use ldp_core::simulator::Simulator;
use ldp_core::torus_spectral::{solve, SpectralConfig, TorusGrid};
use ldp_core::Hamiltonian;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_cli(command: Command, config: &str, overrides: &[&str], workers: Option<usize>) -> (tempfile::TempDir, Vec<PathBuf>) {
    let out = tempfile::tempdir().unwrap();
    let cli = Cli {
        command,
        config: Some(configs().join(config)),
        out: Some(out.path().to_path_buf()),
        cache: None,
        seed: None,
        workers,
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
    };
    let report = run(&cli).unwrap();
    assert!(report.outcome.passed);
    (out, report.written)
}

fn read_table(p: &PathBuf) -> Table {
    Table::parse(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn col(t: &Table, name: &str) -> Vec<f64> {
    t.column(name).unwrap().iter().map(|s| s.parse().unwrap()).collect()
}

/// `sup_λ (λ - e^{λ²/2} + 1)` by a fine grid then golden refinement.
fn gaussian_rate_at_one() -> f64 {
    let phi = |l: f64| l - (0.5 * l * l).exp() + 1.0;
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
    for i in 0..=300_000 {
        let l = 3.0 * i as f64 / 300_000.0;
        if phi(l) > best {
            best = phi(l);
            arg = l;
        }
    }
    let (mut a, mut b) = (arg - 1e-5, arg + 1e-5);
    for _ in 0..80 {
        let m1 = a + 0.382 * (b - a);
        let m2 = a + 0.618 * (b - a);
        if phi(m1) < phi(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    phi(0.5 * (a + b))
}

fn term(amplitude: f64, freq_xi: Vec<i32>, freq_eta: Vec<i32>, phase: f64) -> TrigTerm {
    TrigTerm {
        amplitude,
        freq_xi,
        freq_eta,
        phase,
    }
}

fn trig(dim: usize, offset: f64, terms: Vec<TrigTerm>) -> PeriodicField {
    let f = TrigPolynomial::new(dim, offset, terms).unwrap();
    let (lo, hi) = f.crude_bounds();
    PeriodicField::new(dim, Arc::new(f), lo, hi)
}

fn skewed_kernel() -> JumpKernel {
    let z: Vec<f64> = (0..=32).map(|i| -1.0 + i as f64 / 16.0).collect();
    let v: Vec<f64> = z.iter().map(|&z| (1.0 - z * z) * (1.0 + 0.8 * z)).collect();
    let env = Envelope { c: 5.0, k: 0.1, p: 2.0 };
    JumpKernel::tabulated(TabulatedProfile::new(z, v).unwrap(), env).unwrap()
}

/// Five periodic test environments with their kernels and grids.
fn test_fields() -> Vec<(&'static str, JumpKernel, PeriodicField, TorusGrid)> {
    let g1 = JumpKernel::gaussian(1).unwrap();
    let sep = SeparableField {
        site: TorusProfile::Trig {
            offset: 1.0,
            modes: vec![(0.4, vec![1], 0.2)],
        },
        jump: TorusProfile::Peak {
            center: vec![0.3],
            width: 0.3,
            low: 0.5,
            high: 2.0,
        },
    };
    let (lo, hi) = sep.bounds();
    vec![
        (
            "site-and-target",
            g1.clone(),
            trig(1, 1.0, vec![term(0.3, vec![1], vec![0], 0.0), term(0.2, vec![0], vec![1], 0.7)]),
            TorusGrid::new(1, 32).unwrap(),
        ),
        (
            "difference",
            g1.clone(),
            trig(1, 1.5, vec![term(0.5, vec![1], vec![-1], 0.0)]),
            TorusGrid::new(1, 32).unwrap(),
        ),
        (
            "skewed-kernel",
            skewed_kernel(),
            trig(1, 2.0, vec![term(0.6, vec![1], vec![0], 0.0), term(0.4, vec![0], vec![2], 0.3)]),
            TorusGrid::new(1, 32).unwrap(),
        ),
        (
            "separable-peak",
            JumpKernel::unit_box(1).unwrap(),
            PeriodicField::new(1, Arc::new(sep), lo, hi),
            TorusGrid::new(1, 48).unwrap(),
        ),
        (
            "two-dimensional",
            JumpKernel::gaussian(2).unwrap(),
            trig(
                2,
                1.2,
                vec![
                    term(0.3, vec![1, 0], vec![0, 0], 0.0),
                    term(0.2, vec![0, 1], vec![1, 0], 0.4),
                    term(0.1, vec![0, 0], vec![0, 1], 1.1),
                ],
            ),
            TorusGrid::new(2, 12).unwrap(),
        ),
    ]
}

fn c1_closed_form() -> Outcome {
    let start = Instant::now();
    let grid = TorusGrid::new(1, 64).unwrap();
    let k = JumpKernel::gaussian(1).unwrap();
    let field = PeriodicField::constant(1, 1.0);
    let mut worst: f64 = 0.0;
    for l in [-2.0, -1.0, 0.0, 1.0, 2.0f64] {
        let (_, r) = solve(grid, &k, &field, &[l], SpectralConfig::default()).unwrap();
        worst = worst.max((r.theta - ((0.5 * l * l).exp() - 1.0)).abs());
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-6 && t < Duration::from_secs(10),
        format!("max |θ - (e^(λ²/2) - 1)| = {worst:.2e}, {:.2} s", t.as_secs_f64()),
    )
}

fn c2_theta_zero() -> Outcome {
    let mut worst_theta: f64 = 0.0;
    let mut worst_u: f64 = 0.0;
    for (_, k, f, g) in test_fields() {
        let (_, r) = solve(g, &k, &f, &vec![0.0; g.dim()], SpectralConfig::default()).unwrap();
        worst_theta = worst_theta.max(r.theta.abs());
        worst_u = r.u.iter().fold(worst_u, |m, u| m.max((u - 1.0).abs()));
    }
    outcome(
        worst_theta < 1e-10 && worst_u < 1e-8,
        format!("max |θ(0)| = {worst_theta:.2e}, max |u₀ - 1| = {worst_u:.2e} over 5 fields"),
    )
}

fn c3_gradient() -> Outcome {
    let cfg = SpectralConfig::default();
    let (mut vs_drift, mut vs_fd): (f64, f64) = (0.0, 0.0);
    let mut largest_drift: f64 = 0.0;
    for (_, k, f, g) in test_fields() {
        let d = g.dim();
        let zero = vec![0.0; d];
        let (op, r) = solve(g, &k, &f, &zero, cfg).unwrap();
        let grad = op.theta_grad(&r).unwrap();
        let eff = op.effective_coeffs(&r).unwrap();
        let h = 1e-4;
        for i in 0..d {
            vs_drift = vs_drift.max((grad[i] + eff.b[i]).abs());
            largest_drift = largest_drift.max(eff.b[i].abs());
            let mut lp = zero.clone();
            lp[i] = h;
            let mut lm = zero.clone();
            lm[i] = -h;
            let tp = solve(g, &k, &f, &lp, cfg).unwrap().1.theta;
            let tm = solve(g, &k, &f, &lm, cfg).unwrap().1.theta;
            vs_fd = vs_fd.max((grad[i] - (tp - tm) / (2.0 * h)).abs());
        }
    }
    outcome(
        vs_drift < 1e-8 && vs_fd < 1e-5,
        format!(
            "max |∇θ(0) + b| = {vs_drift:.2e}, max |∇θ(0) - FD| = {vs_fd:.2e} (largest |b| {largest_drift:.3})"
        ),
    )
}

fn c4_convexity() -> Outcome {
    let cfg = SpectralConfig::default();
    let mut min_eig = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for (_, k, f, g) in test_fields() {
        let d = g.dim();
        let (op, r) = solve(g, &k, &f, &vec![0.0; d], cfg).unwrap();
        let hess = op.theta_hess(&r).unwrap();
        min_eig = min_eig.min(hess.clone().symmetric_eigenvalues().min());
        let eff = op.effective_coeffs(&r).unwrap();
        for i in 0..d {
            for j in 0..d {
                let sym = 0.5 * (eff.theta_matrix[i][j] + eff.theta_matrix[j][i]);
                worst = worst.max((sym - 0.5 * hess[(i, j)]).abs());
            }
        }
    }
    outcome(
        min_eig > 0.0 && worst < 1e-4,
        format!("min eig ∇∇θ(0) = {min_eig:.4}, max |sym Θ - ½∇∇θ(0)| = {worst:.2e}"),
    )
}

fn periodic_hamiltonian() -> Hamiltonian {
    let (_, k, f, g) = test_fields().into_iter().next().unwrap();
    Hamiltonian::spectral(k, g, f, SpectralConfig::default()).unwrap()
}

fn c5_biconjugation() -> Outcome {
    let h = periodic_hamiltonian();
    let lcfg = LegendreConfig::default();
    let lo = h.grad(&[-3.0]).unwrap()[0];
    let hi = h.grad(&[3.0]).unwrap()[0];
    let l_of = |z: f64| lagrangian(&h, &[z], &lcfg).unwrap().value;
    let lambdas: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
    let mut all_inside = true;
    let gaps: Vec<f64> = lambdas
        .par_iter()
        .map(|&lam| {
            // golden section of the concave ζ ↦ λζ - L(ζ)
            let phi = |z: f64| lam * z - l_of(z);
            let (mut a, mut b) = (lo, hi);
            for _ in 0..70 {
                let m1 = a + 0.381_966 * (b - a);
                let m2 = a + 0.618_034 * (b - a);
                if phi(m1) < phi(m2) {
                    a = m1;
                } else {
                    b = m2;
                }
            }
            let conj = phi(0.5 * (a + b));
            (h.value(&[lam]).unwrap().value - conj).abs()
        })
        .collect();
    for &lam in &lambdas {
        all_inside &= h.value(&[lam]).unwrap().in_gamma;
    }
    let worst = gaps.iter().fold(0.0f64, |m, g| m.max(*g));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(f64, f64)> = (0..500)
        .map(|_| (rng.random_range(-2.5..2.5), rng.random_range(lo..hi)))
        .collect();
    let violations = pairs
        .par_iter()
        .filter(|(lam, z)| lam * z > h.value(&[*lam]).unwrap().value + l_of(*z) + 1e-9)
        .count();
    outcome(
        all_inside && worst < 1e-4 && violations == 0,
        format!("max |H - L*| = {worst:.2e} on 41 tilts, Young-Fenchel violations {violations}/500"),
    )
}

fn c6_zero_of_lagrangian() -> Outcome {
    let h = periodic_hamiltonian();
    let lcfg = LegendreConfig::default();
    let star = h.grad(&[0.0]).unwrap();
    let at_star = lagrangian(&h, &star, &lcfg).unwrap().value;
    let zs: Vec<f64> = (0..81).map(|i| -2.0 + 0.05 * i as f64).collect();
    let min = zs
        .par_iter()
        .map(|&z| lagrangian(&h, &[z], &lcfg).unwrap().value)
        .reduce(|| f64::INFINITY, f64::min);
    outcome(
        at_star.abs() < 1e-8 && min >= 0.0,
        format!("L(ζ*) = {at_star:.2e} at ζ* = {:.6}, min over 81 samples {min:.2e}", star[0]),
    )
}

fn c7_fixed_time_ldp() -> Outcome {
    let start = Instant::now();
    let oracle = gaussian_rate_at_one();
    let (_dir, files) = run_cli(Command::LdpVerify, "compound_poisson.toml", &[], None);
    let t = read_table(&files[0]);
    let eps = col(&t, "eps");
    let elp = col(&t, "eps_log_p");
    let rel: Vec<f64> = elp.iter().map(|v| (v + oracle).abs() / oracle).collect();
    let monotone = rel.windows(2).all(|w| w[1] < w[0]);
    let last = *rel.last().unwrap();
    let elapsed = start.elapsed();
    let table: Vec<String> = eps
        .iter()
        .zip(&rel)
        .map(|(e, r)| format!("ε={e}: {r:.4}"))
        .collect();
    outcome(
        eps.last() == Some(&0.02) && last < 0.15 && monotone && elapsed < Duration::from_secs(300),
        format!(
            "L(1) = {oracle:.6}, relative errors {}, {:.1} s",
            table.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn c8_path_ldp() -> Outcome {
    let oracle = gaussian_rate_at_one();
    let (_dir, files) = run_cli(Command::LdpVerify, "tube_path.toml", &[], None);
    let t = read_table(&files[0]);
    let elp = col(&t, "eps_log_p")[0];
    let hits = col(&t, "hits")[0];
    let rel = (elp + oracle).abs() / oracle;
    outcome(
        rel < 0.25,
        format!("ε ln p̂ = {elp:.4} vs -T L(1) = {:.4}, relative error {rel:.3} ({hits} hits)", -oracle),
    )
}

fn c9_effective_flow() -> Outcome {
    let cfg = LoadedConfig::load(&configs().join("slow_flow.toml"), &[]).unwrap();
    let model = cfg.model().unwrap();
    let sim = cfg.config.simulation.clone().unwrap();
    let fb = cfg.config.flow.clone().unwrap();
    let flow = effective_flow(&model, &fb.x0, fb.horizon, fb.steps).unwrap();
    let sc = ldp_core::SimConfig {
        eps: sim.eps,
        horizon: sim.horizon,
        x0: sim.x0.clone(),
        seed: sim.seed,
        tilt: ldp_core::TiltChoice::None,
        replications: sim.replications,
    };
    let dists = Simulator::new(&model, &sc, None)
        .unwrap()
        .run_all(|tr| tr.sup_distance_to(&flow))
        .unwrap();
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    let c = sim.flow_band.unwrap();
    let bound = c * sim.eps.sqrt();
    let end = flow.points().last().unwrap()[0];
    outcome(
        mean < bound && sim.eps == 0.01 && dists.len() == 200,
        format!("mean sup|ξ - γ⁰| = {mean:.4} < {c}·√ε = {bound:.3}; γ⁰(1) = {end:.6} (tan(1/4) = {:.6})", 0.25f64.tan()),
    )
}

fn c10_counterexample() -> Outcome {
    let (_dir, files) = run_cli(Command::GammaRegion, "counterexample.toml", &[], None);
    let t = read_table(&files[0]);
    let lam = col(&t, "lambda_1");
    let inside = t.column("in_gamma").unwrap();
    let outside: Vec<f64> = lam
        .iter()
        .zip(&inside)
        .filter(|(l, s)| **s == "false" && l.abs() <= 20.0)
        .map(|(l, _)| *l)
        .collect();
    let origin = lam.iter().position(|l| *l == 0.0).map(|i| inside[i] == "true");
    outcome(
        !outside.is_empty() && origin == Some(true),
        format!(
            "origin inside: {:?}; {} tilts outside, from {:?} to {:?}",
            origin,
            outside.len(),
            outside.first(),
            outside.last()
        ),
    )
}

fn c11_growth() -> Outcome {
    let (_, k, f, g) = test_fields().pop().unwrap();
    let cfg = SpectralConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rays: Vec<[f64; 2]> = (0..10)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            [a.cos(), a.sin()]
        })
        .collect();
    let slopes: Vec<f64> = rays
        .par_iter()
        .map(|dir| {
            let rs = [4.0, 6.0, 8.0];
            let ys: Vec<f64> = rs
                .iter()
                .map(|r| {
                    let (_, res) = solve(g, &k, &f, &[r * dir[0], r * dir[1]], cfg).unwrap();
                    (res.theta + res.g_max).ln()
                })
                .collect();
            let mr = 6.0;
            let my = ys.iter().sum::<f64>() / 3.0;
            let num: f64 = rs.iter().zip(&ys).map(|(r, y)| (r - mr) * (y - my)).sum();
            num / 8.0
        })
        .collect();
    let min = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(min > 0.0, format!("smallest fitted slope over 10 rays {min:.3}"))
}

fn c12_determinism() -> Outcome {
    let ov = ["simulation.replications=20000"];
    let (_a, fa) = run_cli(Command::LdpVerify, "compound_poisson.toml", &ov, Some(1));
    let (_b, fb) = run_cli(Command::LdpVerify, "compound_poisson.toml", &ov, Some(4));
    let ta = std::fs::read_to_string(&fa[0]).unwrap();
    let tb = std::fs::read_to_string(&fb[0]).unwrap();
    outcome(
        ta == tb,
        format!("{} bytes, identical with 1 and 4 workers: {}", ta.len(), ta == tb),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("spectral eigenvalue matches closed form", c1_closed_form),
        ("θ(0) = 0 with constant eigenfunction", c2_theta_zero),
        ("∇θ(0) equals minus the effective drift", c3_gradient),
        ("strict convexity and diffusion identity at 0", c4_convexity),
        ("Legendre biconjugation and Young-Fenchel", c5_biconjugation),
        ("Lagrangian vanishes at the mean velocity", c6_zero_of_lagrangian),
        ("fixed-time decay rate of a tail event", c7_fixed_time_ldp),
        ("decay rate of a tube around a line", c8_path_ldp),
        ("trajectories follow the effective flow", c9_effective_flow),
        ("region without principal eigenvalue", c10_counterexample),
        ("exponential growth along rays", c11_growth),
        ("identical tables for identical seeds", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!res.passed);
        println!(
            "[{}] {:>2} {name}: {} ({:.1} s)",
            if res.passed { "PASS" } else { "FAIL" },
            i + 1,
            res.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
