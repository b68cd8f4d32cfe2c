use std::sync::Arc;

use ldp_core::environment::{QuadraticSlow, RateField, Regime, TrigPolynomial, TrigTerm};
use ldp_core::kernel::{Envelope, JumpKernel, TabulatedProfile};
use ldp_core::path_rate::effective_flow;
use ldp_core::simulator::{estimate_event, Event, SimConfig, Simulator, TiltChoice};
use ldp_core::Model;
use statrs::distribution::{ContinuousCDF, Normal, Poisson, Discrete};

fn gaussian_model() -> Model {
    Model::new(JumpKernel::gaussian(1).unwrap(), RateField::constant(1, 1.0).unwrap()).unwrap()
}

fn config(eps: f64, horizon: f64, reps: usize, seed: u64) -> SimConfig {
    SimConfig {
        eps,
        horizon,
        x0: vec![0.0],
        seed,
        tilt: TiltChoice::None,
        replications: reps,
    }
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn shifted_tent() -> JumpKernel {
    let z: Vec<f64> = (0..=48).map(|i| -2.5 + 0.0625 * i as f64).collect();
    let v: Vec<f64> = z.iter().map(|&z| 1.5 - (z + 1.0).abs()).collect();
    let env = Envelope { c: 1.0, k: 0.2, p: 2.0 };
    JumpKernel::tabulated(TabulatedProfile::new(z, v).unwrap(), env).unwrap()
}

#[test]
fn jump_count_is_poisson_with_constant_rate() {
    let m = gaussian_model();
    let sim = Simulator::new(&m, &config(0.1, 1.0, 10_000, 1), None).unwrap();
    let counts = sim.run_all(|tr| tr.accepted as f64).unwrap();
    let (mean, _) = mean_and_stderr(&counts);
    assert!((mean - 10.0).abs() < 0.4, "{mean}");
    let ends = sim.run_all(|tr| tr.final_state()[0]).unwrap();
    let (m0, se) = mean_and_stderr(&ends);
    assert!(m0.abs() < 3.0 * se, "{m0} ± {se}");
}

#[test]
fn tilted_exponential_moment_reproduces_hamiltonian() {
    let m = gaussian_model();
    let (eps, t, lam) = (0.25, 1.0, 1.0);
    let sim = Simulator::new(&m, &config(eps, t, 100_000, 2), Some(&[lam])).unwrap();
    let vals = sim
        .run_all(|tr| (tr.log_weight + lam / eps * tr.final_state()[0]).exp())
        .unwrap();
    let (mean, _) = mean_and_stderr(&vals);
    let want = (t / eps * ((0.5 * lam * lam).exp() - 1.0)).exp();
    assert!((mean / want - 1.0).abs() < 0.02, "{mean} vs {want}");
}

#[test]
fn histogram_tilt_of_tabulated_kernel_is_unbiased() {
    let k = shifted_tent();
    let lam = 0.6;
    let h = (k.exp_moment(&[lam]).unwrap() - 1.0) * 1.0;
    let m = Model::new(k, RateField::constant(1, 1.0).unwrap()).unwrap();
    let eps = 0.25;
    let sim = Simulator::new(&m, &config(eps, 1.0, 40_000, 3), Some(&[lam])).unwrap();
    let vals = sim
        .run_all(|tr| (tr.log_weight + lam / eps * tr.final_state()[0]).exp())
        .unwrap();
    let (mean, se) = mean_and_stderr(&vals);
    let want = (h / eps).exp();
    assert!((mean - want).abs() < 3.0 * se + 1e-3 * want, "{mean} ± {se} vs {want}");
}

/// `P(ε Σ_{i ≤ N} Z_i ≥ c)` with `N ~ Poisson(1/ε)`, `Z_i` standard normal.
fn compound_poisson_tail(eps: f64, c: f64) -> f64 {
    let pois = Poisson::new(1.0 / eps).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    (1..2000u64)
        .map(|n| pois.pmf(n) * normal.sf(c / (eps * (n as f64).sqrt())))
        .sum()
}

#[test]
fn tilted_estimate_matches_exact_tail() {
    let m = gaussian_model();
    let mut cfg = config(0.1, 1.0, 20_000, 4);
    cfg.tilt = TiltChoice::Auto;
    let ev = Event::HalfSpace { normal: vec![1.0], offset: 1.0 };
    let est = estimate_event(&m, &cfg, &ev).unwrap();
    let exact = compound_poisson_tail(0.1, 1.0);
    assert!((est.p_hat - exact).abs() < 3.0 * est.stderr, "{est:?} vs {exact}");
    assert!(est.stderr < 0.02 * est.p_hat);
    assert!((est.tilt[0] - 0.7530).abs() < 1e-3);
    assert!((est.theory + 0.42523).abs() < 1e-4);
}

#[test]
fn tilted_and_plain_estimates_agree() {
    let m = gaussian_model();
    let ev = Event::HalfSpace { normal: vec![1.0], offset: 0.4 };
    let plain = estimate_event(&m, &config(0.1, 1.0, 10_000, 5), &ev).unwrap();
    let mut cfg = config(0.1, 1.0, 10_000, 6);
    cfg.tilt = TiltChoice::Fixed(vec![0.5]);
    let tilted = estimate_event(&m, &cfg, &ev).unwrap();
    assert!(plain.p_hat > 0.05 && plain.p_hat < 0.2);
    let joint = (plain.stderr.powi(2) + tilted.stderr.powi(2)).sqrt();
    assert!((plain.p_hat - tilted.p_hat).abs() < 3.0 * joint, "{plain:?} {tilted:?}");
}

/// Two-sample Kolmogorov–Smirnov p-value (asymptotic distribution).
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let q: f64 = (1..100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp()
        })
        .sum();
    q.clamp(0.0, 1.0)
}

#[test]
fn scaled_process_matches_rescaled_unit_process() {
    let m = gaussian_model();
    let eps = 0.1;
    let scaled = Simulator::new(&m, &config(eps, 1.0, 3000, 7), None)
        .unwrap()
        .run_all(|tr| tr.final_state()[0])
        .unwrap();
    let unit = Simulator::new(&m, &config(1.0, 1.0 / eps, 3000, 8), None)
        .unwrap()
        .run_all(|tr| eps * tr.final_state()[0])
        .unwrap();
    let p = ks_p_value(scaled, unit);
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn acceptance_fraction_matches_mean_rate() {
    let f = TrigPolynomial::new(
        1,
        1.5,
        vec![TrigTerm {
            amplitude: 0.5,
            freq_xi: vec![1],
            freq_eta: vec![-1],
            phase: 0.0,
        }],
    )
    .unwrap();
    let field = RateField::new(1, Regime::Periodic(Arc::new(f)), 1.0, 2.0).unwrap();
    let m = Model::new(JumpKernel::gaussian(1).unwrap(), field).unwrap();
    let sim = Simulator::new(&m, &config(0.05, 1.0, 2000, 9), None).unwrap();
    let stats = sim.run_all(|tr| (tr.proposals, tr.accepted, tr.acceptance_sum)).unwrap();
    let props: usize = stats.iter().map(|s| s.0).sum();
    let acc: usize = stats.iter().map(|s| s.1).sum();
    let psum: f64 = stats.iter().map(|s| s.2).sum();
    let frac = acc as f64 / props as f64;
    let mean_p = psum / props as f64;
    let se = (mean_p * (1.0 - mean_p) / props as f64).sqrt();
    assert!((frac - mean_p).abs() < 4.0 * se, "{frac} vs {mean_p}");
    assert!(mean_p > 0.5 && mean_p < 1.0);
}

/// Gaussian bump of width 1/8 centered at `-1/4`, tabulated on `[-1, 0.5]`.
fn narrow_drifted() -> JumpKernel {
    let z: Vec<f64> = (0..=48).map(|i| -1.0 + i as f64 / 32.0).collect();
    let v: Vec<f64> = z.iter().map(|&z| (-32.0 * (z + 0.25) * (z + 0.25)).exp()).collect();
    let env = Envelope { c: 3.5, k: 0.5, p: 2.0 };
    JumpKernel::tabulated(TabulatedProfile::new(z, v).unwrap(), env).unwrap()
}

#[test]
fn process_stays_near_the_flow() {
    let slow = QuadraticSlow { base: 1.0, coef: 1.0, cap: 2.0 };
    let field = RateField::new(1, Regime::Slow(Arc::new(slow)), 1.0, 2.0).unwrap();
    let m = Model::new(narrow_drifted(), field).unwrap();
    let flow = effective_flow(&m, &[0.0], 1.0, 512).unwrap();
    assert!((flow.eval(1.0)[0] - 0.25f64.tan()).abs() < 1e-6);
    let cfg = config(0.02, 1.0, 1000, 10);
    let est = estimate_event(&m, &cfg, &Event::Tube { path: flow, radius: 0.2 }).unwrap();
    assert!(est.p_hat >= 0.95, "{est:?}");
    assert!(est.theory.abs() < 1e-9);
}

#[test]
fn tube_probability_grows_as_eps_shrinks() {
    let m = gaussian_model();
    let flow = effective_flow(&m, &[0.0], 1.0, 16).unwrap();
    let probs: Vec<f64> = [0.1, 0.05, 0.02]
        .iter()
        .map(|&eps| {
            let ev = Event::Tube { path: flow.clone(), radius: 0.2 };
            estimate_event(&m, &config(eps, 1.0, 1000, 11), &ev).unwrap().p_hat
        })
        .collect();
    assert!(probs.windows(2).all(|w| w[1] > w[0]), "{probs:?}");
}
