use std::sync::Arc;

use ldp_core::environment::{PeriodicField, TrigPolynomial, TrigTerm};
use ldp_core::hamiltonian::{ConvexHamiltonian, Hamiltonian};
use ldp_core::kernel::{Envelope, JumpKernel, TabulatedProfile};
use ldp_core::legendre::{l_t, lagrangian, tail_diagnostic, LegendreConfig};
use ldp_core::torus_spectral::{SpectralConfig, TorusGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_h() -> Hamiltonian {
    Hamiltonian::closed_form(JumpKernel::gaussian(1).unwrap(), 1.0).unwrap()
}

/// Brute-force `max_λ (λζ - e^{λ²/2} + 1)` on a fine grid.
fn grid_search_gaussian(zeta: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let n = 800_000;
    for i in 0..=n {
        let l = -4.0 + 1e-5 * i as f64;
        best = best.max(l * zeta - (0.5 * l * l).exp() + 1.0);
    }
    best
}

#[test]
fn gaussian_value_at_one_matches_grid_search() {
    let oracle = grid_search_gaussian(1.0);
    assert!((oracle - 0.42523).abs() < 1e-4, "oracle {oracle}");
    let l = lagrangian(&gaussian_h(), &[1.0], &LegendreConfig::default()).unwrap();
    assert!((l.value - oracle).abs() < 1e-8, "{} vs {oracle}", l.value);
    assert!(l.exposed && !l.on_linear_segment);
}

#[test]
fn time_scaled_value() {
    let h = gaussian_h();
    let cfg = LegendreConfig::default();
    let l1 = lagrangian(&h, &[1.0], &cfg).unwrap().value;
    assert!((l_t(&h, &[2.0], 2.0, &cfg).unwrap() - 2.0 * l1).abs() < 1e-10);
    assert!(l_t(&h, &[0.0], 3.0, &cfg).unwrap().abs() < 1e-12);
    assert!(l_t(&h, &[1.0], 0.0, &cfg).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let t = rng.random_range(0.2..5.0);
        let z = rng.random_range(-4.0..4.0);
        let direct = t * lagrangian(&h, &[z / t], &cfg).unwrap().value;
        assert!((l_t(&h, &[z], t, &cfg).unwrap() - direct).abs() < 1e-8);
    }
}

#[test]
fn vanishes_at_zero_velocity_of_skewed_kernel() {
    let z: Vec<f64> = (0..=32).map(|i| -1.0 + 0.0625 * i as f64).collect();
    let v: Vec<f64> = z.iter().map(|&z| (1.0 - z * z) * (1.0 + 0.8 * z)).collect();
    let env = Envelope { c: 5.0, k: 0.1, p: 2.0 };
    let k = JumpKernel::tabulated(TabulatedProfile::new(z, v).unwrap(), env).unwrap();
    let h = Hamiltonian::closed_form(k, 2.0).unwrap();
    let cfg = LegendreConfig::default();
    let star = h.grad(&[0.0]).unwrap();
    assert!(star[0] < -0.1);
    assert!(lagrangian(&h, &star, &cfg).unwrap().value.abs() < 1e-12);
    for z in [-3.0, -0.5, 0.2, 1.0, 5.0] {
        assert!(lagrangian(&h, &[z], &cfg).unwrap().value >= 0.0);
    }
}

#[test]
fn biconjugate_recovers_hamiltonian() {
    let h = gaussian_h();
    let cfg = LegendreConfig::default();
    let zetas: Vec<f64> = (0..=3200).map(|i| -16.0 + 0.01 * i as f64).collect();
    let ls: Vec<f64> = zetas
        .iter()
        .map(|z| lagrangian(&h, &[*z], &cfg).unwrap().value)
        .collect();
    for i in 0..=40 {
        let lam = -2.0 + 0.1 * i as f64;
        let conj = zetas
            .iter()
            .zip(&ls)
            .map(|(z, l)| lam * z - l)
            .fold(f64::NEG_INFINITY, f64::max);
        let want = h.value(&[lam]).unwrap().value;
        assert!((conj - want).abs() < 1e-4, "λ={lam}: {conj} vs {want}");
    }
}

#[test]
fn young_fenchel_on_random_pairs() {
    let h = gaussian_h();
    let cfg = LegendreConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let lam: f64 = rng.random_range(-3.0..3.0);
        let z: f64 = rng.random_range(-10.0..10.0);
        let l = lagrangian(&h, &[z], &cfg).unwrap().value;
        let hv = h.value(&[lam]).unwrap().value;
        assert!(lam * z <= l + hv + 1e-10);
    }
}

#[test]
fn superlinear_along_rays() {
    let h = gaussian_h();
    let cfg = LegendreConfig::default();
    for dir in [1.0, -1.0] {
        let ratios: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 32.0]
            .iter()
            .map(|r| lagrangian(&h, &[dir * r], &cfg).unwrap().value / r)
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    }
}

#[test]
fn periodic_field_transform_is_nonnegative_and_vanishes_at_drift() {
    let f = TrigPolynomial::new(
        1,
        1.0,
        vec![
            TrigTerm {
                amplitude: 0.3,
                freq_xi: vec![1],
                freq_eta: vec![0],
                phase: 0.0,
            },
            TrigTerm {
                amplitude: 0.2,
                freq_xi: vec![0],
                freq_eta: vec![1],
                phase: 0.5,
            },
        ],
    )
    .unwrap();
    let field = PeriodicField::new(1, Arc::new(f), 0.5, 1.5);
    let h = Hamiltonian::spectral(
        JumpKernel::gaussian(1).unwrap(),
        TorusGrid::new(1, 16).unwrap(),
        field,
        SpectralConfig::default(),
    )
    .unwrap();
    let cfg = LegendreConfig::default();
    let star = h.grad(&[0.0]).unwrap();
    assert!(lagrangian(&h, &star, &cfg).unwrap().value.abs() < 1e-8);
    for z in [-1.0, 0.3, 1.0] {
        let l = lagrangian(&h, &[z], &cfg).unwrap();
        assert!(l.value > 0.0);
        // the maximizer is a stationary point of λζ - H(λ)
        let g = h.grad(&l.argmax_lambda).unwrap()[0];
        assert!((g - z).abs() < 1e-7, "{g} vs {z}");
    }
}

#[test]
fn gaussian_tail_and_small_velocity_asymptotics() {
    let h = gaussian_h();
    let radii: Vec<f64> = (0..40).map(|i| 10f64.powf(4.0 + 8.0 * i as f64 / 39.0)).collect();
    let rep = tail_diagnostic(&h, &[1.0], &radii, 0.5, 2.0, &LegendreConfig::default()).unwrap();
    assert!((rep.log_exponent - 0.5).abs() < 0.1, "{rep:?}");
    assert!((rep.power - 1.0).abs() < 0.05, "{rep:?}");
    assert!((rep.plateau / rep.expected_plateau - 1.0).abs() < 0.25, "{rep:?}");
    assert!(rep.small_rel_error < 0.1, "{rep:?}");
}

fn two_dim_h() -> Hamiltonian {
    Hamiltonian::closed_form(JumpKernel::generalized_gaussian(2, 0.5, 2.0).unwrap(), 1.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn midpoint_convexity(a0 in -4.0..4.0f64, a1 in -4.0..4.0f64, b0 in -4.0..4.0f64, b1 in -4.0..4.0f64) {
        let h = two_dim_h();
        let cfg = LegendreConfig::default();
        let la = lagrangian(&h, &[a0, a1], &cfg).unwrap().value;
        let lb = lagrangian(&h, &[b0, b1], &cfg).unwrap().value;
        let lm = lagrangian(&h, &[0.5 * (a0 + b0), 0.5 * (a1 + b1)], &cfg).unwrap().value;
        prop_assert!(lm <= 0.5 * (la + lb) + 1e-8);
        prop_assert!(la >= 0.0 && lb >= 0.0);
    }
}
