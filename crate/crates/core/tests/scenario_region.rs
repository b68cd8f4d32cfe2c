use ldp_core::scenario::{gamma_region, Counterexample};
use ldp_core::torus_spectral::{SpectralConfig, TorusGrid};

#[test]
fn search_finds_tilt_outside_region() {
    let grid = TorusGrid::new(1, 64).unwrap();
    let out = Counterexample::one_dimensional()
        .search(20.0, grid, SpectralConfig::default())
        .unwrap();
    println!("{out:?}");
    assert!(out.at_origin);
    assert!(!out.at_tilt);
    assert!(out.report.tilt[0].abs() <= 20.0);
    assert_eq!(out.theta_at_tilt, out.flat_level);
}

#[test]
fn region_scan_has_both_branches() {
    let s = Counterexample::one_dimensional();
    let h = s.hamiltonian(TorusGrid::new(1, 64).unwrap(), SpectralConfig::default()).unwrap();
    let tilts: Vec<Vec<f64>> = (-10..=20).map(|i| vec![i as f64]).collect();
    let vals = gamma_region(&h, &tilts).unwrap();
    for (l, v) in tilts.iter().zip(&vals) {
        println!("{:>5} {:>12.6} {}", l[0], v.value, v.in_gamma);
    }
    assert!(vals[10].in_gamma && vals[10].value.abs() < 1e-10);
    assert!(vals.iter().any(|v| !v.in_gamma));
    let flat = -h.g_min().unwrap();
    assert!(vals.iter().all(|v| v.value >= flat - 1e-12));
    // convex along the scan
    for w in vals.windows(3) {
        assert!(w[0].value + w[2].value - 2.0 * w[1].value >= -1e-8);
    }
}
