//! One function per subcommand; each returns the artifacts to write.

use ldp_core::hamiltonian::ConvexHamiltonian;
use ldp_core::legendre::{l_t, lagrangian};
use ldp_core::path_rate::{effective_flow, path_distance, rate};
use ldp_core::scenario::{gamma_region, Counterexample, ScenarioOutcome};
use ldp_core::simulator::{estimate_event, event_theory, Event, SimConfig, Simulator};
use ldp_core::{Error, Model, Path, Result, SkewedOperator, TiltChoice};
use rayon::prelude::*;

use crate::config::{EventBlock, LoadedConfig, RegimeName, SimulationBlock};
use crate::output::{indexed, num, nums, Artifact, Table};

/// Artifacts of one run; `passed` is false when a check failed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub passed: bool,
    /// Short human-readable lines for standard output.
    pub summary: Vec<String>,
}

impl Outcome {
    fn ok(artifacts: Vec<Artifact>, summary: Vec<String>) -> Self {
        Self {
            artifacts,
            passed: true,
            summary,
        }
    }
}

/// Tensor grid with the same axis on each coordinate.
fn tensor(values: &[f64], d: usize) -> Vec<Vec<f64>> {
    let n = values.len();
    (0..n.pow(d as u32))
        .map(|mut flat| {
            (0..d)
                .map(|_| {
                    let v = values[flat % n];
                    flat /= n;
                    v
                })
                .collect()
        })
        .collect()
}

fn check_row(t: &mut Table, name: &str, value: f64, passed: bool) {
    t.push(vec![name.into(), num(value), passed.to_string()]);
}

pub fn validate(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let v = &cfg.config.validate;
    let kv = model.kernel().validate()?;
    let fv = model.field().validate(v.slow_box, v.continuity_threshold);
    let mut t = Table::new(["check", "value", "passed"]);
    check_row(&mut t, "kernel_mass", kv.mass, kv.mass_ok);
    check_row(&mut t, "kernel_envelope_ratio", kv.max_envelope_ratio, kv.envelope_ok);
    check_row(&mut t, "kernel_halfspace_c0", kv.c0, kv.c0_ok);
    check_row(&mut t, "field_sample_min", fv.sample_min, fv.bounds_ok);
    check_row(&mut t, "field_sample_max", fv.sample_max, fv.bounds_ok);
    check_row(&mut t, "field_periodicity_error", fv.periodicity_error, fv.periodicity_ok);
    check_row(
        &mut t,
        "field_continuity_modulus",
        fv.continuity_modulus,
        !fv.continuity_warning,
    );
    let x = cfg.scan_position();
    let h0 = model.with_hamiltonian(&x, |h| h.value(&vec![0.0; model.dim()]))?;
    let h0_ok = h0.value.abs() < 1e-10 && h0.in_gamma;
    check_row(&mut t, "hamiltonian_at_zero", h0.value, h0_ok);
    let passed = kv.passed() && fv.passed() && h0_ok;
    let mut summary: Vec<String> = t
        .rows
        .iter()
        .map(|r| format!("{:<28} {:>24} {}", r[0], r[1], if r[2] == "true" { "ok" } else { "FAILED" }))
        .collect();
    summary.push(if passed { "all invariants passed".into() } else { "some invariants failed".into() });
    Ok(Outcome {
        artifacts: vec![Artifact::csv("validate.csv", t)],
        passed,
        summary,
    })
}

pub fn hamiltonian_scan(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let d = model.dim();
    let x = cfg.scan_position();
    let h = model.hamiltonian_at(&x)?;
    let tilts = tensor(&cfg.config.scan.lambda.values(), d);
    let values: Vec<_> = tilts.par_iter().map(|l| h.value(l)).collect::<Result<_>>()?;
    let mut header = indexed("lambda", d);
    header.extend(["h".into(), "in_gamma".into()]);
    let mut t = Table::new(header);
    for (l, v) in tilts.iter().zip(&values) {
        let mut row: Vec<String> = nums(l).collect();
        row.push(num(v.value));
        row.push(v.in_gamma.to_string());
        t.push(row);
    }
    let n = tilts.len();
    Ok(Outcome::ok(
        vec![Artifact::csv("hamiltonian.csv", t)],
        vec![format!("{n} tilts evaluated")],
    ))
}

pub fn lagrangian_scan(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let d = model.dim();
    let x = cfg.scan_position();
    let h = model.hamiltonian_at(&x)?;
    let lcfg = model.legendre_config();
    let horizon = cfg.config.scan.horizon;
    let zetas = tensor(&cfg.config.scan.zeta.values(), d);
    let rows: Vec<_> = zetas
        .par_iter()
        .map(|z| -> Result<Vec<String>> {
            let l = lagrangian(&h, z, &lcfg)?;
            let mut row: Vec<String> = nums(z).collect();
            row.push(num(l.value));
            row.extend(nums(&l.argmax_lambda));
            row.push(l.exposed.to_string());
            row.push(l.on_linear_segment.to_string());
            row.push(l.method.to_string());
            if let Some(t) = horizon {
                row.push(num(l_t(&h, z, t, &lcfg)?));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut header = indexed("zeta", d);
    header.push("lagrangian".into());
    header.extend(indexed("lambda_star", d));
    header.extend(["exposed".into(), "on_linear_segment".into(), "method".into()]);
    if horizon.is_some() {
        header.push("fixed_time_rate".into());
    }
    let mut t = Table::new(header);
    let n = rows.len();
    for r in rows {
        t.push(r);
    }
    Ok(Outcome::ok(
        vec![Artifact::csv("lagrangian.csv", t)],
        vec![format!("{n} velocities evaluated")],
    ))
}

/// Runs (or only confirms) the counterexample configured in the file.
pub fn scenario(cfg: &LoadedConfig) -> Result<ScenarioOutcome> {
    let grid = cfg.grid()?;
    let spectral = cfg.config.spectral;
    let (params, search, max_tilt) = match &cfg.config.counterexample {
        Some(b) => (b.params.clone(), b.search, b.max_tilt),
        None => (Counterexample::one_dimensional(), false, 20.0),
    };
    if search {
        params.search(max_tilt, grid, spectral)
    } else {
        params.confirm(max_tilt, grid, spectral)
    }
}

pub fn gamma_region_cmd(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let d = model.dim();
    let mut artifacts = vec![];
    let mut summary = vec![];
    let h = if cfg.config.environment.regime == RegimeName::Counterexample {
        let out = scenario(cfg)?;
        summary.push(format!(
            "scenario: tilt {:?}, in region at origin {}, at tilt {}",
            out.report.tilt, out.at_origin, out.at_tilt
        ));
        let h = out.scenario.hamiltonian(cfg.grid()?, cfg.config.spectral)?;
        artifacts.push(Artifact::json("scenario.json", &out)?);
        h
    } else {
        model.hamiltonian_at(&cfg.scan_position())?
    };
    let flat = -h.g_min()?;
    let tilts = tensor(&cfg.config.scan.lambda.values(), d);
    let values = {
        let chunks: Vec<_> = tilts
            .par_chunks(8)
            .map(|c| gamma_region(&h, &c.to_vec()))
            .collect::<Result<_>>()?;
        chunks.into_iter().flatten().collect::<Vec<_>>()
    };
    let mut header = indexed("lambda", d);
    header.extend(["theta".into(), "in_gamma".into(), "flat_level".into()]);
    let mut t = Table::new(header);
    let mut outside = 0;
    for (l, v) in tilts.iter().zip(&values) {
        outside += usize::from(!v.in_gamma);
        let mut row: Vec<String> = nums(l).collect();
        row.extend([num(v.value), v.in_gamma.to_string(), num(flat)]);
        t.push(row);
    }
    summary.push(format!("{outside} of {} tilts outside the region", tilts.len()));
    artifacts.insert(0, Artifact::csv("gamma_region.csv", t));
    Ok(Outcome::ok(artifacts, summary))
}

pub fn effective_coeffs(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let d = model.dim();
    let x = cfg.scan_position();
    let frozen = model.field().freeze(&x)?;
    let grid = model.grid();
    let op = SkewedOperator::assemble(grid, model.kernel(), &frozen, &vec![0.0; d], model.spectral_config())?;
    let res = op.principal_eig()?;
    let eff = op.effective_coeffs(&res)?;
    let grad = op.theta_grad(&res)?;
    let mut t = Table::new(["quantity", "i", "j", "value"]);
    let mut put = |q: &str, i: usize, j: Option<usize>, v: f64| {
        t.push(vec![
            q.into(),
            (i + 1).to_string(),
            j.map(|j| (j + 1).to_string()).unwrap_or_default(),
            num(v),
        ]);
    };
    put("theta_zero", 0, None, res.theta);
    for i in 0..d {
        put("drift", i, None, eff.b[i]);
        put("theta_grad", i, None, grad[i]);
    }
    for i in 0..d {
        for j in 0..d {
            put("diffusion", i, Some(j), eff.theta_matrix[i][j]);
            put("theta_hessian", i, Some(j), eff.hessian[i][j]);
        }
    }
    let mut header = indexed("xi", d);
    header.extend(indexed("corrector", d));
    header.push("u".into());
    header.push("u_star".into());
    let mut c = Table::new(header);
    for node in 0..grid.len() {
        let mut row: Vec<String> = nums(&grid.node(node)).collect();
        row.extend((0..d).map(|i| num(eff.kappa[i][node])));
        row.push(num(res.u[node]));
        row.push(num(res.u_star[node]));
        c.push(row);
    }
    Ok(Outcome::ok(
        vec![
            Artifact::csv("effective_coeffs.csv", t),
            Artifact::csv("corrector.csv", c),
        ],
        vec![format!("drift {:?}", eff.b), format!("diffusion {:?}", eff.theta_matrix)],
    ))
}

pub fn rate_cmd(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let d = model.dim();
    let rb = &cfg.config.rate;
    let file = rb
        .path
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("missing key rate.path".into()))?;
    let path = cfg.read_path(file)?;
    let rep = rate(model, &path, &rb.quadrature)?;
    let mut header = vec!["segment".to_string(), "t0".into(), "t1".into()];
    header.extend(indexed("velocity", d));
    header.extend(["value".into(), "nodes".into()]);
    let mut t = Table::new(header);
    for (j, s) in rep.segments.iter().enumerate() {
        let mut row = vec![j.to_string(), num(s.t0), num(s.t1)];
        row.extend(nums(&s.velocity));
        row.extend([num(s.value), s.nodes.to_string()]);
        t.push(row);
    }
    let mut s = Table::new(["key", "value"]);
    s.push(vec!["rate".into(), num(rep.value)]);
    s.push(vec!["finite".into(), rep.finite.to_string()]);
    let mut summary = vec![format!("rate {}", rep.value)];
    if let Some(r) = &rb.reference {
        let other = cfg.read_path(r)?;
        let dist = path_distance(&path, &other, &rb.distance)?;
        s.push(vec!["distance".into(), num(dist.distance)]);
        s.push(vec!["sup_distance".into(), num(dist.sup_distance)]);
        s.push(vec!["stretch".into(), num(dist.stretch)]);
        summary.push(format!("distance to reference {}", dist.distance));
    }
    Ok(Outcome::ok(
        vec![Artifact::csv("rate_segments.csv", t), Artifact::csv("rate.csv", s)],
        summary,
    ))
}

pub fn flow_cmd(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let f = cfg
        .config
        .flow
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("missing table [flow]".into()))?;
    let path = effective_flow(model, &f.x0, f.horizon, f.steps)?;
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", model.dim()));
    let mut t = Table::new(header);
    for (time, x) in path.times().iter().zip(path.points()) {
        let mut row = vec![num(*time)];
        row.extend(nums(x));
        t.push(row);
    }
    let end = path.points().last().cloned().unwrap_or_default();
    Ok(Outcome::ok(
        vec![
            Artifact::csv("flow.csv", t),
            Artifact::text("flow.path", path.to_text()),
        ],
        vec![format!("flow end point {end:?}")],
    ))
}

fn sim_block(cfg: &LoadedConfig) -> Result<&SimulationBlock> {
    cfg.config
        .simulation
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("missing table [simulation]".into()))
}

fn sim_config(b: &SimulationBlock, eps: f64) -> SimConfig {
    SimConfig {
        eps,
        horizon: b.horizon,
        x0: b.x0.clone(),
        seed: b.seed,
        tilt: b.tilt.clone(),
        replications: b.replications,
    }
}

pub fn build_event(cfg: &LoadedConfig, model: &Model, b: &SimulationBlock) -> Result<Event> {
    Ok(match &b.event {
        None | Some(EventBlock::Whole) => Event::Whole,
        Some(EventBlock::Halfspace { normal, offset }) => Event::HalfSpace {
            normal: normal.clone(),
            offset: *offset,
        },
        Some(EventBlock::Ball { center, radius }) => Event::Ball {
            center: center.clone(),
            radius: *radius,
        },
        Some(EventBlock::Tube {
            radius,
            path,
            velocity,
        }) => {
            let path = match (path, velocity) {
                (Some(p), _) => cfg.read_path(p)?,
                (None, Some(v)) => Path::straight(&b.x0, v, b.horizon)?,
                (None, None) => effective_flow(model, &b.x0, b.horizon, b.flow_steps)?,
            };
            Event::Tube {
                path,
                radius: *radius,
            }
        }
    })
}

pub fn simulate(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let b = sim_block(cfg)?;
    let sc = sim_config(b, b.eps);
    sc.validate(model.dim())?;
    let event = build_event(cfg, model, b)?;
    let tilt = match &sc.tilt {
        TiltChoice::None => None,
        TiltChoice::Fixed(l) => Some(l.clone()),
        TiltChoice::Auto => event_theory(model, &sc, &event)?.tilt,
    };
    let sim = Simulator::new(model, &sc, tilt.as_deref())?;
    let d = model.dim();
    let rows = sim.run_all(|tr| {
        let mut row: Vec<String> = nums(tr.final_state()).collect();
        row.extend([
            num(tr.log_weight),
            tr.accepted.to_string(),
            tr.proposals.to_string(),
            event.contains(tr).to_string(),
        ]);
        row
    })?;
    let mut header = vec!["replication".to_string()];
    header.extend(indexed("final", d));
    header.extend(["log_weight".into(), "jumps".into(), "proposals".into(), "in_event".into()]);
    let mut t = Table::new(header);
    for (i, r) in rows.into_iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(r);
        t.push(row);
    }
    let mut artifacts = vec![Artifact::csv("replications.csv", t)];
    for rep in 0..b.dump.min(sc.replications) {
        let tr = sim.run(rep as u64)?;
        artifacts.push(Artifact::text(format!("trajectory_{rep:04}.txt"), tr.to_text()));
    }
    Ok(Outcome::ok(
        artifacts,
        vec![format!("{} replications at eps {}", sc.replications, sc.eps)],
    ))
}

pub fn ldp_verify(cfg: &LoadedConfig, model: &Model) -> Result<Outcome> {
    let b = sim_block(cfg)?;
    let event = build_event(cfg, model, b)?;
    let eps_list = if b.eps_list.is_empty() {
        vec![b.eps]
    } else {
        b.eps_list.clone()
    };
    let d = model.dim();
    let mut header: Vec<String> = [
        "eps",
        "replications",
        "hits",
        "p_hat",
        "stderr",
        "eps_log_p",
        "theory",
        "relative_error",
        "upper_bound",
    ]
    .map(String::from)
    .to_vec();
    header.extend(indexed("tilt", d));
    header.push("acceptance".into());
    let mut t = Table::new(header);
    let mut summary = vec![format!("event {}", event.describe())];
    for eps in eps_list {
        let est = estimate_event(model, &sim_config(b, eps), &event)?;
        let rel = if est.theory != 0.0 {
            ((est.eps_log_p - est.theory) / est.theory).abs()
        } else {
            f64::NAN
        };
        let mut row = vec![
            num(est.eps),
            est.replications.to_string(),
            est.hits.to_string(),
            num(est.p_hat),
            num(est.stderr),
            num(est.eps_log_p),
            num(est.theory),
            num(rel),
            est.upper_bound.map(num).unwrap_or_default(),
        ];
        row.extend(nums(&est.tilt));
        row.push(num(est.acceptance));
        summary.push(format!(
            "eps {:<6} p_hat {:.4e} ± {:.2e}  eps·ln p {:.5}  theory {:.5}",
            est.eps, est.p_hat, est.stderr, est.eps_log_p, est.theory
        ));
        t.push(row);
    }
    Ok(Outcome::ok(vec![Artifact::csv("ldp_verify.csv", t)], summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_grid_order() {
        let g = tensor(&[0.0, 1.0], 2);
        assert_eq!(g, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
    }
}
