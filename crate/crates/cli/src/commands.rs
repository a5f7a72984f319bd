//! The subcommands. Each writes its tables and `report.json` into a run
//! directory and returns whether its checks passed.

use crate::config::{RunConfig, Testbed};
use crate::output::{header, read_json, Manifest, RunDir};
use crate::CliError;
use famhe_core::adiabatic::{adiabatic_sweep, r2_sweep};
use famhe_core::bundle::{DolbeaultData, MetricData};
use famhe_core::flow::{dirichlet_solve, flow_run, FlowConfig, FlowProblem, FlowReport};
use famhe_core::geometry::{build_grid, BaseField, BaseKind, ProductGrid};
use famhe_core::moment_map::{nu, nu_closed_form, DeformationData, Path};
use famhe_core::projection::{holo_frame, HoloFrame, HOLO_TOL};
use famhe_core::random::FieldRng;
use famhe_core::verify::{second_order_testbed, Suite, CHECKS};
use serde::Serialize;
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::path::PathBuf;

fn grid(cfg: &RunConfig) -> Result<ProductGrid, CliError> {
    Ok(build_grid(&cfg.grid)?)
}

fn frame(g: &ProductGrid, rank: usize) -> Result<HoloFrame, CliError> {
    Ok(holo_frame(g, &DolbeaultData::trivial(g, rank), HOLO_TOL)?)
}

fn dolbeault(cfg: &RunConfig, g: &ProductGrid) -> Result<DolbeaultData, CliError> {
    Ok(DolbeaultData::from_preset(g, &cfg.deformation.preset()?)?)
}

fn flow_config(cfg: &RunConfig) -> FlowConfig {
    let f = &cfg.flow;
    FlowConfig {
        dt: f.dt,
        t_end: f.t_end,
        tol: f.tol,
        scheme: f.scheme,
        max_steps: f.max_steps,
        interpolated_sup: cfg.grid.base_kind == BaseKind::Torus,
        ..Default::default()
    }
}

fn timeseries(dir: &mut RunDir, rep: &FlowReport) -> Result<(), CliError> {
    let interp = !rep.sup_theta_interp.is_empty();
    let mut names = vec!["t", "sup_theta", "residual", "det_drift"];
    if interp {
        names.push("sup_theta_interp");
    }
    let rows: Vec<Vec<f64>> = (0..rep.times.len())
        .map(|i| {
            let mut r = vec![rep.times[i], rep.sup_theta[i], rep.residual[i], rep.det_drift[i]];
            if interp {
                r.push(rep.sup_theta_interp[i]);
            }
            r
        })
        .collect();
    dir.csv("timeseries.csv", &header(&names), &rows)?;
    Ok(())
}

fn say(quiet: bool, line: impl AsRef<str>) {
    if !quiet {
        println!("{}", line.as_ref());
    }
}

/// Runs the selected acceptance checks, all of them when `ids` is empty.
pub fn verify(cfg: &RunConfig, dir: &mut RunDir, ids: &[u32], quiet: bool) -> Result<bool, CliError> {
    let ids: Vec<u32> = if ids.is_empty() { CHECKS.iter().map(|c| c.0).collect() } else { ids.to_vec() };
    if let Some(bad) = ids.iter().find(|id| !CHECKS.iter().any(|c| c.0 == **id)) {
        return Err(CliError::Usage(format!("unknown check {bad}; checks are numbered 1 to {}", CHECKS.len())));
    }
    let mut suite = Suite::new(cfg.verify.clone())?;
    let mut results = Vec::new();
    for id in ids {
        let r = suite.run(id)?;
        say(quiet, r.line());
        results.push(r);
    }
    let passed = results.iter().all(|r| r.passed);
    dir.json("report.json", &json!({ "command": "verify", "passed": passed, "checks": results }))?;
    Ok(passed)
}

/// The free flow on a torus base from a seeded random log-metric.
pub fn flow(cfg: &RunConfig, dir: &mut RunDir, quiet: bool) -> Result<bool, CliError> {
    let g = grid(cfg)?;
    if g.base_kind() != BaseKind::Torus {
        return Err(CliError::Usage("the free flow needs a torus base; use `dirichlet` on an annulus".into()));
    }
    let a = DeformationData::from_dolbeault(&g, &dolbeault(cfg, &g)?);
    let pr = FlowProblem::new(&g, &a, cfg.flow.lambda)?;
    let u0 = FieldRng::new(cfg.seed).hermitian_base(&g, a.rank(), cfg.flow.initial_modes, cfg.flow.initial_amplitude);
    let rep = flow_run(&pr, &u0, &flow_config(cfg))?;
    timeseries(dir, &rep)?;
    let passed = rep.max_theta_increase <= 1e-8;
    say(quiet, format!(
        "flow: {} steps to t = {:.4}, sup theta {:.3e} -> {:.3e}, max increase {:.2e}",
        rep.steps,
        rep.t_final,
        rep.sup_theta.first().copied().unwrap_or(0.0),
        rep.sup_theta.last().copied().unwrap_or(0.0),
        rep.max_theta_increase
    ));
    dir.json("report.json", &json!({ "command": "flow", "passed": passed, "preset": cfg.deformation.preset, "flow": rep }))?;
    Ok(passed)
}

/// The flow on an annulus with σ = id pinned on both boundary circles.
pub fn dirichlet(cfg: &RunConfig, dir: &mut RunDir, quiet: bool) -> Result<bool, CliError> {
    let g = grid(cfg)?;
    if g.base_kind() != BaseKind::Annulus {
        return Err(CliError::Usage("the Dirichlet problem needs an annulus base".into()));
    }
    let a = DeformationData::from_dolbeault(&g, &dolbeault(cfg, &g)?);
    let r = a.rank();
    let pr = FlowProblem::new(&g, &a, cfg.flow.lambda)?.with_dirichlet(BaseField::zeros(g.nbase(), r))?;
    let shape = FieldRng::new(cfg.seed).hermitian_base(&g, r, cfg.flow.initial_modes, cfg.flow.initial_amplitude);
    let mats: Vec<_> = (0..g.nbase())
        .map(|b| {
            // Vanishes on both circles so the initial data match the boundary.
            let y = g.base_coords(b).1;
            let s = if g.is_boundary(b) { 0.0 } else { (PI * y).sin() };
            shape.at(b).scale_re(s)
        })
        .collect();
    let rep = dirichlet_solve(&pr, &BaseField::from_mats(&mats), &flow_config(cfg))?;
    timeseries(dir, &rep.report)?;
    let fit = rep.fit.as_ref();
    say(quiet, format!(
        "dirichlet: converged after {} steps (t = {:.3}), residual {:.2e}, tail rate {}",
        rep.report.steps,
        rep.report.t_final,
        rep.report.final_residual,
        fit.map_or("n/a".into(), |f| format!("{:.5}", f.mu))
    ));
    dir.json("report.json", &json!({ "command": "dirichlet", "passed": rep.converged, "preset": cfg.deformation.preset, "dirichlet": rep }))?;
    Ok(rep.converged)
}

/// Decay of the adiabatic defect, or of the approximate-solution residual.
pub fn adiabatic(cfg: &RunConfig, dir: &mut RunDir, quiet: bool) -> Result<bool, CliError> {
    let g = grid(cfg)?;
    let ad = &cfg.adiabatic;
    match ad.testbed {
        Testbed::Preset => {
            let d = dolbeault(cfg, &g)?;
            let rank = d.av.rank;
            let rep = adiabatic_sweep(&g, &MetricData::identity(&g, rank), &frame(&g, rank)?, &Path::linear(d), ad.lambda, &ad.k_list)?;
            let rows: Vec<Vec<f64>> = (0..rep.k_list.len()).map(|i| vec![rep.k_list[i], rep.s_list[i], rep.defects[i]]).collect();
            dir.csv("slopes.csv", &header(&["k", "s", "defect"]), &rows)?;
            say(quiet, format!("adiabatic: defects {:?}, slope {}", rep.defects, fmt_slope(rep.slope)));
            dir.json("report.json", &json!({ "command": "adiabatic", "passed": true, "preset": cfg.deformation.preset, "sweep": rep }))?;
        }
        Testbed::SecondOrder => {
            if g.base_kind() != BaseKind::Torus {
                return Err(CliError::Usage("the second-order testbed needs a torus base".into()));
            }
            let (h, path) = second_order_testbed(&g)?;
            let rep = r2_sweep(&g, &h, &frame(&g, 2)?, &path, ad.lambda, &ad.k_list)?;
            let rows: Vec<Vec<f64>> = (0..rep.k_list.len())
                .map(|i| vec![rep.k_list[i], rep.residual[i], rep.residual_no_phi[i], rep.residual_no_tau[i]])
                .collect();
            dir.csv("slopes.csv", &header(&["k", "residual", "residual_no_phi", "residual_no_tau"]), &rows)?;
            say(quiet, format!(
                "second order: slopes {} (no phi {}, no tau {})",
                fmt_slope(rep.slope),
                fmt_slope(rep.slope_no_phi),
                fmt_slope(rep.slope_no_tau)
            ));
            dir.json("report.json", &json!({ "command": "adiabatic", "passed": true, "testbed": "second_order", "sweep": rep }))?;
        }
    }
    Ok(true)
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or("n/a".into(), |s| format!("{s:.3}"))
}

/// iν of the configured deformation against the flat metric.
pub fn nu_table(cfg: &RunConfig, dir: &mut RunDir, quiet: bool) -> Result<bool, CliError> {
    let g = grid(cfg)?;
    let a = DeformationData::from_dolbeault(&g, &dolbeault(cfg, &g)?);
    let r = a.rank();
    let h = MetricData::identity(&g, r);
    let inu = nu(&g, &h, &frame(&g, r)?, &a)?.i_nu();
    let closed = nu_closed_form(&g, &h, &a)?.i_nu();
    let gap = (0..g.nbase()).map(|b| (inu.at(b) - closed.at(b)).norm()).fold(0.0, f64::max);
    let mut names = vec!["b".to_string(), "x".into(), "y".into()];
    for i in 0..r {
        for j in 0..r {
            names.push(format!("i_nu_{i}{j}_re"));
            names.push(format!("i_nu_{i}{j}_im"));
        }
    }
    let rows: Vec<Vec<f64>> = (0..g.nbase())
        .map(|b| {
            let (x, y) = g.base_coords(b);
            let m = inu.at(b);
            let mut row = vec![b as f64, x, y];
            for i in 0..r {
                for j in 0..r {
                    row.push(m.get(i, j).re);
                    row.push(m.get(i, j).im);
                }
            }
            row
        })
        .collect();
    dir.csv("nu.csv", &names, &rows)?;
    say(quiet, format!("nu: sup |i nu| = {:.6}, gap to closed form {:.2e}", inu.sup_norm(), gap));
    dir.json("report.json", &json!({
        "command": "nu",
        "passed": true,
        "preset": cfg.deformation.preset,
        "sup_norm": inu.sup_norm(),
        "closed_form_gap": gap,
    }))?;
    Ok(true)
}

#[derive(Serialize)]
struct RunSummary {
    dir: PathBuf,
    command: String,
    seed: u64,
    passed: bool,
}

/// Collects the manifests and reports of earlier runs into one summary.
pub fn report(inputs: &[PathBuf], dir: &mut RunDir, quiet: bool) -> Result<bool, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for d in inputs {
        let m: Manifest = read_json(&d.join("manifest.json"))?;
        let r: Value = read_json(&d.join("report.json"))?;
        say(quiet, format!("{} {:<10} seed {} {}", if m.passed { "PASS" } else { "FAIL" }, m.command, m.seed, d.display()));
        runs.push(RunSummary { dir: d.clone(), command: m.command, seed: m.seed, passed: m.passed });
        reports.push(r);
    }
    let passed = runs.iter().all(|r| r.passed);
    dir.json("summary.json", &json!({ "passed": passed, "runs": runs, "reports": reports }))?;
    Ok(passed)
}
