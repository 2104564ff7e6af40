//! Command implementations. Each writes its outputs plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use simons_flow::flow_core::{run, FlowConfig, InitialKind, Trajectory};
use simons_flow::io::{save_trajectory, ExperimentManifest};
use simons_flow::minimal_profile::{
    canonical_profile, cone_correction_exponent, decay_report, scale_profile, solve_profile, to_cone_graph,
};
use simons_flow::parameters::derive_parameters;
use simons_flow::rescaling_diagnostics::{analyze, Diagnostics};
use simons_flow::shooting::{stage_tolerance, tune, tune_staged, ShootingResult, TuneOptions};
use simons_flow::spectral::{coercivity_samples, eigen_residual, eigenfunction, SpectralBasis};
use simons_flow::{Error, Result};

use crate::Global;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Precondition(_) | Error::Io(_) | Error::Json(_) => 2,
    }
}

fn out_dir(g: &Global, command: &str) -> Result<PathBuf> {
    let d = g
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("simons-flow-out").join(command));
    fs::create_dir_all(&d)?;
    Ok(d)
}

/// Save the manifest when anything was written, then pass `res` through.
fn finish(mut m: ExperimentManifest, dir: &Path, start: Instant, res: Result<()>) -> Result<()> {
    if !m.outputs.is_empty() {
        m.wall_clock_s = start.elapsed().as_secs_f64();
        m.status = res.as_ref().map_or_else(|e| i32::from(exit_code(e)), |_| 0);
        m.save(dir)?;
    }
    res
}

fn load_config(path: Option<&Path>) -> Result<FlowConfig> {
    match path {
        Some(p) => FlowConfig::parse(&fs::read_to_string(p)?),
        None => FlowConfig::new(5),
    }
}

pub fn params(g: &Global, n: u32, m: usize) -> Result<()> {
    let p = derive_parameters(n, m)?;
    let start = Instant::now();
    match &g.out {
        None => {
            println!("{}", serde_json::to_string_pretty(&p)?);
            Ok(())
        }
        Some(path) => {
            let dir = path
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("params.json");
            let mut man = ExperimentManifest::new("params", json!({ "n": n, "m": m }), serde_json::to_value(&p)?);
            let res = man.write_json(dir, name, &p).map(|_| ());
            finish(man, dir, start, res)
        }
    }
}

pub fn minimal(g: &Global, n: u32, k: f64, r_max: f64) -> Result<()> {
    let p = derive_parameters(n, 6)?;
    if k.is_nan() || k <= 0.0 {
        return Err(Error::Precondition(format!("k must be positive, got {k}")));
    }
    let dir = out_dir(g, "minimal")?;
    let start = Instant::now();
    let mut man = ExperimentManifest::new(
        "minimal",
        json!({ "n": n, "k": k, "r_max": r_max }),
        serde_json::to_value(&p)?,
    );
    let res = (|| -> Result<()> {
        let base = solve_profile(&p, r_max, 1e-10)?;
        let prof = scale_profile(&base, k)?;
        let rows: Vec<Vec<f64>> = (0..prof.r.len())
            .map(|j| vec![prof.r[j], prof.psi_hat[j], prof.dpsi_hat[j], prof.ddpsi_hat[j]])
            .collect();
        man.write_csv(
            &dir,
            "profile.csv",
            json!({ "n": n, "k": k }),
            &["r", "psi_hat", "dpsi_hat", "ddpsi_hat"],
            &rows,
        )?;
        let cone = to_cone_graph(&prof)?;
        let rows: Vec<Vec<f64>> = (0..cone.z.len())
            .map(|j| vec![cone.z[j], cone.psi[j], cone.dpsi[j], cone.ddpsi[j]])
            .collect();
        man.write_csv(
            &dir,
            "cone_graph.csv",
            json!({ "n": n, "k": k }),
            &["z", "psi", "dpsi", "ddpsi"],
            &rows,
        )?;
        let z_end = *cone.z.last().unwrap();
        let tail = cone_correction_exponent(&cone, 10.0 * prof.length_scale(), 0.1 * z_end);
        let report = json!({
            "n": n,
            "k": k,
            "psi_hat_0": prof.psi0(),
            "asym_coeff": prof.asym_coeff,
            "asym_target": p.asymptote() * k,
            "ode_residual": prof.ode_residual(),
            "tail_exponent": tail.map(|f| f.slope),
            "tail_expected": 3.0 * p.alpha - 2.0,
            "decay": decay_report(&prof, 4)?,
        });
        println!(
            "psi_hat(0) = {:.10}, asym_coeff = {:.10}, ode residual = {:.3e}",
            prof.psi0(),
            prof.asym_coeff,
            prof.ode_residual()
        );
        man.write_json(&dir, "report.json", &report)?;
        Ok(())
    })();
    finish(man, &dir, start, res)
}

pub fn spectrum(g: &Global, n: u32, m: usize, samples: usize) -> Result<()> {
    let mut p = derive_parameters(n, m.max(3))?;
    p.lambda.truncate(m + 1);
    let dir = out_dir(g, "spectrum")?;
    let start = Instant::now();
    let mut man = ExperimentManifest::new(
        "spectrum",
        json!({ "n": n, "m": m, "seed": g.seed, "samples": samples }),
        serde_json::to_value(&p)?,
    );
    let res = (|| -> Result<()> {
        let basis = SpectralBasis::new(&p)?;
        let mut rows = Vec::new();
        for i in 0..=m {
            rows.push(vec![
                i as f64,
                p.lambda[i],
                basis.c[i],
                eigen_residual(&basis, i, 0.2, 8.0, 2e-3)?,
            ]);
        }
        man.write_csv(
            &dir,
            "eigen.csv",
            json!({ "n": n }),
            &["i", "lambda", "c", "residual"],
            &rows,
        )?;
        let gram = basis.gram();
        let names: Vec<String> = (0..=m).map(|j| format!("phi{j}")).collect();
        let cols: Vec<&str> = names.iter().map(String::as_str).collect();
        man.write_csv(&dir, "gram.csv", json!({ "n": n }), &cols, &gram)?;
        let mut cols_f = vec!["y"];
        cols_f.extend(cols.iter().copied());
        let mut rows = Vec::new();
        for k in 1..=400 {
            let y = 0.025 * k as f64;
            let mut r = vec![y];
            for i in 0..=m {
                r.push(eigenfunction(&basis, i, y)?);
            }
            rows.push(r);
        }
        man.write_csv(&dir, "eigenfunctions.csv", json!({ "n": n }), &cols_f, &rows)?;
        let cs = coercivity_samples(&basis, g.seed, samples);
        let rows: Vec<Vec<f64>> = cs
            .iter()
            .map(|c| vec![c.lhs, c.rhs, c.norm_sq, c.grad_sq, f64::from(u8::from(c.holds()))])
            .collect();
        man.write_csv(
            &dir,
            "coercivity.csv",
            json!({ "seed": g.seed }),
            &["lhs", "rhs", "norm_sq", "grad_sq", "holds"],
            &rows,
        )?;
        let dev = gram
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(move |(j, v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            })
            .fold(0.0, f64::max);
        let summary = json!({
            "n": n,
            "lambda": p.lambda,
            "c": basis.c,
            "quadrature": basis.quad_spec,
            "gram_deviation": dev,
            "coercivity_holds": cs.iter().filter(|c| c.holds()).count(),
            "coercivity_samples": cs.len(),
        });
        println!(
            "gram deviation {dev:.3e}; coercivity held for {}/{}",
            cs.iter().filter(|c| c.holds()).count(),
            cs.len()
        );
        man.write_json(&dir, "spectrum.json", &summary)?;
        Ok(())
    })();
    finish(man, &dir, start, res)
}

/// Series CSV plus a JSON summary of the fits.
fn write_diagnostics(man: &mut ExperimentManifest, dir: &Path, d: &Diagnostics) -> Result<()> {
    let cols = [
        "minus_t",
        "tau",
        "sup_a_tip",
        "sup_a_intermediate",
        "sup_a_outer",
        "sup_h_tip",
        "sup_h_intermediate",
        "sup_h_outer",
        "h_axis",
        "profile_distance",
        "cone_distance",
        "convexity_min",
        "lower_margin",
        "upper_margin",
    ];
    let rows: Vec<Vec<f64>> = d
        .rows
        .iter()
        .map(|r| {
            vec![
                r.minus_t,
                r.tau,
                r.sup_a_tip,
                r.sup_a_intermediate,
                r.sup_a_outer,
                r.sup_h_tip,
                r.sup_h_intermediate,
                r.sup_h_outer,
                r.h_axis,
                r.profile_distance,
                r.cone_distance,
                r.convexity_min,
                r.lower_margin,
                r.upper_margin,
            ]
        })
        .collect();
    man.write_csv(dir, "series.csv", json!({ "k_fit": d.k_fit }), &cols, &rows)?;
    let summary = json!({
        "k_fit": d.k_fit,
        "rate_a_tip": d.rate_a_tip,
        "rate_h_axis": d.rate_h_axis,
        "rate_cone": d.rate_cone,
        "ratio_h_over_a": d.ratio_h_over_a,
        "lhopital": d.lhopital,
    });
    man.write_json(dir, "rates.json", &summary)?;
    if let Some(f) = &d.rate_a_tip {
        println!("sup_tip |A| ~ (-t)^{:.4}", f.exponent);
    }
    if let Some(f) = &d.rate_h_axis {
        println!("|H(0)|     ~ (-t)^{:.4}", f.exponent);
    }
    Ok(())
}

/// Save a trajectory and, for singular runs, its diagnostics.
fn export_run(man: &mut ExperimentManifest, dir: &Path, tr: &Trajectory) -> Result<()> {
    save_trajectory(tr, dir, man)?;
    println!(
        "{} snapshots, {} steps, {}",
        tr.snapshots.len(),
        tr.steps,
        tr.termination
    );
    match tr.config.initial {
        InitialKind::Singular if tr.snapshots.len() >= 8 => {
            let base = canonical_profile(&tr.config.params)?;
            let d = analyze(tr, &base)?;
            write_diagnostics(man, dir, &d)?;
        }
        InitialKind::Cylinder { r0 } => {
            let n = tr.config.params.nf();
            let rows: Vec<Vec<f64>> = tr
                .snapshots
                .iter()
                .map(|s| {
                    let exact = (r0 * r0 - 2.0 * (n - 1.0) * (s.t - tr.config.t0)).sqrt();
                    let err = s
                        .u_hat()
                        .iter()
                        .map(|u| ((u - exact) / exact).abs())
                        .fold(0.0, f64::max);
                    vec![-s.t, exact, err]
                })
                .collect();
            man.write_csv(
                dir,
                "cylinder_error.csv",
                json!({ "r0": r0 }),
                &["minus_t", "exact", "rel_error"],
                &rows,
            )?;
        }
        InitialKind::Profile { .. } => {
            let rows: Vec<Vec<f64>> = tr
                .snapshots
                .iter()
                .map(|s| {
                    let drift = s.velocity.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    vec![-s.t, drift]
                })
                .collect();
            man.write_csv(dir, "drift.csv", json!({}), &["minus_t", "max_velocity"], &rows)?;
        }
        _ => {}
    }
    Ok(())
}

pub fn flow(g: &Global, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir(g, "flow")?;
    let start = Instant::now();
    let mut man = ExperimentManifest::new(
        "flow",
        json!({ "config": cfg.to_text() }),
        serde_json::to_value(&cfg.params)?,
    );
    let res = run(&cfg).and_then(|tr| export_run(&mut man, &dir, &tr));
    finish(man, &dir, start, res)
}

pub fn shoot(g: &Global, config: Option<&Path>, t1: Option<f64>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir(g, "shoot")?;
    let start = Instant::now();
    let mut man = ExperimentManifest::new(
        "shoot",
        json!({ "config": cfg.to_text(), "t1": t1 }),
        serde_json::to_value(&cfg.params)?,
    );
    let res = (|| -> Result<()> {
        let basis = SpectralBasis::new(&cfg.params)?;
        let opts = TuneOptions::default();
        let report = |r: &ShootingResult| {
            println!(
                "t1 = {:.4e}: a = ({:.6e}, {:.6e}), |Phi| = {:.3e} (tol {:.3e}), k = {:.6}, {}",
                r.t1,
                r.a0,
                r.a1,
                r.phi_norm,
                r.tol,
                r.k_estimate,
                if r.converged { "converged" } else { "not converged" }
            )
        };
        let stages: Vec<ShootingResult> = match t1 {
            Some(t1) => {
                let r = tune(&cfg, &basis, t1, stage_tolerance(&cfg, t1), [cfg.a0, cfg.a1], opts)?;
                report(&r);
                vec![r]
            }
            None => tune_staged(&cfg, &basis, opts, report)?.stages,
        };
        let log: Vec<Value> = stages
            .iter()
            .flat_map(|s| s.log.iter().map(|e| serde_json::to_value(e).unwrap()))
            .collect();
        man.write_json(&dir, "shooting_log.json", &log)?;
        let results: Vec<Value> = stages
            .iter()
            .map(|s| {
                json!({
                    "a0": s.a0, "a1": s.a1, "t1": s.t1, "phi_norm": s.phi_norm, "tol": s.tol,
                    "iterations": s.iterations, "k_estimate": s.k_estimate, "converged": s.converged, "note": s.note,
                })
            })
            .collect();
        man.write_json(&dir, "shooting.json", &results)?;
        let last = stages.last().expect("at least one stage");
        let mut tuned = cfg.clone();
        tuned.a0 = last.a0;
        tuned.a1 = last.a1;
        let tr = run(&tuned)?;
        export_run(&mut man, &dir, &tr)?;
        if stages.iter().any(|s| !s.converged) {
            return Err(Error::Numeric(
                "tuning did not reach the tolerance at every stage".into(),
            ));
        }
        Ok(())
    })();
    finish(man, &dir, start, res)
}

pub fn rates(g: &Global, trajectory: &Path) -> Result<()> {
    let (tr, _) = simons_flow::io::load_trajectory(trajectory)?;
    let dir = match &g.out {
        Some(d) => {
            fs::create_dir_all(d)?;
            d.clone()
        }
        None => {
            let d = trajectory.join("rates");
            fs::create_dir_all(&d)?;
            d
        }
    };
    let start = Instant::now();
    let mut man = ExperimentManifest::new(
        "rates",
        json!({ "trajectory": trajectory.display().to_string(), "config": tr.config.to_text() }),
        serde_json::to_value(&tr.config.params)?,
    );
    let res = canonical_profile(&tr.config.params)
        .and_then(|base| analyze(&tr, &base))
        .and_then(|d| write_diagnostics(&mut man, &dir, &d));
    finish(man, &dir, start, res)
}
