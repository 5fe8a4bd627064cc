//! Subcommand implementations. Exit-code contract: 0 all requested checks
//! pass, 1 numerical failure (failed check or aborted integration), 2
//! usage/config errors.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use log::info;
use rayon::prelude::*;
use serde_json::json;

use algebroid_mech::algebroid::{sample_points, LieAlgebroid, StructureReport};
use algebroid_mech::dynamics::{
    el_residual, energy_along, integrate, integrate_with, DynamicsError, IntegratorOptions,
};
use algebroid_mech::models;
use algebroid_mech::morphism::{reduction_check, AlgebroidMorphism, ReductionOptions};
use algebroid_mech::paths::EPath;
use algebroid_mech::variation::{
    assemble_stationarity_report, evaluate_section_trial, generate_sine_sections, homotopy_sheet,
    sheet_morphism_residual, StationarityOptions, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{MorphismSpec, PresetKind, ResolvedRun, RunConfig, Tolerances};

/// Action-compatibility tolerance of the reduction demo.
const ACTION_GAP_TOL: f64 = 1e-10;
/// Agreement tolerance between the closed-form multiplier gap and the grid
/// minimizer.
const GAP_AGREEMENT_TOL: f64 = 1e-6;

pub enum Outcome {
    Pass,
    Fail,
}

pub enum CmdError {
    /// Usage or configuration problem (exit 2).
    Config(anyhow::Error),
    /// Numerical abort (exit 1).
    Numerical(anyhow::Error),
}

pub type CmdResult = Result<Outcome, CmdError>;

fn config_err(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Config(e.into())
}

fn numerical_err(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Numerical(e.into())
}

/// Prefixes errors with the suite they came from.
fn in_suite(e: CmdError, suite: &'static str) -> CmdError {
    match e {
        CmdError::Config(err) => CmdError::Config(err.context(suite)),
        CmdError::Numerical(err) => CmdError::Numerical(err.context(suite)),
    }
}

/// Resolved command context shared by all subcommands.
pub struct Ctx {
    pub config: RunConfig,
    pub builtin: Option<String>,
    pub preset: Option<String>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub parallel: bool,
    pub tol: Tolerances,
}

impl Ctx {
    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<(), CmdError> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))
            .map_err(config_err)?;
        let path = self.out_dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(config_err)?;
        text.push('\n');
        fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(config_err)?;
        info!("wrote {}", path.display());
        Ok(())
    }

    fn write_file(&self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<(), CmdError> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))
            .map_err(config_err)?;
        let path = self.out_dir.join(name);
        let mut buf = Vec::new();
        fill(&mut buf).map_err(config_err)?;
        fs::write(&path, buf)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(config_err)?;
        info!("wrote {}", path.display());
        Ok(())
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<serde_json::Value, CmdError> {
    serde_json::to_value(value).map_err(config_err)
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

pub fn cmd_check(ctx: &Ctx) -> CmdResult {
    let algebroid =
        crate::config::resolve_algebroid(ctx.builtin.as_deref(), &ctx.config).map_err(config_err)?;
    let samples = ctx.config.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let points = sample_points::<f64>(
        algebroid.base_dim(),
        samples.count,
        samples.range[0],
        samples.range[1],
        &mut rng,
    );

    let report = run_structure_check(&algebroid, &points, ctx.tol.structure, ctx.parallel)
        .map_err(numerical_err)?;
    println!(
        "structure {}: residual1 {:.3e}, residual2 {:.3e} (tol {:.1e}) -> {}",
        algebroid.name(),
        report.max_residual1,
        report.max_residual2,
        ctx.tol.structure,
        pass_str(report.pass)
    );

    let mut pass = report.pass;
    let mut doc = json!({
        "seed": ctx.seed,
        "algebroid": algebroid.name(),
        "structure": to_json(&report)?,
    });

    if let Some(spec) = &ctx.config.morphism {
        let morphism = resolve_morphism(spec).map_err(config_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x6d6f7270);
        let mpoints = sample_points::<f64>(
            morphism.source().base_dim(),
            samples.count,
            samples.range[0],
            samples.range[1],
            &mut rng,
        );
        let admissibility = morphism.admissibility_residual(&mpoints).map_err(numerical_err)?;
        let bracket = morphism.morphism_residual(&mpoints).map_err(numerical_err)?;
        let m_pass =
            admissibility <= ctx.tol.morphism && bracket.with_source_bracket <= ctx.tol.morphism;
        println!(
            "morphism: admissibility {:.3e}, bracket {:.3e} / {:.3e} (tol {:.1e}) -> {}",
            admissibility,
            bracket.without_source_bracket,
            bracket.with_source_bracket,
            ctx.tol.morphism,
            pass_str(m_pass)
        );
        pass &= m_pass;
        doc["morphism"] = json!({
            "admissibility": admissibility,
            "without_source_bracket": bracket.without_source_bracket,
            "with_source_bracket": bracket.with_source_bracket,
            "tol": ctx.tol.morphism,
            "pass": m_pass,
        });
    }

    doc["pass"] = json!(pass);
    ctx.write_json("check.json", &doc)?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn run_structure_check(
    algebroid: &LieAlgebroid,
    points: &[Vec<f64>],
    tol: f64,
    parallel: bool,
) -> Result<StructureReport<f64>> {
    if !parallel {
        return Ok(algebroid.check_structure_equations(points, tol)?);
    }
    // evaluate points independently, then merge in order
    let partials: Vec<StructureReport<f64>> = points
        .par_iter()
        .map(|p| {
            algebroid
                .check_structure_equations(std::slice::from_ref(p), tol)
                .map_err(anyhow::Error::from)
        })
        .collect::<Result<_>>()?;
    let mut merged = StructureReport {
        algebroid: algebroid.name().to_owned(),
        tol,
        max_residual1: 0.0,
        max_residual2: 0.0,
        pass: true,
        per_point: Vec::with_capacity(points.len()),
    };
    for part in partials {
        merged.max_residual1 = merged.max_residual1.max(part.max_residual1);
        merged.max_residual2 = merged.max_residual2.max(part.max_residual2);
        merged.per_point.extend(part.per_point);
    }
    merged.pass = merged.max_residual1 <= tol && merged.max_residual2 <= tol;
    Ok(merged)
}

fn resolve_morphism(spec: &MorphismSpec) -> Result<AlgebroidMorphism> {
    match (&spec.named, &spec.schema) {
        (Some(name), None) => match name.as_str() {
            "euler_to_so3" => Ok(models::euler_to_so3()?),
            other => Err(anyhow!("unknown named morphism \"{other}\"")),
        },
        (None, Some(schema)) => {
            let source = schema
                .source
                .as_deref()
                .ok_or_else(|| anyhow!("morphism schema needs a \"source\" builtin name"))?;
            let target = schema
                .target
                .as_deref()
                .ok_or_else(|| anyhow!("morphism schema needs a \"target\" builtin name"))?;
            let source = std::sync::Arc::new(algebroid_mech::algebroid::builtin_by_name(source)?);
            let target = std::sync::Arc::new(algebroid_mech::algebroid::builtin_by_name(target)?);
            Ok(schema.build(source, target)?)
        }
        _ => Err(anyhow!(
            "morphism spec must have exactly one of \"named\" or \"schema\""
        )),
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(ctx: &Ctx) -> CmdResult {
    let run = crate::config::resolve_run(ctx.preset.as_deref(), &ctx.config, None)
        .map_err(config_err)?;
    let path = integrate_run(&run, ctx)?;

    ctx.write_file("trajectory.csv", |w| Ok(path.write_csv(w)?))?;
    ctx.write_json("trajectory.json", &path.to_json_value())?;

    let energy = energy_along(&run.system, &path).map_err(numerical_err)?;
    let el = el_residual(&run.system, &path).map_err(numerical_err)?;
    let top_integrals = if run.preset == Some(PresetKind::HeavyTop) {
        Some(
            models::heavy_top_first_integrals(&models::HeavyTopParams::default(), &path)
                .map_err(numerical_err)?,
        )
    } else {
        None
    };

    ctx.write_file("conserved.csv", |w| {
        write!(w, "t,energy,el_residual")?;
        if top_integrals.is_some() {
            write!(w, ",gamma_norm2,spin_momentum")?;
        }
        writeln!(w)?;
        for (k, e) in energy.iter().enumerate() {
            write!(w, "{:?},{:?},{:?}", path.grid().time(k), e, el.per_node[k])?;
            if let Some(ints) = &top_integrals {
                write!(w, ",{:?},{:?}", ints.gamma_norm2[k], ints.spin_momentum[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;

    let drift = energy
        .iter()
        .map(|e| (e - energy[0]).abs())
        .fold(0.0f64, f64::max);
    println!(
        "simulate: {} nodes, energy drift {:.3e}, max EL residual {:.3e}",
        path.grid().nodes(),
        drift,
        el.max_norm
    );
    Ok(Outcome::Pass)
}

fn integrate_run(run: &ResolvedRun, ctx: &Ctx) -> Result<EPath<f64>, CmdError> {
    let options = IntegratorOptions {
        condition_threshold: ctx.config.integrator.condition_threshold,
    };
    integrate_with(
        &run.system,
        &run.x0,
        &run.y0,
        run.t0,
        run.t1,
        run.segments,
        &options,
    )
    .map_err(|e| match e {
        DynamicsError::SingularHessian { .. } | DynamicsError::NonFinite { .. } => {
            numerical_err(anyhow!("integration aborted: {e}"))
        }
        other => config_err(anyhow!("integration failed: {other}")),
    })
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

pub fn cmd_certify(ctx: &Ctx) -> CmdResult {
    let run = crate::config::resolve_run(
        ctx.preset.as_deref(),
        &ctx.config,
        Some(PresetKind::HeavyTop),
    )
    .map_err(config_err)?;
    if run.segments % 2 != 0 {
        return Err(config_err(anyhow!(
            "certify needs an even segment count (Simpson quadrature), got {}",
            run.segments
        )));
    }

    let mut path = integrate_run(&run, ctx)?;
    if let Some(pert) = &ctx.config.perturbation {
        let (t0, t1) = (run.t0, run.t1);
        let amplitude = pert.amplitude;
        path = path
            .map_fiber(|_, t, y| {
                let bump =
                    amplitude * (std::f64::consts::PI * (t - t0) / (t1 - t0)).sin();
                y.iter().map(|v| v + bump).collect()
            })
            .map_err(numerical_err)?;
    }

    let mut overall = true;
    let mut doc = json!({
        "seed": ctx.seed,
        "segments": run.segments,
        "t0": run.t0,
        "t1": run.t1,
        "perturbation": ctx.config.perturbation.as_ref().map(|p| p.amplitude),
    });

    if ctx.config.suites.stationarity {
        let st = ctx.config.stationarity;
        let opts = StationarityOptions {
            tol: ctx.tol.stationarity,
            ds: st.ds,
            s_steps: st.s_steps,
            modes: st.modes,
        };
        let sections = generate_sine_sections(&path, st.k, st.modes, ctx.seed)
            .map_err(|e| in_suite(numerical_err(e), "stationarity suite"))?;
        let trials = if ctx.parallel {
            sections
                .par_iter()
                .map(|s| evaluate_section_trial(&run.system, &path, s, &opts))
                .collect::<Result<Vec<_>, _>>()
        } else {
            sections
                .iter()
                .map(|s| evaluate_section_trial(&run.system, &path, s, &opts))
                .collect()
        }
        .map_err(|e| in_suite(numerical_err(e), "stationarity suite"))?;
        let report = assemble_stationarity_report(ctx.seed, opts.tol, trials);
        let pass = report.verdict == Verdict::Stationary
            && report.max_route_gap <= ctx.tol.route_gap;
        println!(
            "stationarity: max |dS| {:.3e} (tol {:.1e}), route gap {:.3e} (tol {:.1e}) -> {}",
            report.max_abs_ds_analytic,
            ctx.tol.stationarity,
            report.max_route_gap,
            ctx.tol.route_gap,
            pass_str(pass)
        );
        overall &= pass;
        doc["stationarity"] = to_json(&report)?;
        doc["stationarity"]["pass"] = json!(pass);
    }

    if ctx.config.suites.homotopy {
        let hm = ctx.config.homotopy;
        let sections =
            generate_sine_sections(&path, 1, ctx.config.stationarity.modes, ctx.seed ^ 0x73686565)
                .map_err(|e| in_suite(numerical_err(e), "homotopy suite"))?;
        let sheet = homotopy_sheet(&path, &sections[0], hm.s_max, hm.s_segments)
            .map_err(|e| in_suite(numerical_err(e), "homotopy suite"))?;
        let residual = sheet_morphism_residual(&sheet)
            .map_err(|e| in_suite(numerical_err(e), "homotopy suite"))?;
        let pass = residual.max <= ctx.tol.homotopy;
        println!(
            "homotopy sheet: residual {:.3e} (tol {:.1e}) -> {}",
            residual.max,
            ctx.tol.homotopy,
            pass_str(pass)
        );
        overall &= pass;
        doc["homotopy"] = json!({
            "s_max": hm.s_max,
            "s_segments": hm.s_segments,
            "residual": residual.max,
            "tol": ctx.tol.homotopy,
            "pass": pass,
        });
    }

    if ctx.config.suites.reduction {
        let (report_doc, pass) =
            run_reduction_demo(ctx).map_err(|e| in_suite(e, "reduction suite"))?;
        println!(
            "reduction: gap {} (tol {:.1e}), action gap {} -> {}",
            report_doc["direct_gap"], ctx.tol.reduction, report_doc["action_gap"],
            pass_str(pass)
        );
        overall &= pass;
        doc["reduction"] = report_doc;
    }

    if ctx.config.suites.multipliers {
        let (report_doc, pass) =
            run_multiplier_suite(ctx).map_err(|e| in_suite(e, "multipliers suite"))?;
        println!("multipliers: -> {}", pass_str(pass));
        overall &= pass;
        doc["multipliers"] = report_doc;
    }

    doc["stationary"] = doc
        .get("stationarity")
        .map(|s| json!(s["verdict"] == json!("stationary")))
        .unwrap_or(json!(null));
    doc["overall_pass"] = json!(overall);
    ctx.write_json("certify.json", &doc)?;
    println!("certify: {}", pass_str(overall));
    Ok(if overall { Outcome::Pass } else { Outcome::Fail })
}

// ---------------------------------------------------------------------------
// reduce
// ---------------------------------------------------------------------------

fn run_reduction_demo(ctx: &Ctx) -> Result<(serde_json::Value, bool), CmdError> {
    let rc = ctx.config.reduction;
    let source = models::rigid_body_euler_chart(rc.inertia).map_err(config_err)?;
    let target = models::rigid_body_so3(rc.inertia).map_err(config_err)?;
    let morphism = models::euler_to_so3().map_err(config_err)?;

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x7265647563);
    let probes: Vec<(Vec<f64>, Vec<f64>)> = (0..40)
        .map(|_| {
            let x = vec![
                rng.random_range(-3.0..3.0),
                rng.random_range(models::EULER_THETA_MIN + 0.05..models::EULER_THETA_MAX - 0.05),
                rng.random_range(-3.0..3.0),
            ];
            let y = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            (x, y)
        })
        .collect();

    let x0 = [0.3, 1.3, 0.5];
    let omega0 = [0.1, 0.2, 1.0];
    let y0 = models::body_to_chart_rates(&morphism, &x0, &omega0).map_err(config_err)?;

    let report = reduction_check(
        &morphism,
        &source,
        &target,
        &probes,
        &x0,
        &y0,
        0.0,
        rc.t1,
        rc.segments,
        &ReductionOptions {
            compat_tol: 1e-10,
            integrator: IntegratorOptions {
                condition_threshold: ctx.config.integrator.condition_threshold,
            },
        },
    )
    .map_err(numerical_err)?;

    let source_path = integrate(&source, &x0, &y0, 0.0, rc.t1, rc.segments)
        .map_err(numerical_err)?;
    models::check_euler_chart_domain(&source_path).map_err(numerical_err)?;

    let gap = report.direct_gap.unwrap_or(f64::INFINITY);
    let pass = gap <= ctx.tol.reduction && report.action_gap <= ACTION_GAP_TOL;
    let doc = json!({
        "inertia": rc.inertia,
        "t1": rc.t1,
        "segments": rc.segments,
        "compat_max": report.compat_max,
        "source_el_max": report.source_el_max,
        "pushed_el_max": report.pushed_el_max,
        "direct_gap": report.direct_gap,
        "reduction_gap": report.direct_gap,
        "action_gap": report.action_gap,
        "min_fiber_singular_value": report.min_fiber_singular_value,
        "tol": ctx.tol.reduction,
        "pass": pass,
    });
    Ok((doc, pass))
}

pub fn cmd_reduce(ctx: &Ctx) -> CmdResult {
    let (doc, pass) = run_reduction_demo(ctx)?;
    println!(
        "reduction: gap {} (tol {:.1e}), action gap {} -> {}",
        doc["direct_gap"], ctx.tol.reduction, doc["action_gap"],
        pass_str(pass)
    );

    // also emit the two trajectories for plotting
    let rc = ctx.config.reduction;
    let source = models::rigid_body_euler_chart(rc.inertia).map_err(config_err)?;
    let target = models::rigid_body_so3(rc.inertia).map_err(config_err)?;
    let morphism = models::euler_to_so3().map_err(config_err)?;
    let x0 = [0.3, 1.3, 0.5];
    let y0 = models::body_to_chart_rates(&morphism, &x0, &[0.1, 0.2, 1.0]).map_err(config_err)?;
    let source_path =
        integrate(&source, &x0, &y0, 0.0, rc.t1, rc.segments).map_err(numerical_err)?;
    let pushed = morphism.push_path(&source_path).map_err(numerical_err)?;
    let direct = integrate(
        &target,
        pushed.x_at(0),
        pushed.y_at(0),
        0.0,
        rc.t1,
        rc.segments,
    )
    .map_err(numerical_err)?;
    ctx.write_file("pushed.csv", |w| Ok(pushed.write_csv(w)?))?;
    ctx.write_file("direct.csv", |w| Ok(direct.write_csv(w)?))?;
    ctx.write_json("reduce.json", &doc)?;

    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

// ---------------------------------------------------------------------------
// multipliers
// ---------------------------------------------------------------------------

fn run_multiplier_suite(ctx: &Ctx) -> Result<(serde_json::Value, bool), CmdError> {
    let mc = &ctx.config.multipliers;
    let params = models::HeavyTopParams::default();
    let sys = models::heavy_top_system(&params).map_err(config_err)?;

    // gentle motion near the hanging equilibrium unless the config says
    // otherwise
    let x0 = ctx
        .config
        .x0
        .clone()
        .unwrap_or_else(|| vec![0.05, 0.05, -0.9974968671630002]);
    let y0 = ctx
        .config
        .y0
        .clone()
        .unwrap_or_else(|| vec![0.05, -0.02, 0.2]);

    let path = integrate(&sys, &x0, &y0, 0.0, mc.t1, mc.segments).map_err(|e| match e {
        DynamicsError::SingularHessian { .. } | DynamicsError::NonFinite { .. } => {
            numerical_err(anyhow!("integration aborted: {e}"))
        }
        other => config_err(anyhow!("integration failed: {other}")),
    })?;

    let mut pass = true;
    let mut abnormal = Vec::new();
    for &alpha in &mc.alphas {
        let rep = models::abnormal_check(&path, alpha, mc.segments).map_err(config_err)?;
        let ok = rep.max_family_deviation <= ctx.tol.multipliers;
        println!(
            "abnormal family alpha {alpha}: |p - alpha gamma| {:.3e} (tol {:.1e}) -> {}",
            rep.max_family_deviation,
            ctx.tol.multipliers,
            pass_str(ok)
        );
        pass &= ok;
        abnormal.push(json!({
            "alpha": alpha,
            "max_family_deviation": rep.max_family_deviation,
            "max_cross_gamma": rep.max_cross_gamma,
            "pass": ok,
        }));
    }

    // the upright relative equilibrium admits no normal multiplier
    let gamma = [0.0, 0.0, 1.0];
    let omega = [0.0, 0.0, 1.0];
    let closed =
        models::normal_multiplier_gap(&params.inertia, &gamma, &omega).map_err(config_err)?;
    let grid =
        models::normal_multiplier_gap_grid(&params.inertia, &gamma, &omega, 101, 6)
            .map_err(config_err)?;
    let agree = (closed - grid).abs() <= GAP_AGREEMENT_TOL;
    let obstructed = closed > 1.0;
    println!(
        "normal multiplier gap at the relative equilibrium: {closed} (grid {grid:.9}) -> {}",
        pass_str(agree && obstructed)
    );
    pass &= agree && obstructed;

    let doc = json!({
        "t1": mc.t1,
        "segments": mc.segments,
        "x0": x0,
        "y0": y0,
        "abnormal": abnormal,
        "normal_gap": {
            "gamma": gamma,
            "omega": omega,
            "closed_form": closed,
            "grid": grid,
            "agreement_tol": GAP_AGREEMENT_TOL,
            "no_normal_multiplier": obstructed,
        },
        "pass": pass,
    });
    Ok((doc, pass))
}

pub fn cmd_multipliers(ctx: &Ctx) -> CmdResult {
    let (doc, pass) = run_multiplier_suite(ctx)?;
    ctx.write_json("multipliers.json", &doc)?;
    println!("multipliers: {}", pass_str(pass));
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Maps a command result onto the exit-code contract.
pub fn exit_code(result: CmdResult) -> i32 {
    match result {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 1,
        Err(CmdError::Numerical(e)) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(CmdError::Config(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
