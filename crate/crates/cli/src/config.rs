//! Run configuration: JSON schema, presets, tolerance defaults.
//!
//! Field names and defaults are frozen in `docs/io-formats.md`.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use algebroid_mech::algebroid::{builtin_by_name, AlgebroidSchema, LieAlgebroid};
use algebroid_mech::models;
use algebroid_mech::morphism::MorphismSchema;
use algebroid_mech::LagrangianSystem;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Named model preset: `heavy_top`, `rigid_body` or `free_particle`.
    pub preset: Option<String>,
    pub algebroid: Option<AlgebroidSpec>,
    /// Lagrangian expression in `x1..xn, y1..ym`.
    pub lagrangian: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub segments: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    #[serde(default)]
    pub suites: Suites,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub samples: SampleConfig,
    #[serde(default)]
    pub stationarity: StationarityConfig,
    #[serde(default)]
    pub homotopy: HomotopyConfig,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub multipliers: MultipliersConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// Optional fiber perturbation applied to the certified path
    /// (a `amplitude * sin(pi (t - t0)/(t1 - t0))` bump on every component).
    pub perturbation: Option<Perturbation>,
    /// Optional morphism to check alongside the algebroid.
    pub morphism: Option<MorphismSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebroidSpec {
    pub builtin: Option<String>,
    pub custom: Option<AlgebroidSchema>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphismSpec {
    /// A named shipped morphism: currently `euler_to_so3`.
    pub named: Option<String>,
    /// Or an inline schema with `source`/`target` builtin names.
    pub schema: Option<MorphismSchema>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Suites {
    pub structure: bool,
    pub stationarity: bool,
    pub homotopy: bool,
    pub reduction: bool,
    pub multipliers: bool,
}

impl Default for Suites {
    fn default() -> Self {
        Suites {
            structure: true,
            stationarity: true,
            homotopy: true,
            reduction: true,
            multipliers: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub structure: f64,
    pub morphism: f64,
    pub stationarity: f64,
    pub route_gap: f64,
    pub homotopy: f64,
    pub reduction: f64,
    pub multipliers: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            structure: 1e-10,
            morphism: 1e-8,
            stationarity: 1e-5,
            route_gap: 1e-4,
            homotopy: 5e-4,
            reduction: 1e-4,
            multipliers: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub count: usize,
    pub range: [f64; 2],
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            count: 100,
            range: [-2.0, 2.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationarityConfig {
    pub k: usize,
    pub ds: f64,
    pub s_steps: usize,
    pub modes: usize,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        StationarityConfig {
            k: 20,
            ds: 1e-3,
            s_steps: 4,
            modes: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomotopyConfig {
    pub s_max: f64,
    pub s_segments: usize,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        HomotopyConfig {
            s_max: 0.1,
            s_segments: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    pub inertia: [f64; 3],
    pub t1: f64,
    pub segments: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            inertia: [1.0, 2.0, 3.0],
            t1: 5.0,
            segments: 5000,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultipliersConfig {
    pub alphas: Vec<f64>,
    pub t1: f64,
    pub segments: usize,
}

impl Default for MultipliersConfig {
    fn default() -> Self {
        MultipliersConfig {
            alphas: vec![-1.0, 2.0],
            t1: 10.0,
            segments: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    /// Abort threshold for the fiber-Hessian condition number.
    pub condition_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            condition_threshold: 1e8,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub amplitude: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| anyhow!("config {}: {e}", path.display()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetKind {
    HeavyTop,
    RigidBody,
    FreeParticle,
}

/// A fully resolved simulation target.
pub struct ResolvedRun {
    pub system: LagrangianSystem,
    pub preset: Option<PresetKind>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub segments: usize,
}

fn preset_kind(name: &str) -> Result<PresetKind> {
    match name {
        "heavy_top" => Ok(PresetKind::HeavyTop),
        "rigid_body" => Ok(PresetKind::RigidBody),
        "free_particle" => Ok(PresetKind::FreeParticle),
        other => bail!("unknown preset \"{other}\" (heavy_top | rigid_body | free_particle)"),
    }
}

fn preset_run(kind: PresetKind) -> Result<ResolvedRun> {
    match kind {
        PresetKind::HeavyTop => Ok(ResolvedRun {
            system: models::heavy_top_system(&models::HeavyTopParams::default())?,
            preset: Some(kind),
            x0: vec![0.2, -0.3, 0.9327379053088815],
            y0: vec![0.4, 0.3, 0.8],
            t0: 0.0,
            t1: 1.0,
            segments: 2000,
        }),
        PresetKind::RigidBody => Ok(ResolvedRun {
            system: models::rigid_body_so3([1.0, 2.0, 3.0])?,
            preset: Some(kind),
            x0: vec![0.0],
            y0: vec![1.0, 1.0, 1.0],
            t0: 0.0,
            t1: 5.0,
            segments: 5000,
        }),
        PresetKind::FreeParticle => Ok(ResolvedRun {
            system: models::free_particle(2)?,
            preset: Some(kind),
            x0: vec![0.0, 0.0],
            y0: vec![1.0, 2.0],
            t0: 0.0,
            t1: 1.0,
            segments: 100,
        }),
    }
}

/// Resolves the algebroid named on the command line or in the config.
pub fn resolve_algebroid(
    cli_builtin: Option<&str>,
    config: &RunConfig,
) -> Result<Arc<LieAlgebroid>> {
    if let Some(name) = cli_builtin {
        return Ok(Arc::new(builtin_by_name(name)?));
    }
    if let Some(spec) = &config.algebroid {
        match (&spec.builtin, &spec.custom) {
            (Some(name), None) => return Ok(Arc::new(builtin_by_name(name)?)),
            (None, Some(schema)) => return Ok(Arc::new(schema.build()?)),
            _ => bail!("algebroid spec must have exactly one of \"builtin\" or \"custom\""),
        }
    }
    if let Some(name) = &config.preset {
        return Ok(preset_run(preset_kind(name)?)?.system.algebroid().clone());
    }
    bail!("no algebroid given: use --builtin NAME or a config with \"algebroid\"/\"preset\"")
}

/// Resolves the system and initial-value data for simulate/certify runs.
/// Precedence: explicit config fields override the preset's defaults; the
/// preset (CLI flag first, then config) supplies everything else;
/// `default_preset` applies when nothing at all is configured.
pub fn resolve_run(
    cli_preset: Option<&str>,
    config: &RunConfig,
    default_preset: Option<PresetKind>,
) -> Result<ResolvedRun> {
    let preset = match cli_preset {
        Some(name) => Some(preset_kind(name)?),
        None => match &config.preset {
            Some(name) => Some(preset_kind(name)?),
            None => None,
        },
    };

    let mut run = match preset {
        Some(kind) => preset_run(kind)?,
        None => {
            if config.algebroid.is_some() || config.lagrangian.is_some() {
                let algebroid = resolve_algebroid(None, config)?;
                let lagrangian = config
                    .lagrangian
                    .as_deref()
                    .ok_or_else(|| anyhow!("a custom run needs a \"lagrangian\" expression"))?;
                let system = LagrangianSystem::from_source(algebroid, lagrangian)?;
                let x0 = config
                    .x0
                    .clone()
                    .ok_or_else(|| anyhow!("a custom run needs \"x0\""))?;
                let y0 = config
                    .y0
                    .clone()
                    .ok_or_else(|| anyhow!("a custom run needs \"y0\""))?;
                ResolvedRun {
                    system,
                    preset: None,
                    x0,
                    y0,
                    t0: 0.0,
                    t1: 1.0,
                    segments: 1000,
                }
            } else if let Some(kind) = default_preset {
                preset_run(kind)?
            } else {
                bail!("no system given: use --preset, or a config with \"preset\" or \"algebroid\"+\"lagrangian\"");
            }
        }
    };

    if let Some(x0) = &config.x0 {
        run.x0 = x0.clone();
    }
    if let Some(y0) = &config.y0 {
        run.y0 = y0.clone();
    }
    if let Some(t0) = config.t0 {
        run.t0 = t0;
    }
    if let Some(t1) = config.t1 {
        run.t1 = t1;
    }
    if let Some(segments) = config.segments {
        run.segments = segments;
    }

    if run.x0.len() != run.system.algebroid().base_dim() {
        bail!(
            "x0 has {} components but the base dimension is {}",
            run.x0.len(),
            run.system.algebroid().base_dim()
        );
    }
    if run.y0.len() != run.system.algebroid().fiber_rank() {
        bail!(
            "y0 has {} components but the fiber rank is {}",
            run.y0.len(),
            run.system.algebroid().fiber_rank()
        );
    }
    if run.t1 <= run.t0 {
        bail!("t1 must exceed t0");
    }
    if run.segments < 2 {
        bail!("segments must be at least 2");
    }
    Ok(run)
}
