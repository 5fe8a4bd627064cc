//! The action functional and the numerical certification of the variational
//! principle.
//!
//! Two independent routes to the derivative of the action along an
//! admissible variation:
//!
//! - [`ds_analytic`]: pairs the Euler-Lagrange residual covector with the
//!   section and integrates, `dS = -integral <E, sigma> dt`. The sign comes
//!   from integration by parts with vanishing endpoint terms and is frozen
//!   by a hand-computed oracle in the tests.
//! - [`ds_numeric`]: a central difference of the action across the
//!   deformation flow, `(S(deform(+ds)) - S(deform(-ds))) / (2 ds)`.
//!
//! [`deform`] integrates, per time node, the flow of the complete lift of
//! the time-dependent section `eta(t, x) := sigma(t)` (constant in `x`, so
//! its base derivative term drops):
//!
//! ```text
//! dx/ds = rho(x) sigma(t)        dy/ds = dsigma/dt + C(x)(y, sigma(t))
//! ```
//!
//! Stacking deformation rows gives a [`HomotopySheet`] `a(s,t) dt + b(s,t) ds`
//! with `b = sigma` independent of `s`; its defining property is the
//! coordinate PDE `db/dt - da/ds + C(a, b) = 0`, whose discrete residual
//! [`sheet_morphism_residual`] reports.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebroid::{AlgebroidError, LieAlgebroid};
use crate::dynamics::{el_covectors, DynamicsError, LagrangianSystem};
use crate::paths::{EPath, GridSpec, PathError, PathSection};
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum VariationError {
    #[error("Simpson quadrature needs an even segment count, got {0}")]
    OddSegmentCount(usize),
    #[error("section must vanish exactly at both endpoints")]
    NonzeroEndpoints,
    #[error("grid mismatch between path and section")]
    GridMismatch,
    #[error("sheet needs at least {needed} interior nodes in each direction")]
    SheetTooSmall { needed: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
}

/// Composite Simpson rule over uniformly spaced samples (even, positive
/// segment count).
pub fn simpson<R: Real>(values: &[R], h: R) -> Result<R, VariationError> {
    if values.len() < 3 {
        return Err(VariationError::OddSegmentCount(
            values.len().saturating_sub(1),
        ));
    }
    let segments = values.len() - 1;
    if !segments.is_multiple_of(2) {
        return Err(VariationError::OddSegmentCount(segments));
    }
    let four = R::from_lit(4.0);
    let two = R::from_lit(2.0);
    let mut acc = values[0] + values[segments];
    let mut k = 1;
    while k < segments {
        acc += four * values[k];
        if k + 1 < segments {
            acc += two * values[k + 1];
        }
        k += 2;
    }
    Ok(acc * h / R::from_lit(3.0))
}

/// The action `S = integral L(x(t), y(t)) dt` along a path, by composite
/// Simpson quadrature.
pub fn action<R: Real>(sys: &LagrangianSystem, path: &EPath<R>) -> Result<R, VariationError> {
    let mut values = Vec::with_capacity(path.grid().nodes());
    for k in 0..path.grid().nodes() {
        values.push(sys.lagrangian_at(path.x_at(k), path.y_at(k))?);
    }
    simpson(&values, path.grid().step())
}

/// Derivative of the action along the variation generated by `sigma`,
/// through the Euler-Lagrange covector: `dS = -integral <E, sigma> dt`.
///
/// Requires `sigma` to vanish exactly at the endpoints (the boundary terms
/// of the integration by parts are dropped, not approximated).
pub fn ds_analytic<R: Real>(
    sys: &LagrangianSystem,
    path: &EPath<R>,
    sect: &PathSection<R>,
) -> Result<R, VariationError> {
    if !sect.compatible_with(path) {
        return Err(VariationError::GridMismatch);
    }
    if !sect.has_zero_endpoints() {
        return Err(VariationError::NonzeroEndpoints);
    }
    let m = path.fiber_rank();
    let e = el_covectors(sys, path)?;
    let mut values = Vec::with_capacity(path.grid().nodes());
    for k in 0..path.grid().nodes() {
        let sigma = sect.sigma_at(k);
        let mut pair = R::zero();
        for a in 0..m {
            pair += e[k * m + a] * sigma[a];
        }
        values.push(pair);
    }
    Ok(-simpson(&values, path.grid().step())?)
}

/// Flows the path a parameter distance `s_val` along the variation field of
/// `sigma`, by RK4 in `s` with `s_steps` steps per node. The time derivative
/// of `sigma` is precomputed once on the original grid.
///
/// With `sigma` vanishing at the endpoints the base endpoints of the path
/// stay put exactly, since `dx/ds = rho(x) * 0 = 0` there stage by stage.
/// The admissibility defect of the output is `O(h^2) + O(s_val * h^2)`: the
/// input defect plus the difference-stencil error of `dsigma/dt`
/// accumulated over the flow.
pub fn deform<R: Real>(
    path: &EPath<R>,
    sect: &PathSection<R>,
    s_val: R,
    s_steps: usize,
) -> Result<EPath<R>, VariationError> {
    if !sect.compatible_with(path) {
        return Err(VariationError::GridMismatch);
    }
    if s_val == R::zero() {
        return Ok(path.clone());
    }
    let steps = s_steps.max(1);
    let m = path.fiber_rank();
    let sdot = sect.time_derivative();
    let ds = s_val / R::from_usize(steps).expect("step count fits");

    let mut xs = Vec::with_capacity(path.xs().len());
    let mut ys = Vec::with_capacity(path.ys().len());
    for k in 0..path.grid().nodes() {
        let sigma = sect.sigma_at(k);
        let sigma_dot = &sdot[k * m..(k + 1) * m];
        let mut x = path.x_at(k).to_vec();
        let mut y = path.y_at(k).to_vec();
        for _ in 0..steps {
            rk4_node_step(path.algebroid(), &mut x, &mut y, sigma, sigma_dot, ds)?;
        }
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
    }
    Ok(EPath::from_samples(
        path.algebroid().clone(),
        *path.grid(),
        xs,
        ys,
    )?)
}

/// One RK4 step of the per-node deformation field.
fn rk4_node_step<R: Real>(
    algebroid: &LieAlgebroid,
    x: &mut [R],
    y: &mut [R],
    sigma: &[R],
    sigma_dot: &[R],
    ds: R,
) -> Result<(), VariationError> {
    let field = |x: &[R], y: &[R]| -> Result<(Vec<R>, Vec<R>), VariationError> {
        let dx = algebroid.anchor_apply(x, sigma)?;
        let c = algebroid.structure_sparse_at(x)?;
        let corr = c.apply(y, sigma);
        let dy = sigma_dot
            .iter()
            .zip(&corr)
            .map(|(&sd, &cv)| sd + cv)
            .collect();
        Ok((dx, dy))
    };
    let half = R::from_lit(0.5);
    let two = R::from_lit(2.0);
    let sixth = R::one() / R::from_lit(6.0);

    let (k1x, k1y) = field(x, y)?;
    let (x2, y2) = shifted(x, y, &k1x, &k1y, half * ds);
    let (k2x, k2y) = field(&x2, &y2)?;
    let (x3, y3) = shifted(x, y, &k2x, &k2y, half * ds);
    let (k3x, k3y) = field(&x3, &y3)?;
    let (x4, y4) = shifted(x, y, &k3x, &k3y, ds);
    let (k4x, k4y) = field(&x4, &y4)?;

    for i in 0..x.len() {
        x[i] += ds * sixth * (k1x[i] + two * k2x[i] + two * k3x[i] + k4x[i]);
    }
    for a in 0..y.len() {
        y[a] += ds * sixth * (k1y[a] + two * k2y[a] + two * k3y[a] + k4y[a]);
    }
    Ok(())
}

fn shifted<R: Real>(x: &[R], y: &[R], kx: &[R], ky: &[R], step: R) -> (Vec<R>, Vec<R>) {
    (
        x.iter().zip(kx).map(|(&v, &d)| v + step * d).collect(),
        y.iter().zip(ky).map(|(&v, &d)| v + step * d).collect(),
    )
}

/// Central-difference derivative of the action across the deformation flow.
pub fn ds_numeric<R: Real>(
    sys: &LagrangianSystem,
    path: &EPath<R>,
    sect: &PathSection<R>,
    ds: R,
    s_steps: usize,
) -> Result<R, VariationError> {
    let plus = action(sys, &deform(path, sect, ds, s_steps)?)?;
    let minus = action(sys, &deform(path, sect, -ds, s_steps)?)?;
    Ok((plus - minus) / (R::from_lit(2.0) * ds))
}

/// A discretized homotopy sheet `a(s,t) dt + b(s,t) ds`.
///
/// Row `j` is the deformation of the seed path to `s = j * s_max / M`; row 0
/// is the seed bit for bit. `b` is the generating section, constant in `s`,
/// and vanishes identically in the first and last time column.
#[derive(Clone, Debug)]
pub struct HomotopySheet<R: Real> {
    algebroid: Arc<LieAlgebroid>,
    t_grid: GridSpec<R>,
    s_max: R,
    s_segments: usize,
    /// (M+1) x (N+1) x n base samples.
    xs: Vec<R>,
    /// (M+1) x (N+1) x m fiber samples.
    ys: Vec<R>,
    /// (M+1) x (N+1) x m section samples.
    b: Vec<R>,
}

impl<R: Real> HomotopySheet<R> {
    /// Assembles a sheet from raw row-major data (used by probes and tests;
    /// [`homotopy_sheet`] is the constructor that enforces the boundary
    /// conditions by construction).
    pub fn from_raw(
        algebroid: Arc<LieAlgebroid>,
        t_grid: GridSpec<R>,
        s_max: R,
        s_segments: usize,
        xs: Vec<R>,
        ys: Vec<R>,
        b: Vec<R>,
    ) -> Result<Self, VariationError> {
        let rows = s_segments + 1;
        let nodes = t_grid.nodes();
        let n = algebroid.base_dim();
        let m = algebroid.fiber_rank();
        if xs.len() != rows * nodes * n || ys.len() != rows * nodes * m || b.len() != rows * nodes * m
        {
            return Err(VariationError::Path(PathError::DataLength {
                what: "sheet data",
                expected: rows * nodes * (n + 2 * m),
                got: xs.len() + ys.len() + b.len(),
            }));
        }
        Ok(HomotopySheet {
            algebroid,
            t_grid,
            s_max,
            s_segments,
            xs,
            ys,
            b,
        })
    }

    pub fn algebroid(&self) -> &Arc<LieAlgebroid> {
        &self.algebroid
    }

    pub fn t_grid(&self) -> &GridSpec<R> {
        &self.t_grid
    }

    pub fn s_segments(&self) -> usize {
        self.s_segments
    }

    pub fn s_step(&self) -> R {
        self.s_max / R::from_usize(self.s_segments).expect("segment count fits")
    }

    pub fn s_value(&self, j: usize) -> R {
        self.s_step() * R::from_usize(j).expect("row index fits")
    }

    #[inline]
    pub fn x_at(&self, j: usize, k: usize) -> &[R] {
        let n = self.algebroid.base_dim();
        let idx = (j * self.t_grid.nodes() + k) * n;
        &self.xs[idx..idx + n]
    }

    #[inline]
    pub fn y_at(&self, j: usize, k: usize) -> &[R] {
        let m = self.algebroid.fiber_rank();
        let idx = (j * self.t_grid.nodes() + k) * m;
        &self.ys[idx..idx + m]
    }

    #[inline]
    pub fn b_at(&self, j: usize, k: usize) -> &[R] {
        let m = self.algebroid.fiber_rank();
        let idx = (j * self.t_grid.nodes() + k) * m;
        &self.b[idx..idx + m]
    }

    /// Row `j` as a path.
    pub fn row(&self, j: usize) -> Result<EPath<R>, VariationError> {
        let nodes = self.t_grid.nodes();
        let n = self.algebroid.base_dim();
        let m = self.algebroid.fiber_rank();
        let xs = self.xs[j * nodes * n..(j + 1) * nodes * n].to_vec();
        let ys = self.ys[j * nodes * m..(j + 1) * nodes * m].to_vec();
        Ok(EPath::from_samples(
            self.algebroid.clone(),
            self.t_grid,
            xs,
            ys,
        )?)
    }
}

/// Builds the homotopy sheet spanned by `sigma` over `[0, s_max]` with `M`
/// parameter steps: row `j` is the RK4 deformation of row `j-1` by one step,
/// and `b(s, t) = sigma(t)` for every `s` (the generating section is chosen
/// constant in the base point).
pub fn homotopy_sheet<R: Real>(
    path: &EPath<R>,
    sect: &PathSection<R>,
    s_max: R,
    s_segments: usize,
) -> Result<HomotopySheet<R>, VariationError> {
    if !sect.compatible_with(path) {
        return Err(VariationError::GridMismatch);
    }
    if !sect.has_zero_endpoints() {
        return Err(VariationError::NonzeroEndpoints);
    }
    if s_segments < 1 {
        return Err(VariationError::SheetTooSmall { needed: 1 });
    }
    let nodes = path.grid().nodes();
    let n = path.base_dim();
    let m = path.fiber_rank();
    let rows = s_segments + 1;
    let ds = s_max / R::from_usize(s_segments).expect("segment count fits");
    let sdot = sect.time_derivative();

    let mut xs = Vec::with_capacity(rows * nodes * n);
    let mut ys = Vec::with_capacity(rows * nodes * m);
    let mut b = Vec::with_capacity(rows * nodes * m);

    xs.extend_from_slice(path.xs());
    ys.extend_from_slice(path.ys());
    b.extend_from_slice(sect.sigmas());

    let mut cur_x = path.xs().to_vec();
    let mut cur_y = path.ys().to_vec();
    for _ in 1..rows {
        for k in 0..nodes {
            let sigma = sect.sigma_at(k);
            let sigma_dot = &sdot[k * m..(k + 1) * m];
            let mut x = cur_x[k * n..(k + 1) * n].to_vec();
            let mut y = cur_y[k * m..(k + 1) * m].to_vec();
            rk4_node_step(path.algebroid(), &mut x, &mut y, sigma, sigma_dot, ds)?;
            cur_x[k * n..(k + 1) * n].copy_from_slice(&x);
            cur_y[k * m..(k + 1) * m].copy_from_slice(&y);
        }
        xs.extend_from_slice(&cur_x);
        ys.extend_from_slice(&cur_y);
        b.extend_from_slice(sect.sigmas());
    }

    HomotopySheet::from_raw(
        path.algebroid().clone(),
        *path.grid(),
        s_max,
        s_segments,
        xs,
        ys,
        b,
    )
}

/// Discrete residual of the sheet morphism condition
/// `db[g]/dt - da[g]/ds + C[g][a][b] a[a] b[b]` on the interior grid
/// (central differences in both directions).
#[derive(Clone, Debug, Serialize)]
pub struct SheetResidualReport<R> {
    pub max: R,
    /// Interior nodes, row-major `(s_segments - 1) x (t_nodes - 2) x m`.
    pub field: Vec<R>,
}

pub fn sheet_morphism_residual<R: Real>(
    sheet: &HomotopySheet<R>,
) -> Result<SheetResidualReport<R>, VariationError> {
    let m_seg = sheet.s_segments();
    let nodes = sheet.t_grid().nodes();
    if m_seg < 2 || nodes < 3 {
        return Err(VariationError::SheetTooSmall { needed: 2 });
    }
    let m = sheet.algebroid().fiber_rank();
    let two_dt = R::from_lit(2.0) * sheet.t_grid().step();
    let two_ds = R::from_lit(2.0) * sheet.s_step();

    let mut field = Vec::with_capacity((m_seg - 1) * (nodes - 2) * m);
    let mut max = R::zero();
    for j in 1..m_seg {
        for k in 1..nodes - 1 {
            let x = sheet.x_at(j, k);
            let y = sheet.y_at(j, k);
            let b = sheet.b_at(j, k);
            let c = sheet.algebroid().structure_sparse_at(x)?;
            let corr = c.apply(y, b);
            for (a, &corr_a) in corr.iter().enumerate() {
                let db_dt = (sheet.b_at(j, k + 1)[a] - sheet.b_at(j, k - 1)[a]) / two_dt;
                let da_ds = (sheet.y_at(j + 1, k)[a] - sheet.y_at(j - 1, k)[a]) / two_ds;
                let r = db_dt - da_ds + corr_a;
                field.push(r);
                max = max.max_by_val(r.abs());
            }
        }
    }
    Ok(SheetResidualReport { max, field })
}

/// Smooth random section vanishing at the endpoints: a short sine series
/// with coefficients drawn from `[-1, 1]`, normalized to sup-norm one. The
/// endpoint nodes are forced to exact zero (a sine evaluated at the right
/// endpoint leaves rounding residue otherwise).
pub fn random_sine_section<R: Real>(
    path: &EPath<R>,
    modes: usize,
    rng: &mut impl Rng,
) -> Result<PathSection<R>, VariationError> {
    let m = path.fiber_rank();
    let grid = *path.grid();
    let coeffs: Vec<f64> = (0..m * modes)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let span = grid.t1 - grid.t0;
    let nodes = grid.nodes();
    let mut sigmas = vec![R::zero(); nodes * m];
    let mut sup = R::zero();
    for k in 1..nodes - 1 {
        let u = (grid.time(k) - grid.t0) / span;
        for a in 0..m {
            let mut v = R::zero();
            for j in 0..modes {
                let freq = R::from_usize(j + 1).expect("mode fits") * R::PI();
                v += R::from_lit(coeffs[a * modes + j]) * crate::scalar::Scalar::sin(freq * u);
            }
            sigmas[k * m + a] = v;
            sup = sup.max_by_val(v.abs());
        }
    }
    if sup > R::zero() {
        for v in sigmas.iter_mut() {
            *v = *v / sup;
        }
    }
    Ok(PathSection::from_samples(grid, m, sigmas)?)
}

#[derive(Clone, Copy, Debug)]
pub struct StationarityOptions {
    /// Verdict threshold on `max |dS|`.
    pub tol: f64,
    /// Parameter offset for the numeric route.
    pub ds: f64,
    /// RK4 steps per deformation.
    pub s_steps: usize,
    /// Sine modes per random section.
    pub modes: usize,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        StationarityOptions {
            tol: 1e-5,
            ds: 1e-3,
            s_steps: 4,
            modes: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stationary,
    NonStationary,
    Vacuous,
}

#[derive(Clone, Debug, Serialize)]
pub struct SigmaTrial<R> {
    pub ds_analytic: R,
    pub ds_numeric: R,
    pub route_gap: R,
}

/// Result of [`stationarity_report`]: sampled-family stationarity only; the
/// verdict quantifies over the `k` drawn sections, nothing more.
#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport<R> {
    pub k: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_abs_ds_analytic: R,
    pub max_route_gap: R,
    pub verdict: Verdict,
    pub per_sigma: Vec<SigmaTrial<R>>,
}

/// Draws `k` seeded random sections for a stationarity run (reproducible for
/// a fixed seed).
pub fn generate_sine_sections<R: Real>(
    path: &EPath<R>,
    k: usize,
    modes: usize,
    seed: u64,
) -> Result<Vec<PathSection<R>>, VariationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| random_sine_section(path, modes, &mut rng))
        .collect()
}

/// Evaluates both action-derivative routes for one section.
pub fn evaluate_section_trial<R: Real>(
    sys: &LagrangianSystem,
    path: &EPath<R>,
    sect: &PathSection<R>,
    options: &StationarityOptions,
) -> Result<SigmaTrial<R>, VariationError> {
    let a = ds_analytic(sys, path, sect)?;
    let n = ds_numeric(sys, path, sect, R::from_lit(options.ds), options.s_steps)?;
    Ok(SigmaTrial {
        ds_analytic: a,
        ds_numeric: n,
        route_gap: (a - n).abs(),
    })
}

/// Assembles the report from per-section trials.
pub fn assemble_stationarity_report<R: Real>(
    seed: u64,
    tol: f64,
    per_sigma: Vec<SigmaTrial<R>>,
) -> StationarityReport<R> {
    let k = per_sigma.len();
    let mut max_ds = R::zero();
    let mut max_gap = R::zero();
    for t in &per_sigma {
        max_ds = max_ds.max_by_val(t.ds_analytic.abs());
        max_gap = max_gap.max_by_val(t.route_gap);
    }
    let verdict = if k == 0 {
        Verdict::Vacuous
    } else if max_ds.to_f64() <= tol {
        Verdict::Stationary
    } else {
        Verdict::NonStationary
    };
    StationarityReport {
        k,
        seed,
        tol,
        max_abs_ds_analytic: max_ds,
        max_route_gap: max_gap,
        verdict,
        per_sigma,
    }
}

/// Draws `k` random endpoint-vanishing sections (seeded, reproducible) and
/// evaluates both action-derivative routes for each.
pub fn stationarity_report<R: Real>(
    sys: &LagrangianSystem,
    path: &EPath<R>,
    k: usize,
    seed: u64,
    options: &StationarityOptions,
) -> Result<StationarityReport<R>, VariationError> {
    let sections = generate_sine_sections(path, k, options.modes, seed)?;
    let per_sigma = sections
        .iter()
        .map(|sect| evaluate_section_trial(sys, path, sect, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_stationarity_report(seed, options.tol, per_sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::{builtin, Builtin};
    use crate::dynamics::integrate;

    fn tangent1_free() -> LagrangianSystem {
        let a = Arc::new(builtin(Builtin::Tangent(1)).unwrap());
        LagrangianSystem::from_source(a, "y1^2/2").unwrap()
    }

    fn heavy_top() -> LagrangianSystem {
        let a = Arc::new(builtin(Builtin::So3R3).unwrap());
        LagrangianSystem::from_source(a, "0.5*(y1^2 + y2^2 + 2*y3^2) - x3").unwrap()
    }

    #[test]
    fn action_of_constant_lagrangian_is_the_interval_length() {
        let a = Arc::new(builtin(Builtin::Tangent(1)).unwrap());
        let sys = LagrangianSystem::from_source(a, "1 + 0*y1").unwrap();
        let grid = GridSpec::new(0.0f64, 2.0, 40).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| (vec![t], vec![1.0])).unwrap();
        let s = action(&sys, &p).unwrap();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn action_of_free_particle_line() {
        let sys = tangent1_free();
        let grid = GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| (vec![t], vec![1.0])).unwrap();
        assert!((action(&sys, &p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn action_of_heavy_top_equilibrium_vanishes() {
        let sys = heavy_top();
        let grid = GridSpec::new(0.0f64, 1.0, 50).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |_| {
            (vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0])
        })
        .unwrap();
        assert!(action(&sys, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn odd_segment_count_is_rejected() {
        let sys = tangent1_free();
        let grid = GridSpec::new(0.0f64, 1.0, 101).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| (vec![t], vec![1.0])).unwrap();
        assert!(matches!(
            action(&sys, &p),
            Err(VariationError::OddSegmentCount(101))
        ));
    }

    /// Frozen sign oracle: for x(t) = t^2/2, y = t on the line with
    /// L = y^2/2 and sigma = sin(pi t), the exact value is
    /// dS = integral t * d(sigma)/dt dt = -integral sigma dt = -2/pi.
    #[test]
    fn ds_sign_convention_oracle() {
        let sys = tangent1_free();
        let grid = GridSpec::new(0.0f64, 1.0, 2000).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| {
            (vec![0.5 * t * t], vec![t])
        })
        .unwrap();
        let mut s = PathSection::on_path(&p, |t| vec![(std::f64::consts::PI * t).sin()]).unwrap();
        // force exact zeros at the ends
        let mut data = s.sigmas().to_vec();
        data[0] = 0.0;
        *data.last_mut().unwrap() = 0.0;
        s = PathSection::from_samples(*p.grid(), 1, data).unwrap();

        let expected = -2.0 / std::f64::consts::PI;
        let analytic = ds_analytic(&sys, &p, &s).unwrap();
        assert!(
            (analytic - expected).abs() < 1e-6,
            "analytic {analytic} vs {expected}"
        );
        let numeric = ds_numeric(&sys, &p, &s, 1e-3, 2).unwrap();
        assert!(
            (numeric - expected).abs() < 1e-6,
            "numeric {numeric} vs {expected}"
        );
    }

    #[test]
    fn ds_analytic_is_linear_in_the_section() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.1f64, 0.2, 0.95], &[0.3, -0.1, 0.5], 0.0, 1.0, 400).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let s1 = random_sine_section(&p, 4, &mut rng).unwrap();
        let s2 = random_sine_section(&p, 4, &mut rng).unwrap();
        let (a, b) = (1.25, -0.75);
        let combo = s1.linear_comb(a, &s2, b).unwrap();
        let lhs = ds_analytic(&sys, &p, &combo).unwrap();
        let rhs = a * ds_analytic(&sys, &p, &s1).unwrap() + b * ds_analytic(&sys, &p, &s2).unwrap();
        assert!((lhs - rhs).abs() <= 1e-14, "lhs {lhs} rhs {rhs}");

        // and the base part of the variation vanishes exactly at the fixed
        // endpoints
        let field = crate::paths::xi(&p, &combo).unwrap();
        let last = p.grid().nodes() - 1;
        assert!(field.dx_at(0).iter().all(|&v| v == 0.0));
        assert!(field.dx_at(last).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ds_of_zero_section_is_zero() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.2f64, 0.0, 0.95], &[0.1, 0.2, 0.5], 0.0, 1.0, 200).unwrap();
        let zero = PathSection::on_path(&p, |_| vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(ds_analytic(&sys, &p, &zero).unwrap(), 0.0);
        assert_eq!(ds_numeric(&sys, &p, &zero, 1e-3, 2).unwrap(), 0.0);
    }

    #[test]
    fn nonzero_endpoint_section_is_rejected() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.0f64, 0.0, 1.0], &[0.1, 0.0, 0.5], 0.0, 1.0, 100).unwrap();
        let bad = PathSection::on_path(&p, |_| vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            ds_analytic(&sys, &p, &bad),
            Err(VariationError::NonzeroEndpoints)
        ));
    }

    #[test]
    fn deform_at_zero_parameter_is_bitwise_identity() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.1f64, 0.1, 0.9], &[0.2, -0.1, 0.6], 0.0, 1.0, 100).unwrap();
        let s = PathSection::on_path(&p, |t| {
            let u = (std::f64::consts::PI * t).sin();
            vec![u, 0.5 * u, -u]
        })
        .unwrap();
        let d = deform(&p, &s, 0.0, 4).unwrap();
        assert_eq!(d.xs(), p.xs());
        assert_eq!(d.ys(), p.ys());
    }

    #[test]
    fn deform_of_zero_section_is_bitwise_identity() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.1f64, 0.1, 0.9], &[0.2, -0.1, 0.6], 0.0, 1.0, 100).unwrap();
        let zero = PathSection::on_path(&p, |_| vec![0.0; 3]).unwrap();
        let d = deform(&p, &zero, 0.25, 4).unwrap();
        assert_eq!(d.xs(), p.xs());
        assert_eq!(d.ys(), p.ys());
    }

    #[test]
    fn deform_on_tangent_is_the_additive_variation() {
        let a = Arc::new(builtin(Builtin::Tangent(2)).unwrap());
        let sys = LagrangianSystem::from_source(a, "(y1^2 + y2^2)/2").unwrap();
        let grid = GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| {
            (vec![t, 2.0 * t], vec![1.0, 2.0])
        })
        .unwrap();
        let s = PathSection::on_path(&p, |t| {
            vec![(std::f64::consts::PI * t).sin(), t * (1.0 - t)]
        })
        .unwrap();
        let sdot = s.time_derivative();
        let sv = 0.37;
        let d = deform(&p, &s, sv, 1).unwrap();
        for k in 0..grid.nodes() {
            for i in 0..2 {
                let want_x = p.x_at(k)[i] + sv * s.sigma_at(k)[i];
                let want_y = p.y_at(k)[i] + sv * sdot[k * 2 + i];
                assert!((d.x_at(k)[i] - want_x).abs() < 1e-14);
                assert!((d.y_at(k)[i] - want_y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deform_keeps_base_endpoints_fixed() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.1f64, -0.2, 0.95], &[0.3, 0.1, 0.7], 0.0, 1.0, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_sine_section(&p, 5, &mut rng).unwrap();
        let d = deform(&p, &s, 0.3, 8).unwrap();
        let last = p.grid().nodes() - 1;
        for i in 0..3 {
            assert!((d.x_at(0)[i] - p.x_at(0)[i]).abs() <= 1e-12);
            assert!((d.x_at(last)[i] - p.x_at(last)[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn route_agreement_on_heavy_top_solutions_and_percent_level_on_probes() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.15f64, -0.1, 0.97], &[0.3, 0.2, 0.6], 0.0, 1.0, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let s = random_sine_section(&p, 5, &mut rng).unwrap();
            let a = ds_analytic(&sys, &p, &s).unwrap();
            let n = ds_numeric(&sys, &p, &s, 1e-3, 4).unwrap();
            assert!((a - n).abs() < 1e-4, "gap {}", (a - n).abs());
            assert!(a.abs() < 1e-5, "solution not stationary: {a}");
        }
    }

    #[test]
    fn ds_scales_linearly_in_the_perturbation() {
        let sys = heavy_top();
        let base = integrate(&sys, &[0.0f64, 0.0, 1.0], &[0.2, 0.1, 0.6], 0.0, 1.0, 800).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_sine_section(&base, 5, &mut rng).unwrap();
        let mut values = Vec::new();
        for eps in [0.01, 0.02, 0.04] {
            let perturbed = base
                .map_fiber(|_, t, y| {
                    let bump = eps * (std::f64::consts::PI * t).sin();
                    vec![y[0] + bump, y[1], y[2]]
                })
                .unwrap();
            values.push(ds_analytic(&sys, &perturbed, &s).unwrap());
        }
        let r1 = values[1] / values[0];
        let r2 = values[2] / values[1];
        assert!((r1 - 2.0).abs() < 0.2, "ratio {r1}");
        assert!((r2 - 2.0).abs() < 0.2, "ratio {r2}");
    }

    #[test]
    fn sheet_row_zero_is_the_seed_and_boundaries_vanish() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.1f64, 0.0, 0.95], &[0.25, -0.15, 0.6], 0.0, 1.0, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_sine_section(&p, 5, &mut rng).unwrap();
        let sheet = homotopy_sheet(&p, &s, 0.1, 10).unwrap();
        let row0 = sheet.row(0).unwrap();
        assert_eq!(row0.xs(), p.xs());
        assert_eq!(row0.ys(), p.ys());
        let last_t = p.grid().nodes() - 1;
        for j in 0..=10 {
            for a in 0..3 {
                assert_eq!(sheet.b_at(j, 0)[a], 0.0);
                assert_eq!(sheet.b_at(j, last_t)[a], 0.0);
            }
        }
    }

    #[test]
    fn tangent_sheet_satisfies_the_pde_to_rounding() {
        let a = Arc::new(builtin(Builtin::Tangent(2)).unwrap());
        let sys = LagrangianSystem::from_source(a, "(y1^2 + y2^2)/2").unwrap();
        let grid = GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| {
            (vec![t, -t], vec![1.0, -1.0])
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_sine_section(&p, 4, &mut rng).unwrap();
        let sheet = homotopy_sheet(&p, &s, 0.2, 10).unwrap();
        let rep = sheet_morphism_residual(&sheet).unwrap();
        assert!(rep.max <= 1e-10, "{}", rep.max);
    }

    #[test]
    fn heavy_top_sheet_residual_decays_at_second_order() {
        let sys = heavy_top();
        let residual = |segments: usize, s_segments: usize| -> f64 {
            let p = integrate(
                &sys,
                &[0.1, -0.1, 0.97],
                &[0.25, 0.2, 0.5],
                0.0,
                1.0,
                segments,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let s = random_sine_section(&p, 5, &mut rng).unwrap();
            let sheet = homotopy_sheet(&p, &s, 0.1, s_segments).unwrap();
            sheet_morphism_residual(&sheet).unwrap().max
        };
        let coarse = residual(250, 10);
        let fine = residual(500, 20);
        let order = (coarse / fine).log2();
        assert!(order >= 1.7, "order {order} ({coarse} -> {fine})");
    }

    #[test]
    fn corrupted_sheet_has_visible_residual() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.1f64, 0.0, 0.95], &[0.3, -0.2, 0.6], 0.0, 1.0, 400).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = random_sine_section(&p, 5, &mut rng).unwrap();
        let sheet = homotopy_sheet(&p, &s, 0.1, 10).unwrap();
        let clean = sheet_morphism_residual(&sheet).unwrap().max;

        let scaled: Vec<f64> = sheet.b.iter().map(|v| v * 1.1).collect();
        let corrupt = HomotopySheet::from_raw(
            sheet.algebroid.clone(),
            sheet.t_grid,
            sheet.s_max,
            sheet.s_segments,
            sheet.xs.clone(),
            sheet.ys.clone(),
            scaled,
        )
        .unwrap();
        let dirty = sheet_morphism_residual(&corrupt).unwrap().max;
        assert!(dirty > 10.0 * clean + 1e-3, "clean {clean}, dirty {dirty}");
    }

    mod simpson_property {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Composite Simpson integrates cubics exactly (up to rounding).
            #[test]
            fn simpson_is_exact_on_cubics(
                c0 in -2.0..2.0f64,
                c1 in -2.0..2.0f64,
                c2 in -2.0..2.0f64,
                c3 in -2.0..2.0f64,
                t1 in 0.5..3.0f64,
            ) {
                let n = 64usize;
                let h = t1 / n as f64;
                let values: Vec<f64> = (0..=n)
                    .map(|k| {
                        let t = k as f64 * h;
                        c0 + c1 * t + c2 * t * t + c3 * t * t * t
                    })
                    .collect();
                let got = simpson(&values, h).unwrap();
                let exact = c0 * t1
                    + c1 * t1.powi(2) / 2.0
                    + c2 * t1.powi(3) / 3.0
                    + c3 * t1.powi(4) / 4.0;
                prop_assert!((got - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
            }
        }
    }

    #[test]
    fn stationarity_verdicts() {
        let sys = heavy_top();
        let p = integrate(&sys, &[0.1f64, -0.2, 0.95], &[0.3, 0.15, 0.55], 0.0, 1.0, 1000).unwrap();
        let opts = StationarityOptions::default();
        let rep = stationarity_report(&sys, &p, 8, 1234, &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::Stationary);
        assert!(rep.max_route_gap.to_f64() < 1e-4);

        let perturbed = p
            .map_fiber(|_, t, y| {
                let bump = 0.05 * (std::f64::consts::PI * t).sin();
                vec![y[0] + bump, y[1] + bump, y[2]]
            })
            .unwrap();
        let rep = stationarity_report(&sys, &perturbed, 8, 1234, &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::NonStationary);
        assert!(rep.max_abs_ds_analytic.to_f64() >= 1e-3);

        let rep = stationarity_report(&sys, &p, 0, 1, &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::Vacuous);
    }
}
