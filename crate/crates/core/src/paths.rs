//! Discretized admissible curves and their variations.
//!
//! An [`EPath`] samples a curve `t -> (x(t), y(t))` on a uniform grid;
//! admissibility means `dx/dt = rho(x) y`, checked with second-order
//! difference stencils. A [`PathSection`] carries fiber components
//! `sigma(t)` along the same grid. The admissible-variation map
//!
//! ```text
//! xi: sigma -> (dx, dy) = (rho(x) sigma, dsigma/dt + C(x)(y, sigma))
//! ```
//!
//! produces the tangent directions of the variational principle, and the
//! canonical involution swaps the two fiber slots of a prolongation element
//! with the matching `C` correction. Time derivatives of grid data use
//! central differences with second-order one-sided stencils at the endpoints
//! throughout.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebroid::{AlgebroidError, LieAlgebroid};
use crate::expr::Expression;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum PathError {
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
    #[error("grid or rank mismatch between path and section/field")]
    GridMismatch,
    #[error("need at least {needed} segments, got {got}")]
    TooFewSegments { needed: usize, got: usize },
    #[error("{what}: expected {expected} values, got {got}")]
    DataLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("interval is empty or not increasing")]
    BadInterval,
    #[error("prolongation element: |dx - rho(x) b| = {residual:e} exceeds {tol:e}")]
    InvalidProlongation { residual: f64, tol: f64 },
    #[error("curve file: {0}")]
    Format(String),
}

/// Uniform time grid on `[t0, t1]` with `segments + 1` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<R> {
    pub t0: R,
    pub t1: R,
    pub segments: usize,
}

impl<R: Real> GridSpec<R> {
    pub fn new(t0: R, t1: R, segments: usize) -> Result<Self, PathError> {
        // NaN endpoints must fail too, so test for the good case
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(t1 > t0) {
            return Err(PathError::BadInterval);
        }
        if segments < 1 {
            return Err(PathError::TooFewSegments {
                needed: 1,
                got: segments,
            });
        }
        Ok(GridSpec { t0, t1, segments })
    }

    #[inline]
    pub fn step(&self) -> R {
        (self.t1 - self.t0) / R::from_usize(self.segments).expect("segment count fits")
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.segments + 1
    }

    #[inline]
    pub fn time(&self, k: usize) -> R {
        if k == self.segments {
            self.t1
        } else {
            self.t0 + self.step() * R::from_usize(k).expect("node index fits")
        }
    }

    pub fn times(&self) -> Vec<R> {
        (0..self.nodes()).map(|k| self.time(k)).collect()
    }
}

/// Second-order time derivative of grid data with `comps` components per
/// node: central differences inside, one-sided three-point stencils at the
/// endpoints. This is the one difference scheme used everywhere in the
/// crate.
pub fn time_derivative<R: Real>(data: &[R], comps: usize, grid: &GridSpec<R>) -> Vec<R> {
    let nodes = grid.nodes();
    debug_assert_eq!(data.len(), nodes * comps);
    debug_assert!(grid.segments >= 2);
    let h = grid.step();
    let two_h = R::from_lit(2.0) * h;
    let mut out = vec![R::zero(); data.len()];
    for c in 0..comps {
        let at = |k: usize| data[k * comps + c];
        out[c] = (-R::from_lit(3.0) * at(0) + R::from_lit(4.0) * at(1) - at(2)) / two_h;
        for k in 1..nodes - 1 {
            out[k * comps + c] = (at(k + 1) - at(k - 1)) / two_h;
        }
        let last = nodes - 1;
        out[last * comps + c] = (R::from_lit(3.0) * at(last) - R::from_lit(4.0) * at(last - 1)
            + at(last - 2))
            / two_h;
    }
    out
}

/// A discretized curve in the total space of an algebroid.
#[derive(Clone, Debug)]
pub struct EPath<R: Real> {
    algebroid: Arc<LieAlgebroid>,
    grid: GridSpec<R>,
    xs: Vec<R>,
    ys: Vec<R>,
}

/// Admissibility data of a path: the per-node defect `|dx/dt - rho(x) y|`
/// in the max norm, its maximum, and the constant `kappa = max / h^2`
/// relating the defect to the grid resolution.
#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport<R> {
    pub max_residual: R,
    pub kappa: R,
    pub per_node: Vec<R>,
}

impl<R: Real> EPath<R> {
    pub fn from_samples(
        algebroid: Arc<LieAlgebroid>,
        grid: GridSpec<R>,
        xs: Vec<R>,
        ys: Vec<R>,
    ) -> Result<Self, PathError> {
        let nodes = grid.nodes();
        if xs.len() != nodes * algebroid.base_dim() {
            return Err(PathError::DataLength {
                what: "base samples",
                expected: nodes * algebroid.base_dim(),
                got: xs.len(),
            });
        }
        if ys.len() != nodes * algebroid.fiber_rank() {
            return Err(PathError::DataLength {
                what: "fiber samples",
                expected: nodes * algebroid.fiber_rank(),
                got: ys.len(),
            });
        }
        Ok(EPath {
            algebroid,
            grid,
            xs,
            ys,
        })
    }

    /// Samples `t -> (x(t), y(t))` on the grid.
    pub fn from_fn(
        algebroid: Arc<LieAlgebroid>,
        grid: GridSpec<R>,
        mut f: impl FnMut(R) -> (Vec<R>, Vec<R>),
    ) -> Result<Self, PathError> {
        let n = algebroid.base_dim();
        let m = algebroid.fiber_rank();
        let mut xs = Vec::with_capacity(grid.nodes() * n);
        let mut ys = Vec::with_capacity(grid.nodes() * m);
        for k in 0..grid.nodes() {
            let (x, y) = f(grid.time(k));
            if x.len() != n || y.len() != m {
                return Err(PathError::DataLength {
                    what: "sampled node",
                    expected: n + m,
                    got: x.len() + y.len(),
                });
            }
            xs.extend_from_slice(&x);
            ys.extend_from_slice(&y);
        }
        EPath::from_samples(algebroid, grid, xs, ys)
    }

    pub fn algebroid(&self) -> &Arc<LieAlgebroid> {
        &self.algebroid
    }

    pub fn grid(&self) -> &GridSpec<R> {
        &self.grid
    }

    pub fn base_dim(&self) -> usize {
        self.algebroid.base_dim()
    }

    pub fn fiber_rank(&self) -> usize {
        self.algebroid.fiber_rank()
    }

    #[inline]
    pub fn x_at(&self, k: usize) -> &[R] {
        let n = self.algebroid.base_dim();
        &self.xs[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn y_at(&self, k: usize) -> &[R] {
        let m = self.algebroid.fiber_rank();
        &self.ys[k * m..(k + 1) * m]
    }

    pub fn xs(&self) -> &[R] {
        &self.xs
    }

    pub fn ys(&self) -> &[R] {
        &self.ys
    }

    /// A copy with fiber samples transformed node by node (the base samples
    /// stay). Used to build perturbed probe paths.
    pub fn map_fiber(&self, mut f: impl FnMut(usize, R, &[R]) -> Vec<R>) -> Result<Self, PathError> {
        let m = self.fiber_rank();
        let mut ys = Vec::with_capacity(self.ys.len());
        for k in 0..self.grid.nodes() {
            let new = f(k, self.grid.time(k), self.y_at(k));
            if new.len() != m {
                return Err(PathError::DataLength {
                    what: "mapped fiber node",
                    expected: m,
                    got: new.len(),
                });
            }
            ys.extend_from_slice(&new);
        }
        EPath::from_samples(self.algebroid.clone(), self.grid, self.xs.clone(), ys)
    }

    /// As [`map_fiber`](Self::map_fiber) for the base samples.
    pub fn map_base(&self, mut f: impl FnMut(usize, R, &[R]) -> Vec<R>) -> Result<Self, PathError> {
        let n = self.base_dim();
        let mut xs = Vec::with_capacity(self.xs.len());
        for k in 0..self.grid.nodes() {
            let new = f(k, self.grid.time(k), self.x_at(k));
            if new.len() != n {
                return Err(PathError::DataLength {
                    what: "mapped base node",
                    expected: n,
                    got: new.len(),
                });
            }
            xs.extend_from_slice(&new);
        }
        EPath::from_samples(self.algebroid.clone(), self.grid, xs, self.ys.clone())
    }

    /// Per-node admissibility defect `|dx/dt - rho(x) y|` (max norm over
    /// components).
    pub fn admissibility(&self) -> Result<AdmissibilityReport<R>, PathError> {
        if self.grid.segments < 2 {
            return Err(PathError::TooFewSegments {
                needed: 2,
                got: self.grid.segments,
            });
        }
        let n = self.base_dim();
        let xdot = time_derivative(&self.xs, n, &self.grid);
        let mut per_node = Vec::with_capacity(self.grid.nodes());
        let mut max = R::zero();
        for k in 0..self.grid.nodes() {
            let v = self.algebroid.anchor_apply(self.x_at(k), self.y_at(k))?;
            let mut node_max = R::zero();
            for i in 0..n {
                node_max = node_max.max_by_val((xdot[k * n + i] - v[i]).abs());
            }
            per_node.push(node_max);
            max = max.max_by_val(node_max);
        }
        let h = self.grid.step();
        Ok(AdmissibilityReport {
            max_residual: max,
            kappa: max / (h * h),
            per_node,
        })
    }

    /// Writes `t,x1..xn,y1..ym` rows (see `docs/io-formats.md`).
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        let n = self.base_dim();
        let m = self.fiber_rank();
        write!(w, "t")?;
        for i in 1..=n {
            write!(w, ",x{i}")?;
        }
        for a in 1..=m {
            write!(w, ",y{a}")?;
        }
        writeln!(w)?;
        for k in 0..self.grid.nodes() {
            write!(w, "{:?}", self.grid.time(k).to_f64())?;
            for v in self.x_at(k) {
                write!(w, ",{:?}", v.to_f64())?;
            }
            for v in self.y_at(k) {
                write!(w, ",{:?}", v.to_f64())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads a path written by [`write_csv`](Self::write_csv). The grid is
    /// reconstructed from the first and last time stamps.
    pub fn read_csv(
        algebroid: Arc<LieAlgebroid>,
        r: &mut impl BufRead,
    ) -> Result<Self, PathError> {
        let n = algebroid.base_dim();
        let m = algebroid.fiber_rank();
        let mut times = Vec::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| PathError::Format(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('t')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + n + m {
                return Err(PathError::Format(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 1,
                    1 + n + m,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<R, PathError> {
                s.trim()
                    .parse::<f64>()
                    .map(R::from_lit)
                    .map_err(|e| PathError::Format(format!("line {}: {}", lineno + 1, e)))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..1 + n] {
                xs.push(parse(f)?);
            }
            for f in &fields[1 + n..] {
                ys.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(PathError::Format("need at least two rows".into()));
        }
        let grid = GridSpec::new(times[0], *times.last().unwrap(), times.len() - 1)?;
        EPath::from_samples(algebroid, grid, xs, ys)
    }

    /// JSON form with grid metadata (see `docs/io-formats.md`).
    pub fn to_json_value(&self) -> serde_json::Value {
        let n = self.base_dim();
        let m = self.fiber_rank();
        let nodes: Vec<serde_json::Value> = (0..self.grid.nodes())
            .map(|k| {
                serde_json::json!({
                    "t": self.grid.time(k).to_f64(),
                    "x": self.x_at(k).iter().map(|v| v.to_f64()).collect::<Vec<_>>(),
                    "y": self.y_at(k).iter().map(|v| v.to_f64()).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "algebroid": self.algebroid.name(),
            "t0": self.grid.t0.to_f64(),
            "t1": self.grid.t1.to_f64(),
            "segments": self.grid.segments,
            "base_dim": n,
            "fiber_rank": m,
            "nodes": nodes,
        })
    }
}

/// Fiber components of a section of the algebroid along a path's base curve,
/// on the same grid.
#[derive(Clone, Debug)]
pub struct PathSection<R: Real> {
    grid: GridSpec<R>,
    fiber_rank: usize,
    sigmas: Vec<R>,
}

impl<R: Real> PathSection<R> {
    pub fn from_samples(
        grid: GridSpec<R>,
        fiber_rank: usize,
        sigmas: Vec<R>,
    ) -> Result<Self, PathError> {
        if sigmas.len() != grid.nodes() * fiber_rank {
            return Err(PathError::DataLength {
                what: "section samples",
                expected: grid.nodes() * fiber_rank,
                got: sigmas.len(),
            });
        }
        Ok(PathSection {
            grid,
            fiber_rank,
            sigmas,
        })
    }

    /// Samples `t -> sigma(t)` on the grid of `path`.
    pub fn on_path(
        path: &EPath<R>,
        mut f: impl FnMut(R) -> Vec<R>,
    ) -> Result<Self, PathError> {
        let m = path.fiber_rank();
        let grid = *path.grid();
        let mut sigmas = Vec::with_capacity(grid.nodes() * m);
        for k in 0..grid.nodes() {
            let s = f(grid.time(k));
            if s.len() != m {
                return Err(PathError::DataLength {
                    what: "sampled section node",
                    expected: m,
                    got: s.len(),
                });
            }
            sigmas.extend_from_slice(&s);
        }
        PathSection::from_samples(grid, m, sigmas)
    }

    pub fn grid(&self) -> &GridSpec<R> {
        &self.grid
    }

    pub fn fiber_rank(&self) -> usize {
        self.fiber_rank
    }

    #[inline]
    pub fn sigma_at(&self, k: usize) -> &[R] {
        &self.sigmas[k * self.fiber_rank..(k + 1) * self.fiber_rank]
    }

    pub fn sigmas(&self) -> &[R] {
        &self.sigmas
    }

    pub fn compatible_with(&self, path: &EPath<R>) -> bool {
        self.grid == *path.grid() && self.fiber_rank == path.fiber_rank()
    }

    /// True iff the first and last node vanish exactly.
    pub fn has_zero_endpoints(&self) -> bool {
        let m = self.fiber_rank;
        let last = self.grid.nodes() - 1;
        (0..m).all(|c| self.sigmas[c] == R::zero() && self.sigmas[last * m + c] == R::zero())
    }

    /// `d sigma/dt` with the shared grid stencils.
    pub fn time_derivative(&self) -> Vec<R> {
        time_derivative(&self.sigmas, self.fiber_rank, &self.grid)
    }

    /// `a*self + b*other`, node by node.
    pub fn linear_comb(&self, a: R, other: &PathSection<R>, b: R) -> Result<Self, PathError> {
        if self.grid != other.grid || self.fiber_rank != other.fiber_rank {
            return Err(PathError::GridMismatch);
        }
        let sigmas = self
            .sigmas
            .iter()
            .zip(&other.sigmas)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        PathSection::from_samples(self.grid, self.fiber_rank, sigmas)
    }

    /// Pointwise scaling by a scalar grid function.
    pub fn scale_by(&self, factor: &[R]) -> Result<Self, PathError> {
        if factor.len() != self.grid.nodes() {
            return Err(PathError::DataLength {
                what: "scaling factor",
                expected: self.grid.nodes(),
                got: factor.len(),
            });
        }
        let m = self.fiber_rank;
        let sigmas = self
            .sigmas
            .iter()
            .enumerate()
            .map(|(i, &v)| factor[i / m] * v)
            .collect();
        PathSection::from_samples(self.grid, m, sigmas)
    }
}

/// A variation field along a path: per-node `(dx, dy)`.
#[derive(Clone, Debug)]
pub struct VariationField<R: Real> {
    grid: GridSpec<R>,
    base_dim: usize,
    fiber_rank: usize,
    dxs: Vec<R>,
    dys: Vec<R>,
}

impl<R: Real> VariationField<R> {
    pub fn grid(&self) -> &GridSpec<R> {
        &self.grid
    }

    #[inline]
    pub fn dx_at(&self, k: usize) -> &[R] {
        &self.dxs[k * self.base_dim..(k + 1) * self.base_dim]
    }

    #[inline]
    pub fn dy_at(&self, k: usize) -> &[R] {
        &self.dys[k * self.fiber_rank..(k + 1) * self.fiber_rank]
    }

    /// Max-norm distance to another field on the same grid.
    pub fn max_gap(&self, other: &VariationField<R>) -> Result<R, PathError> {
        if self.grid != other.grid
            || self.base_dim != other.base_dim
            || self.fiber_rank != other.fiber_rank
        {
            return Err(PathError::GridMismatch);
        }
        let mut max = R::zero();
        for (a, b) in self.dxs.iter().zip(&other.dxs) {
            max = max.max_by_val((*a - *b).abs());
        }
        for (a, b) in self.dys.iter().zip(&other.dys) {
            max = max.max_by_val((*a - *b).abs());
        }
        Ok(max)
    }
}

/// The admissible-variation map: `sigma -> (rho(x) sigma, dsigma/dt +
/// C(x)(y, sigma))` node by node. Linear in the section, and the base part
/// vanishes at every node where `sigma` does.
pub fn xi<R: Real>(path: &EPath<R>, sect: &PathSection<R>) -> Result<VariationField<R>, PathError> {
    if !sect.compatible_with(path) {
        return Err(PathError::GridMismatch);
    }
    if path.grid().segments < 2 {
        return Err(PathError::TooFewSegments {
            needed: 2,
            got: path.grid().segments,
        });
    }
    let n = path.base_dim();
    let m = path.fiber_rank();
    let sdot = sect.time_derivative();
    let mut dxs = Vec::with_capacity(path.grid().nodes() * n);
    let mut dys = Vec::with_capacity(path.grid().nodes() * m);
    for k in 0..path.grid().nodes() {
        let x = path.x_at(k);
        let sigma = sect.sigma_at(k);
        dxs.extend(path.algebroid().anchor_apply(x, sigma)?);
        let c = path.algebroid().structure_sparse_at(x)?;
        let corr = c.apply(path.y_at(k), sigma);
        for a in 0..m {
            dys.push(sdot[k * m + a] + corr[a]);
        }
    }
    Ok(VariationField {
        grid: *path.grid(),
        base_dim: n,
        fiber_rank: m,
        dxs,
        dys,
    })
}

/// A point of the prolongation bundle: base point `x`, attachment fiber `a`,
/// second fiber `b`, and a tangent vector `(dx, dy)` at the attachment whose
/// base part must equal `rho(x) b`.
#[derive(Clone, Debug)]
pub struct ProlongationElement<R> {
    pub x: Vec<R>,
    pub a: Vec<R>,
    pub b: Vec<R>,
    pub dx: Vec<R>,
    pub dy: Vec<R>,
}

pub const PROLONGATION_TOL: f64 = 1e-12;

impl<R: Real> ProlongationElement<R> {
    /// Residual of the defining condition `dx = rho(x) b`.
    pub fn anchor_residual(&self, algebroid: &LieAlgebroid) -> Result<R, PathError> {
        let v = algebroid.anchor_apply(&self.x, &self.b)?;
        let mut max = R::zero();
        for (dx, vi) in self.dx.iter().zip(&v) {
            max = max.max_by_val((*dx - *vi).abs());
        }
        Ok(max)
    }

    pub fn validate(&self, algebroid: &LieAlgebroid) -> Result<(), PathError> {
        algebroid.check_base_point(&self.x)?;
        algebroid.check_fiber_point(&self.a)?;
        algebroid.check_fiber_point(&self.b)?;
        algebroid.check_base_point(&self.dx)?;
        algebroid.check_fiber_point(&self.dy)?;
        let res = self.anchor_residual(algebroid)?;
        if res.to_f64() > PROLONGATION_TOL {
            return Err(PathError::InvalidProlongation {
                residual: res.to_f64(),
                tol: PROLONGATION_TOL,
            });
        }
        Ok(())
    }
}

/// Canonical involution: swaps the two fiber slots and corrects the vertical
/// part by `C(b, a)`; the base part of the output vector is `rho(x) a` so the
/// output satisfies the prolongation condition again. Applying it twice gives
/// the identity because `C` is antisymmetric.
pub fn involution<R: Real>(
    algebroid: &LieAlgebroid,
    e: &ProlongationElement<R>,
) -> Result<ProlongationElement<R>, PathError> {
    e.validate(algebroid)?;
    let c = algebroid.structure_sparse_at(&e.x)?;
    let corr = c.apply(&e.b, &e.a);
    let dy = e
        .dy
        .iter()
        .zip(&corr)
        .map(|(&v, &w)| v + w)
        .collect::<Vec<R>>();
    let dx = algebroid.anchor_apply(&e.x, &e.a)?;
    Ok(ProlongationElement {
        x: e.x.clone(),
        a: e.b.clone(),
        b: e.a.clone(),
        dx,
        dy,
    })
}

/// Computes the variation field by routing every node through the canonical
/// involution applied to `(sigma, a, dsigma/dt)`, instead of the direct
/// formula; agrees with [`xi`] up to rounding and cross-checks the stored
/// index convention of the `C` correction.
pub fn xi_via_involution<R: Real>(
    path: &EPath<R>,
    sect: &PathSection<R>,
) -> Result<VariationField<R>, PathError> {
    if !sect.compatible_with(path) {
        return Err(PathError::GridMismatch);
    }
    let n = path.base_dim();
    let m = path.fiber_rank();
    let sdot = sect.time_derivative();
    let mut dxs = Vec::with_capacity(path.grid().nodes() * n);
    let mut dys = Vec::with_capacity(path.grid().nodes() * m);
    for k in 0..path.grid().nodes() {
        let x = path.x_at(k).to_vec();
        let sigma = sect.sigma_at(k).to_vec();
        let y = path.y_at(k).to_vec();
        // velocity of t -> sigma(t) lies over rho(x) y for admissible paths
        let dx = path.algebroid().anchor_apply(&x, &y)?;
        let element = ProlongationElement {
            x,
            a: sigma,
            b: y,
            dx,
            dy: sdot[k * m..(k + 1) * m].to_vec(),
        };
        let flipped = involution(path.algebroid(), &element)?;
        dxs.extend(path.algebroid().anchor_apply(&flipped.x, &flipped.b)?);
        dys.extend(flipped.dy);
    }
    Ok(VariationField {
        grid: *path.grid(),
        base_dim: n,
        fiber_rank: m,
        dxs,
        dys,
    })
}

/// The vector field of the complete lift of a section `eta` (expressions in
/// the base coordinates), evaluated at a bundle point:
///
/// ```text
/// dx[i] = rho[i][a] eta[a]
/// dy[a] = d eta[a]/dx[i] rho[i][b] y[b] + C[a][b][g] y[b] eta[g]
/// ```
///
/// The derivative of `eta` is exact (one directional jet along `rho(x) y`).
pub fn complete_lift_field<R: Real>(
    algebroid: &LieAlgebroid,
    eta: &[Expression],
    x: &[R],
    y: &[R],
) -> Result<(Vec<R>, Vec<R>), PathError> {
    algebroid.check_base_point(x)?;
    algebroid.check_fiber_point(y)?;
    if eta.len() != algebroid.fiber_rank() {
        return Err(PathError::DataLength {
            what: "section components",
            expected: algebroid.fiber_rank(),
            got: eta.len(),
        });
    }
    let mut eta_vals = Vec::with_capacity(eta.len());
    let base_vel = algebroid.anchor_apply(x, y)?;
    let mut deta = Vec::with_capacity(eta.len());
    for (a, comp) in eta.iter().enumerate() {
        let jet = comp
            .eval_jet1(x, &base_vel)
            .map_err(|source| AlgebroidError::Eval {
                context: format!("eta[{a}]"),
                source,
            })?;
        eta_vals.push(jet.v);
        deta.push(jet.d);
    }
    let dx = algebroid.anchor_apply(x, &eta_vals)?;
    let c = algebroid.structure_sparse_at(x)?;
    let corr = c.apply(y, &eta_vals);
    let dy = deta
        .iter()
        .zip(&corr)
        .map(|(&d, &w)| d + w)
        .collect();
    Ok((dx, dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::{builtin, Builtin};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tangent2() -> Arc<LieAlgebroid> {
        Arc::new(builtin(Builtin::Tangent(2)).unwrap())
    }

    fn so3_r3() -> Arc<LieAlgebroid> {
        Arc::new(builtin(Builtin::So3R3).unwrap())
    }

    fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[test]
    fn straight_line_is_admissible() {
        let a = tangent2();
        let grid = GridSpec::new(0.0f64, 1.0, 50).unwrap();
        let p = EPath::from_fn(a, grid, |t| (vec![t, 0.0], vec![1.0, 0.0])).unwrap();
        let rep = p.admissibility().unwrap();
        assert!(rep.max_residual <= 1e-13, "{}", rep.max_residual);
    }

    #[test]
    fn heavy_top_equilibrium_is_admissible() {
        let a = so3_r3();
        let grid = GridSpec::new(0.0f64, 1.0, 40).unwrap();
        let p = EPath::from_fn(a, grid, |_| (vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0])).unwrap();
        let rep = p.admissibility().unwrap();
        assert!(rep.max_residual <= 1e-13);
    }

    #[test]
    fn quadratic_base_with_constant_fiber_is_flagged() {
        // x(t) = (t^2, 0) with y = (1, 0): defect |2t - 1| on [0, 1], and the
        // difference stencils are exact on quadratics.
        let a = tangent2();
        let grid = GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(a, grid, |t| (vec![t * t, 0.0], vec![1.0, 0.0])).unwrap();
        let rep = p.admissibility().unwrap();
        assert!((rep.max_residual - 1.0).abs() < 1e-12);
        assert!(rep.max_residual > 0.1, "clearly non-admissible");
    }

    #[test]
    fn xi_on_tangent_is_sigma_and_its_derivative() {
        let a = tangent2();
        let grid = GridSpec::new(0.0f64, 1.0, 200).unwrap();
        let p = EPath::from_fn(a.clone(), grid, |t| (vec![t, t], vec![1.0, 1.0])).unwrap();
        let s = PathSection::on_path(&p, |t| vec![(std::f64::consts::PI * t).sin(), t * (1.0 - t)])
            .unwrap();
        let v = xi(&p, &s).unwrap();
        let sdot = s.time_derivative();
        for k in 0..grid.nodes() {
            assert_eq!(v.dx_at(k), s.sigma_at(k));
            assert_eq!(v.dy_at(k), &sdot[k * 2..k * 2 + 2]);
        }
    }

    #[test]
    fn xi_on_so3_r3_matches_cross_products() {
        let a = so3_r3();
        let grid = GridSpec::new(0.0f64, 2.0, 100).unwrap();
        let p = EPath::from_fn(a.clone(), grid, |t| {
            (vec![t.cos(), t.sin(), 0.3], vec![0.2, -0.4, 0.9])
        })
        .unwrap();
        let s = PathSection::on_path(&p, |t| vec![t, t * t, 1.0]).unwrap();
        let v = xi(&p, &s).unwrap();
        let sdot = s.time_derivative();
        for k in 0..grid.nodes() {
            let g = p.x_at(k);
            let w = p.y_at(k);
            let sig = s.sigma_at(k);
            let dg = cross(g, sig);
            let dw = cross(w, sig);
            for i in 0..3 {
                assert!((v.dx_at(k)[i] - dg[i]).abs() < 1e-13);
                assert!((v.dy_at(k)[i] - (sdot[k * 3 + i] + dw[i])).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn xi_is_linear_in_the_section() {
        let a = so3_r3();
        let grid = GridSpec::new(0.0f64, 1.0, 64).unwrap();
        let p = EPath::from_fn(a, grid, |t| {
            (vec![1.0, t, -t], vec![0.5, t, 0.1])
        })
        .unwrap();
        let s1 = PathSection::on_path(&p, |t| vec![t, t * t, (2.0 * t).sin()]).unwrap();
        let s2 = PathSection::on_path(&p, |t| vec![1.0 - t, t.cos(), 0.2]).unwrap();
        let (ca, cb) = (1.75, -0.5);
        let combo = s1.linear_comb(ca, &s2, cb).unwrap();
        let left = xi(&p, &combo).unwrap();
        let v1 = xi(&p, &s1).unwrap();
        let v2 = xi(&p, &s2).unwrap();
        for k in 0..grid.nodes() {
            for i in 0..3 {
                let want_dx = ca * v1.dx_at(k)[i] + cb * v2.dx_at(k)[i];
                let want_dy = ca * v1.dy_at(k)[i] + cb * v2.dy_at(k)[i];
                assert!((left.dx_at(k)[i] - want_dx).abs() < 1e-13);
                assert!((left.dy_at(k)[i] - want_dy).abs() < 1e-13);
            }
        }
    }

    /// Product rule: xi(f sigma) - f xi(sigma) - df/dt (0, sigma) is grid
    /// error only, decaying at second order.
    #[test]
    fn xi_leibniz_defect_decays_at_second_order() {
        let a = so3_r3();
        let defect = |segments: usize| -> f64 {
            let grid = GridSpec::new(0.0f64, 1.0, segments).unwrap();
            let p = EPath::from_fn(a.clone(), grid, |t| {
                (vec![t.cos(), t.sin(), 0.5], vec![0.3, 0.1, -0.2])
            })
            .unwrap();
            let s = PathSection::on_path(&p, |t| {
                vec![(std::f64::consts::PI * t).sin(), t * t, t]
            })
            .unwrap();
            let times = grid.times();
            let f: Vec<f64> = times.iter().map(|t| (1.5 * t).cos() + 2.0).collect();
            let fdot = time_derivative(&f, 1, &grid);
            let fs = s.scale_by(&f).unwrap();
            let left = xi(&p, &fs).unwrap();
            let right = xi(&p, &s).unwrap();
            let mut max: f64 = 0.0;
            for k in 0..grid.nodes() {
                for i in 0..3 {
                    let dx = left.dx_at(k)[i] - f[k] * right.dx_at(k)[i];
                    let dy = left.dy_at(k)[i]
                        - f[k] * right.dy_at(k)[i]
                        - fdot[k] * s.sigma_at(k)[i];
                    max = max.max(dx.abs()).max(dy.abs());
                }
            }
            max
        };
        let d200 = defect(200);
        let d400 = defect(400);
        let d800 = defect(800);
        let order1 = (d200 / d400).log2();
        let order2 = (d400 / d800).log2();
        assert!(order1 >= 1.9 && order2 >= 1.9, "orders {order1} {order2}");
    }

    #[test]
    fn involution_is_a_swap_for_vanishing_structure_functions() {
        let a = tangent2();
        let e = ProlongationElement {
            x: vec![0.2, -0.4],
            a: vec![1.0, 2.0],
            b: vec![-0.5, 0.25],
            dx: vec![-0.5, 0.25], // rho = id
            dy: vec![3.0, -1.0],
        };
        let f = involution(&a, &e).unwrap();
        assert_eq!(f.a, e.b);
        assert_eq!(f.b, e.a);
        assert_eq!(f.dy, e.dy);
        assert_eq!(f.dx, vec![1.0, 2.0]);
    }

    #[test]
    fn involution_squares_to_identity() {
        let alg = so3_r3();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dy: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dx = alg.anchor_apply(&x, &b).unwrap();
            let e = ProlongationElement { x, a, b, dx, dy };
            let back = involution(&alg, &involution(&alg, &e).unwrap()).unwrap();
            for i in 0..3 {
                assert!((back.a[i] - e.a[i]).abs() <= 1e-13);
                assert!((back.b[i] - e.b[i]).abs() <= 1e-13);
                assert!((back.dx[i] - e.dx[i]).abs() <= 1e-13);
                assert!((back.dy[i] - e.dy[i]).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn involution_route_reproduces_xi() {
        let alg = so3_r3();
        let grid = GridSpec::new(0.0f64, 1.5, 150).unwrap();
        let p = EPath::from_fn(alg.clone(), grid, |t| {
            (vec![t.cos(), t.sin(), 1.0 - 0.1 * t], vec![0.4, -0.2, 0.7])
        })
        .unwrap();
        let s = PathSection::on_path(&p, |t| vec![t * t, (3.0 * t).sin(), 1.0]).unwrap();
        let direct = xi(&p, &s).unwrap();
        let through = xi_via_involution(&p, &s).unwrap();
        assert!(direct.max_gap(&through).unwrap() <= 1e-12);
    }

    #[test]
    fn rejects_invalid_prolongation_elements() {
        let alg = so3_r3();
        let e = ProlongationElement {
            x: vec![1.0, 0.0, 0.0],
            a: vec![0.0, 1.0, 0.0],
            b: vec![0.0, 0.0, 1.0],
            dx: vec![9.0, 9.0, 9.0],
            dy: vec![0.0, 0.0, 0.0],
        };
        assert!(matches!(
            involution(&alg, &e),
            Err(PathError::InvalidProlongation { .. })
        ));
    }

    #[test]
    fn complete_lift_classical_example() {
        // eta = x d/dx on the line lifts to x d/dx + y d/dy.
        let a = Arc::new(builtin(Builtin::Tangent(1)).unwrap());
        let eta = [Expression::parse("x1", &["x1"]).unwrap()];
        let (dx, dy) = complete_lift_field(&a, &eta, &[2.5], &[-0.7]).unwrap();
        assert_eq!(dx, vec![2.5]);
        assert_eq!(dy, vec![-0.7]);
    }

    #[test]
    fn complete_lift_constant_section_on_so3_r3() {
        let alg = so3_r3();
        let vars = ["x1", "x2", "x3"];
        let eta = [
            Expression::parse("0.3", &vars).unwrap(),
            Expression::parse("-1.1", &vars).unwrap(),
            Expression::parse("0.8", &vars).unwrap(),
        ];
        let g = [0.5, -0.2, 1.3];
        let w = [1.0, 0.4, -0.6];
        let (dx, dy) = complete_lift_field(&alg, &eta, &g, &w).unwrap();
        let ev = [0.3, -1.1, 0.8];
        let want_dx = cross(&g, &ev);
        let want_dy = cross(&w, &ev);
        for i in 0..3 {
            assert!((dx[i] - want_dx[i]).abs() < 1e-14);
            assert!((dy[i] - want_dy[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn complete_lift_agrees_with_xi_along_admissible_paths() {
        let alg = so3_r3();
        let vars = ["x1", "x2", "x3"];
        let eta = [
            Expression::parse("x2", &vars).unwrap(),
            Expression::parse("x1*x3", &vars).unwrap(),
            Expression::parse("sin(x1)", &vars).unwrap(),
        ];
        let gap = |segments: usize| -> f64 {
            let grid = GridSpec::new(0.0f64, 1.0, segments).unwrap();
            // gamma rotating about e3 with omega = e3 satisfies
            // d gamma/dt = gamma x omega exactly
            let p = EPath::from_fn(alg.clone(), grid, |t| {
                (vec![t.cos(), -t.sin(), 0.4], vec![0.0, 0.0, 1.0])
            })
            .unwrap();
            let s = PathSection::on_path(&p, |t| {
                let g = [t.cos(), -t.sin(), 0.4];
                vec![g[1], g[0] * g[2], g[0].sin()]
            })
            .unwrap();
            let v = xi(&p, &s).unwrap();
            let mut max: f64 = 0.0;
            for k in 0..grid.nodes() {
                let (dx, dy) =
                    complete_lift_field(&alg, &eta, p.x_at(k), p.y_at(k)).unwrap();
                for i in 0..3 {
                    max = max.max((dx[i] - v.dx_at(k)[i]).abs());
                    max = max.max((dy[i] - v.dy_at(k)[i]).abs());
                }
            }
            max
        };
        let g100 = gap(100);
        let g200 = gap(200);
        assert!(g100 < 1e-3, "gap {g100}");
        let order = (g100 / g200).log2();
        assert!(order >= 1.9, "order {order}");
    }

    /// The CSV byte format is frozen; plotting pipelines depend on it.
    #[test]
    fn csv_golden_bytes() {
        let a = tangent2();
        let grid = GridSpec::new(0.0f64, 1.0, 4).unwrap();
        let p = EPath::from_fn(a, grid, |t| (vec![t * t, -t], vec![2.0 * t, -1.0])).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let expected = "\
t,x1,x2,y1,y2
0.0,0.0,-0.0,0.0,-1.0
0.25,0.0625,-0.25,0.5,-1.0
0.5,0.25,-0.5,1.0,-1.0
0.75,0.5625,-0.75,1.5,-1.0
1.0,1.0,-1.0,2.0,-1.0
";
        assert_eq!(String::from_utf8(buf).unwrap(), expected);
    }

    #[test]
    fn csv_roundtrip() {
        let a = tangent2();
        let grid = GridSpec::new(0.0f64, 1.0, 10).unwrap();
        let p = EPath::from_fn(a.clone(), grid, |t| (vec![t, t * t], vec![1.0, 2.0 * t])).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back: EPath<f64> = EPath::read_csv(a, &mut std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.grid().segments, 10);
        assert_eq!(back.xs(), p.xs());
        assert_eq!(back.ys(), p.ys());
    }
}
