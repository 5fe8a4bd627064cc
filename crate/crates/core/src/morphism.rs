//! Morphisms of Lie algebroids in coordinates, and the reduction /
//! reconstruction checks built on them.
//!
//! A bundle map is `(x, y) -> (phi(x), Phi(x) y)` with `phi` the base map
//! and `Phi` a fiber matrix of expressions in the source coordinates. Two
//! residuals characterize it: the admissibility condition, under which
//! admissible curves push to admissible curves, and the bracket condition:
//!
//! ```text
//! d phi[k]/dx[i] rho[i][a] - rho'[k][b](phi) Phi[b][a] = 0
//!
//! rho[i][n] d Phi[a][m]/dx[i] - rho[i][m] d Phi[a][n]/dx[i]
//!     - C'[a][b][g] Phi[b][m] Phi[g][n]  ( + C[l][m][n] Phi[a][l] ) = 0
//! ```
//!
//! The form without the trailing source-bracket term is the one usually
//! displayed for tangent-bundle sources, where it is complete because their
//! structure functions vanish in coordinate charts; consistency of the
//! variation push-forward on a general source requires the extra term (for
//! the identity map of an algebroid with bracket, the short form reports
//! exactly the structure functions it is missing).
//! [`AlgebroidMorphism::morphism_residual`] computes and reports both forms
//! and never silently picks one.

use std::sync::Arc;

use nalgebra::RealField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebroid::{sample_points, AlgebroidError, LieAlgebroid};
use crate::dynamics::{
    el_residual, integrate_with, DynamicsError, IntegratorOptions, LagrangianSystem,
};
use crate::expr::{ComposeError, EvalError, Expression, ParseError};
use crate::linalg;
use crate::paths::{xi, EPath, PathError, PathSection};
use crate::scalar::Real;
use crate::variation::{action, VariationError};

#[derive(Debug, thiserror::Error)]
pub enum MorphismError {
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error("expression error: {0}")]
    Parse(#[from] ParseError),
    #[error("composition: {0}")]
    Compose(#[from] ComposeError),
    #[error("evaluating {context}: {source}")]
    Eval { context: String, source: EvalError },
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("bundle map is not admissible: residual {residual:e} exceeds {tol:e}")]
    NotAdmissible { residual: f64, tol: f64 },
    #[error("Lagrangians are not related by the morphism: max |L - L' o Phi| = {max_gap:e} exceeds {tol:e}")]
    IncompatibleLagrangians { max_gap: f64, tol: f64 },
    #[error("morphisms are not composable: inner target does not match outer source")]
    NotComposable,
}

/// Default tolerance of the constructor admissibility check.
pub const ADMISSIBILITY_TOL: f64 = 1e-10;

/// A vector bundle map between algebroids in coordinates.
#[derive(Clone, Debug)]
pub struct AlgebroidMorphism {
    source: Arc<LieAlgebroid>,
    target: Arc<LieAlgebroid>,
    /// `n'` base-map components in the source `x` variables.
    phi: Vec<Expression>,
    /// Row-major `m' x m` fiber matrix in the source `x` variables.
    phi_fiber: Vec<Expression>,
}

impl AlgebroidMorphism {
    /// Builds the map and verifies its admissibility residual at 50 seeded
    /// sample points in `[-2, 2]^n` against [`ADMISSIBILITY_TOL`].
    pub fn new(
        source: Arc<LieAlgebroid>,
        target: Arc<LieAlgebroid>,
        phi: &[&str],
        phi_fiber: &[&str],
    ) -> Result<Self, MorphismError> {
        let m = Self::new_unchecked(source, target, phi, phi_fiber)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x0a1);
        let pts = sample_points::<f64>(m.source.base_dim(), 50, -2.0, 2.0, &mut rng);
        let residual = m.admissibility_residual(&pts)?;
        if residual > ADMISSIBILITY_TOL {
            return Err(MorphismError::NotAdmissible {
                residual,
                tol: ADMISSIBILITY_TOL,
            });
        }
        Ok(m)
    }

    /// Builds the map without the admissibility gate (corruption probes and
    /// maps with restricted chart domains).
    pub fn new_unchecked(
        source: Arc<LieAlgebroid>,
        target: Arc<LieAlgebroid>,
        phi: &[&str],
        phi_fiber: &[&str],
    ) -> Result<Self, MorphismError> {
        if phi.len() != target.base_dim() {
            return Err(MorphismError::DimensionMismatch {
                what: "base map components",
                expected: target.base_dim(),
                got: phi.len(),
            });
        }
        if phi_fiber.len() != target.fiber_rank() * source.fiber_rank() {
            return Err(MorphismError::DimensionMismatch {
                what: "fiber matrix entries",
                expected: target.fiber_rank() * source.fiber_rank(),
                got: phi_fiber.len(),
            });
        }
        let xv = source.x_vars();
        let phi = phi
            .iter()
            .map(|s| Expression::parse_shared(s, xv))
            .collect::<Result<Vec<_>, _>>()?;
        let phi_fiber = phi_fiber
            .iter()
            .map(|s| Expression::parse_shared(s, xv))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AlgebroidMorphism {
            source,
            target,
            phi,
            phi_fiber,
        })
    }

    pub fn from_parts(
        source: Arc<LieAlgebroid>,
        target: Arc<LieAlgebroid>,
        phi: Vec<Expression>,
        phi_fiber: Vec<Expression>,
    ) -> Result<Self, MorphismError> {
        if phi.len() != target.base_dim() || phi_fiber.len() != target.fiber_rank() * source.fiber_rank()
        {
            return Err(MorphismError::DimensionMismatch {
                what: "morphism parts",
                expected: target.base_dim() + target.fiber_rank() * source.fiber_rank(),
                got: phi.len() + phi_fiber.len(),
            });
        }
        Ok(AlgebroidMorphism {
            source,
            target,
            phi,
            phi_fiber,
        })
    }

    /// Identity morphism of an algebroid.
    pub fn identity(algebroid: Arc<LieAlgebroid>) -> Result<Self, MorphismError> {
        let n = algebroid.base_dim();
        let m = algebroid.fiber_rank();
        let phi: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let fiber: Vec<&str> = (0..m * m)
            .map(|k| if k / m == k % m { "1" } else { "0" })
            .collect();
        let phi_refs: Vec<&str> = phi.iter().map(|s| s.as_str()).collect();
        Self::new_unchecked(algebroid.clone(), algebroid, &phi_refs, &fiber)
    }

    pub fn source(&self) -> &Arc<LieAlgebroid> {
        &self.source
    }

    pub fn target(&self) -> &Arc<LieAlgebroid> {
        &self.target
    }

    /// `phi(x)`.
    pub fn base_map<R: Real>(&self, x: &[R]) -> Result<Vec<R>, MorphismError> {
        self.source.check_base_point(x)?;
        self.phi
            .iter()
            .enumerate()
            .map(|(k, e)| {
                e.eval(x).map_err(|source| MorphismError::Eval {
                    context: format!("phi[{k}]"),
                    source,
                })
            })
            .collect()
    }

    /// `Phi(x)` as a row-major `m' x m` matrix.
    pub fn fiber_matrix<R: Real>(&self, x: &[R]) -> Result<Vec<R>, MorphismError> {
        self.source.check_base_point(x)?;
        let m = self.source.fiber_rank();
        self.phi_fiber
            .iter()
            .enumerate()
            .map(|(idx, e)| {
                e.eval(x).map_err(|source| MorphismError::Eval {
                    context: format!("Phi[{}][{}]", idx / m, idx % m),
                    source,
                })
            })
            .collect()
    }

    /// `(phi(x), Phi(x) y)`.
    pub fn apply<R: Real>(&self, x: &[R], y: &[R]) -> Result<(Vec<R>, Vec<R>), MorphismError> {
        self.source.check_fiber_point(y)?;
        let xp = self.base_map(x)?;
        let mat = self.fiber_matrix(x)?;
        let m = self.source.fiber_rank();
        let mp = self.target.fiber_rank();
        let mut yp = vec![R::zero(); mp];
        for a in 0..mp {
            let mut acc = R::zero();
            for b in 0..m {
                acc += mat[a * m + b] * y[b];
            }
            yp[a] = acc;
        }
        Ok((xp, yp))
    }

    /// Max over points and indices of
    /// `|d phi[k]/dx[i] rho[i][a] - rho'[k][b](phi(x)) Phi[b][a]|`.
    pub fn admissibility_residual<R: Real>(&self, points: &[Vec<R>]) -> Result<R, MorphismError> {
        let n = self.source.base_dim();
        let np = self.target.base_dim();
        let m = self.source.fiber_rank();
        let mp = self.target.fiber_rank();
        let mut max = R::zero();
        for x in points {
            let rho = self.source.anchor_at(x)?;
            let mat = self.fiber_matrix(x)?;
            let xp = self.base_map(x)?;
            let rho_t = self.target.anchor_at(&xp)?;
            // Jacobian d phi[k]/dx[i]
            let mut jac = vec![R::zero(); np * n];
            for (k, e) in self.phi.iter().enumerate() {
                for i in 0..n {
                    jac[k * n + i] = e.partial(x, i).map_err(|source| MorphismError::Eval {
                        context: format!("d phi[{k}]/dx[{i}]"),
                        source,
                    })?;
                }
            }
            for k in 0..np {
                for a in 0..m {
                    let mut lhs = R::zero();
                    for i in 0..n {
                        lhs += jac[k * n + i] * rho[i * m + a];
                    }
                    let mut rhs = R::zero();
                    for b in 0..mp {
                        rhs += rho_t[k * mp + b] * mat[b * m + a];
                    }
                    max = max.max_by_val((lhs - rhs).abs());
                }
            }
        }
        Ok(max)
    }

    /// Both forms of the bracket compatibility residual, max over points and
    /// indices.
    pub fn morphism_residual<R: Real>(
        &self,
        points: &[Vec<R>],
    ) -> Result<MorphismResidual<R>, MorphismError> {
        let n = self.source.base_dim();
        let m = self.source.fiber_rank();
        let mp = self.target.fiber_rank();
        let mut without = R::zero();
        let mut with = R::zero();
        for x in points {
            let rho = self.source.anchor_at(x)?;
            let mat = self.fiber_matrix(x)?;
            let xp = self.base_map(x)?;
            let c_target = self.target.structure_at(&xp)?;
            let c_source = self.source.structure_at(x)?;
            // d Phi[a][b] / dx[i]
            let mut dmat = vec![R::zero(); mp * m * n];
            for (idx, e) in self.phi_fiber.iter().enumerate() {
                for i in 0..n {
                    dmat[idx * n + i] =
                        e.partial(x, i).map_err(|source| MorphismError::Eval {
                            context: format!("d Phi[{}][{}]/dx[{i}]", idx / m, idx % m),
                            source,
                        })?;
                }
            }
            for a in 0..mp {
                for mu in 0..m {
                    for nu in 0..m {
                        let mut acc = R::zero();
                        for i in 0..n {
                            acc = acc + rho[i * m + nu] * dmat[(a * m + mu) * n + i]
                                - rho[i * m + mu] * dmat[(a * m + nu) * n + i];
                        }
                        for b in 0..mp {
                            for g in 0..mp {
                                acc = acc
                                    - c_target[(a * mp + b) * mp + g]
                                        * mat[b * m + mu]
                                        * mat[g * m + nu];
                            }
                        }
                        without = without.max_by_val(acc.abs());
                        let mut src = R::zero();
                        for l in 0..m {
                            src += c_source[(l * m + mu) * m + nu] * mat[a * m + l];
                        }
                        with = with.max_by_val((acc + src).abs());
                    }
                }
            }
        }
        Ok(MorphismResidual {
            without_source_bracket: without,
            with_source_bracket: with,
        })
    }

    /// Smallest singular value of the fiber matrix over the points; positive
    /// values certify full rank (surjective onto the target fiber when the
    /// source rank is at least the target rank).
    pub fn min_fiber_singular_value<R: Real + RealField>(
        &self,
        points: &[Vec<R>],
    ) -> Result<R, MorphismError> {
        let m = self.source.fiber_rank();
        let mp = self.target.fiber_rank();
        let mut min: Option<R> = None;
        for x in points {
            let mat = self.fiber_matrix(x)?;
            let sv = linalg::min_singular_value(&mat, mp, m);
            min = Some(match min {
                Some(v) => v.min_by_val(sv),
                None => sv,
            });
        }
        Ok(min.unwrap_or_else(R::zero))
    }

    /// Pushes a path forward node by node: `x' = phi(x)`, `y' = Phi(x) y`.
    pub fn push_path<R: Real>(&self, path: &EPath<R>) -> Result<EPath<R>, MorphismError> {
        let nodes = path.grid().nodes();
        let mut xs = Vec::with_capacity(nodes * self.target.base_dim());
        let mut ys = Vec::with_capacity(nodes * self.target.fiber_rank());
        for k in 0..nodes {
            let (xp, yp) = self.apply(path.x_at(k), path.y_at(k))?;
            xs.extend(xp);
            ys.extend(yp);
        }
        Ok(EPath::from_samples(
            self.target.clone(),
            *path.grid(),
            xs,
            ys,
        )?)
    }

    /// Push with the admissibility defects of input and output attached.
    pub fn push_path_report<R: Real>(
        &self,
        path: &EPath<R>,
    ) -> Result<PushReport<R>, MorphismError> {
        let pushed = self.push_path(path)?;
        let source_residual = path.admissibility()?.max_residual;
        let target_residual = pushed.admissibility()?.max_residual;
        Ok(PushReport {
            path: pushed,
            source_residual,
            target_residual,
        })
    }

    /// Pushes a section along the base map: `sigma' = Phi(x(t)) sigma(t)`.
    pub fn push_section<R: Real>(
        &self,
        path: &EPath<R>,
        sect: &PathSection<R>,
    ) -> Result<PathSection<R>, MorphismError> {
        if !sect.compatible_with(path) {
            return Err(MorphismError::Path(PathError::GridMismatch));
        }
        let m = self.source.fiber_rank();
        let mp = self.target.fiber_rank();
        let mut sigmas = Vec::with_capacity(path.grid().nodes() * mp);
        for k in 0..path.grid().nodes() {
            let mat = self.fiber_matrix(path.x_at(k))?;
            let sigma = sect.sigma_at(k);
            for a in 0..mp {
                let mut acc = R::zero();
                for b in 0..m {
                    acc += mat[a * m + b] * sigma[b];
                }
                sigmas.push(acc);
            }
        }
        Ok(PathSection::from_samples(*path.grid(), mp, sigmas)?)
    }

    /// Nodewise gap between the tangent-map push of `xi(path, sigma)` and
    /// `xi` of the pushed data. Vanishes in the continuum for genuine
    /// morphisms; discretely it decays at second order in the step.
    pub fn xi_compat_residual<R: Real>(
        &self,
        path: &EPath<R>,
        sect: &PathSection<R>,
    ) -> Result<R, MorphismError> {
        let field = xi(path, sect)?;
        let pushed = self.push_path(path)?;
        let pushed_sect = self.push_section(path, sect)?;
        let target_field = xi(&pushed, &pushed_sect)?;

        let m = self.source.fiber_rank();
        let mp = self.target.fiber_rank();
        let mut max = R::zero();
        for k in 0..path.grid().nodes() {
            let x = path.x_at(k);
            let y = path.y_at(k);
            let dx = field.dx_at(k);
            let dy = field.dy_at(k);
            let mat = self.fiber_matrix(x)?;
            // base part: d phi . dx
            for (kk, e) in self.phi.iter().enumerate() {
                let jet = e.eval_jet1(x, dx).map_err(|source| MorphismError::Eval {
                    context: format!("d phi[{kk}] . dx"),
                    source,
                })?;
                max = max.max_by_val((jet.d - target_field.dx_at(k)[kk]).abs());
            }
            // fiber part: (d Phi . dx) y + Phi dy
            for a in 0..mp {
                let mut acc = R::zero();
                for b in 0..m {
                    let jet = self.phi_fiber[a * m + b].eval_jet1(x, dx).map_err(|source| {
                        MorphismError::Eval {
                            context: format!("d Phi[{a}][{b}] . dx"),
                            source,
                        }
                    })?;
                    acc = acc + jet.d * y[b] + mat[a * m + b] * dy[b];
                }
                max = max.max_by_val((acc - target_field.dy_at(k)[a]).abs());
            }
        }
        Ok(max)
    }

    /// Composition `outer o self` (self maps into outer's source).
    pub fn compose(&self, outer: &AlgebroidMorphism) -> Result<AlgebroidMorphism, MorphismError> {
        if self.target.base_dim() != outer.source.base_dim()
            || self.target.fiber_rank() != outer.source.fiber_rank()
        {
            return Err(MorphismError::NotComposable);
        }
        let phi: Vec<Expression> = outer
            .phi
            .iter()
            .map(|e| e.compose(&self.phi))
            .collect::<Result<_, _>>()?;
        let m = self.source.fiber_rank();
        let mid = self.target.fiber_rank();
        let mp = outer.target.fiber_rank();
        let mut fiber = Vec::with_capacity(mp * m);
        for a in 0..mp {
            for b in 0..m {
                // sum_g outer.Phi[a][g](phi(x)) * self.Phi[g][b](x)
                let mut acc: Option<Expression> = None;
                for g in 0..mid {
                    let outer_entry = outer.phi_fiber[a * mid + g].compose(&self.phi)?;
                    let term = outer_entry.mul(&self.phi_fiber[g * m + b])?;
                    acc = Some(match acc {
                        Some(prev) => prev.add(&term)?,
                        None => term,
                    });
                }
                fiber.push(acc.expect("target fiber rank is positive"));
            }
        }
        AlgebroidMorphism::from_parts(self.source.clone(), outer.target.clone(), phi, fiber)
    }
}

/// Both forms of the bracket compatibility residual. They coincide whenever
/// the source structure functions vanish or the fiber map is the identity.
#[derive(Clone, Debug, Serialize)]
pub struct MorphismResidual<R> {
    /// The condition as displayed for flat sources (no source-bracket term).
    pub without_source_bracket: R,
    /// With the source-bracket correction `C[l][m][n] Phi[a][l]` added.
    pub with_source_bracket: R,
}

#[derive(Clone, Debug)]
pub struct PushReport<R: Real> {
    pub path: EPath<R>,
    pub source_residual: R,
    pub target_residual: R,
}

/// Settings for [`reduction_check`].
#[derive(Clone, Copy, Debug)]
pub struct ReductionOptions {
    /// Tolerance for `|L - L' o Phi|` on the probe points.
    pub compat_tol: f64,
    /// Integrator settings for both runs.
    pub integrator: IntegratorOptions,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions {
            compat_tol: 1e-10,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Outcome of a reduction run: integrate upstairs, push the solution down,
/// and compare it against the target's own dynamics.
#[derive(Clone, Debug, Serialize)]
pub struct ReductionReport<R> {
    /// Max `|L(x,y) - L'(phi(x), Phi(x) y)|` over the probe points.
    pub compat_max: R,
    /// Euler-Lagrange residual of the source solution.
    pub source_el_max: R,
    /// Euler-Lagrange residual of the pushed path under the target system.
    pub pushed_el_max: R,
    /// Sup-norm gap between the pushed path and the direct target
    /// integration from the pushed initial condition; absent when the
    /// target Lagrangian is not regular there.
    pub direct_gap: Option<R>,
    /// `|S_source - S_target(pushed)|` on the shared quadrature nodes.
    pub action_gap: R,
    /// Min singular value of the fiber map along the solution.
    pub min_fiber_singular_value: R,
}

/// Verifies compatibility `L = L' o Phi` on the probe points, integrates the
/// source system, pushes the solution and reports how well it solves the
/// target dynamics.
#[allow(clippy::too_many_arguments)]
pub fn reduction_check<R: Real + RealField>(
    morphism: &AlgebroidMorphism,
    sys_source: &LagrangianSystem,
    sys_target: &LagrangianSystem,
    probe_points: &[(Vec<R>, Vec<R>)],
    x0: &[R],
    y0: &[R],
    t0: R,
    t1: R,
    segments: usize,
    options: &ReductionOptions,
) -> Result<ReductionReport<R>, MorphismError> {
    let compat_max = lagrangian_compat_max(morphism, sys_source, sys_target, probe_points)?;
    if compat_max.to_f64() > options.compat_tol {
        return Err(MorphismError::IncompatibleLagrangians {
            max_gap: compat_max.to_f64(),
            tol: options.compat_tol,
        });
    }

    let source_path = integrate_with(sys_source, x0, y0, t0, t1, segments, &options.integrator)?;
    let source_el = el_residual(sys_source, &source_path)?;
    let pushed = morphism.push_path(&source_path)?;
    let pushed_el = el_residual(sys_target, &pushed)?;

    let direct_gap = match integrate_with(
        sys_target,
        pushed.x_at(0),
        pushed.y_at(0),
        t0,
        t1,
        segments,
        &options.integrator,
    ) {
        Ok(direct) => {
            let mut gap = R::zero();
            for k in 0..pushed.grid().nodes() {
                for (a, b) in pushed.x_at(k).iter().zip(direct.x_at(k)) {
                    gap = gap.max_by_val(crate::scalar::Scalar::abs(*a - *b));
                }
                for (a, b) in pushed.y_at(k).iter().zip(direct.y_at(k)) {
                    gap = gap.max_by_val(crate::scalar::Scalar::abs(*a - *b));
                }
            }
            Some(gap)
        }
        Err(DynamicsError::SingularHessian { .. }) => None,
        Err(e) => return Err(e.into()),
    };

    let action_gap = crate::scalar::Scalar::abs(
        action(sys_source, &source_path)? - action(sys_target, &pushed)?,
    );

    let path_points: Vec<Vec<R>> = (0..source_path.grid().nodes())
        .step_by((source_path.grid().nodes() / 64).max(1))
        .map(|k| source_path.x_at(k).to_vec())
        .collect();
    let min_sv = morphism.min_fiber_singular_value(&path_points)?;

    Ok(ReductionReport {
        compat_max,
        source_el_max: source_el.max_norm,
        pushed_el_max: pushed_el.max_norm,
        direct_gap,
        action_gap,
        min_fiber_singular_value: min_sv,
    })
}

/// Outcome of a reconstruction check: certify a source path by the
/// Euler-Lagrange residual of its pushed image.
#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionReport<R> {
    pub source_el_max: R,
    pub pushed_el_max: R,
    /// Min singular value of the fiber map along the path (fiberwise
    /// bijectivity data).
    pub min_fiber_singular_value: R,
    pub tol_target: f64,
    pub tol_source: f64,
    /// True iff `pushed <= tol_target` implies `source <= tol_source`
    /// numerically (vacuously true when the premise fails).
    pub implication_holds: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn reconstruction_check<R: Real + RealField>(
    morphism: &AlgebroidMorphism,
    sys_source: &LagrangianSystem,
    sys_target: &LagrangianSystem,
    probe_points: &[(Vec<R>, Vec<R>)],
    source_path: &EPath<R>,
    compat_tol: f64,
    tol_target: f64,
    tol_source: f64,
) -> Result<ReconstructionReport<R>, MorphismError> {
    let compat_max = lagrangian_compat_max(morphism, sys_source, sys_target, probe_points)?;
    if compat_max.to_f64() > compat_tol {
        return Err(MorphismError::IncompatibleLagrangians {
            max_gap: compat_max.to_f64(),
            tol: compat_tol,
        });
    }
    let source_el = el_residual(sys_source, source_path)?;
    let pushed = morphism.push_path(source_path)?;
    let pushed_el = el_residual(sys_target, &pushed)?;
    let path_points: Vec<Vec<R>> = (0..source_path.grid().nodes())
        .step_by((source_path.grid().nodes() / 64).max(1))
        .map(|k| source_path.x_at(k).to_vec())
        .collect();
    let min_sv = morphism.min_fiber_singular_value(&path_points)?;
    let implication_holds = if pushed_el.max_norm.to_f64() <= tol_target {
        source_el.max_norm.to_f64() <= tol_source
    } else {
        true
    };
    Ok(ReconstructionReport {
        source_el_max: source_el.max_norm,
        pushed_el_max: pushed_el.max_norm,
        min_fiber_singular_value: min_sv,
        tol_target,
        tol_source,
        implication_holds,
    })
}

fn lagrangian_compat_max<R: Real>(
    morphism: &AlgebroidMorphism,
    sys_source: &LagrangianSystem,
    sys_target: &LagrangianSystem,
    probe_points: &[(Vec<R>, Vec<R>)],
) -> Result<R, MorphismError> {
    let mut max = R::zero();
    for (x, y) in probe_points {
        let l = sys_source.lagrangian_at(x, y)?;
        let (xp, yp) = morphism.apply(x, y)?;
        let lp = sys_target.lagrangian_at(&xp, &yp)?;
        max = max.max_by_val((l - lp).abs());
    }
    Ok(max)
}

/// JSON form of a morphism (see `docs/io-formats.md`): `phi` components and
/// the `Phi` matrix, with source/target algebroid names resolved by the
/// caller.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MorphismSchema {
    pub phi: Vec<String>,
    #[serde(rename = "Phi")]
    pub phi_fiber: Vec<Vec<String>>,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
}

impl MorphismSchema {
    pub fn build(
        &self,
        source: Arc<LieAlgebroid>,
        target: Arc<LieAlgebroid>,
    ) -> Result<AlgebroidMorphism, MorphismError> {
        let phi: Vec<&str> = self.phi.iter().map(|s| s.as_str()).collect();
        let mut fiber = Vec::new();
        if self.phi_fiber.len() != target.fiber_rank() {
            return Err(MorphismError::DimensionMismatch {
                what: "Phi rows",
                expected: target.fiber_rank(),
                got: self.phi_fiber.len(),
            });
        }
        for row in &self.phi_fiber {
            if row.len() != source.fiber_rank() {
                return Err(MorphismError::DimensionMismatch {
                    what: "Phi row",
                    expected: source.fiber_rank(),
                    got: row.len(),
                });
            }
            fiber.extend(row.iter().map(|s| s.as_str()));
        }
        AlgebroidMorphism::new_unchecked(source, target, &phi, &fiber)
    }
}
