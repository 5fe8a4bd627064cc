//! Lagrangian systems on an algebroid: momentum and energy, the
//! Euler-Lagrange residual of a discretized path, and a fixed-step RK4
//! integrator for regular Lagrangians.
//!
//! The equations of motion in coordinates are
//!
//! ```text
//! d/dt (dL/dy[a]) + dL/dy[g] C[g][a][b] y[b] = rho[i][a] dL/dx[i]
//! dx[i]/dt = rho[i][a] y[a]
//! ```
//!
//! [`el_residual`] evaluates the left-minus-right defect of the first line
//! on sampled data (momenta are exact per node, the time derivative uses the
//! grid stencils). [`integrate`] solves the explicit form obtained by moving
//! the fiber Hessian of `L` to the left: regularity is required and
//! ill-conditioning is a hard error, not a warning.

use std::sync::Arc;

use nalgebra::RealField;
use serde::Serialize;

use crate::algebroid::{AlgebroidError, LieAlgebroid};
use crate::expr::{EvalError, Expression};
use crate::linalg;
use crate::paths::{EPath, GridSpec, PathError};
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("evaluating {context}: {source}")]
    Eval { context: String, source: EvalError },
    #[error(
        "Lagrangian must use the algebroid coordinates {expected:?}, got {got:?}"
    )]
    VariableMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("fiber Hessian singular or ill-conditioned at t = {t} (condition {cond:e})")]
    SingularHessian { t: f64, cond: f64 },
    #[error("state left the finite range at t = {t}")]
    NonFinite { t: f64 },
}

/// A Lagrangian `L(x, y)` over an algebroid, expressed in the coordinates
/// `x1..xn, y1..ym`.
#[derive(Clone, Debug)]
pub struct LagrangianSystem {
    algebroid: Arc<LieAlgebroid>,
    lagrangian: Expression,
}

impl LagrangianSystem {
    pub fn new(
        algebroid: Arc<LieAlgebroid>,
        lagrangian: Expression,
    ) -> Result<Self, DynamicsError> {
        if lagrangian.vars() != &algebroid.full_vars()[..] {
            return Err(DynamicsError::VariableMismatch {
                expected: algebroid.full_vars().to_vec(),
                got: lagrangian.vars().to_vec(),
            });
        }
        Ok(LagrangianSystem {
            algebroid,
            lagrangian,
        })
    }

    /// Parses `source` in the algebroid's bundle coordinates.
    pub fn from_source(
        algebroid: Arc<LieAlgebroid>,
        source: &str,
    ) -> Result<Self, DynamicsError> {
        let expr = Expression::parse_shared(source, algebroid.full_vars())
            .map_err(|e| DynamicsError::Algebroid(AlgebroidError::Parse(e)))?;
        LagrangianSystem::new(algebroid, expr)
    }

    pub fn algebroid(&self) -> &Arc<LieAlgebroid> {
        &self.algebroid
    }

    pub fn lagrangian(&self) -> &Expression {
        &self.lagrangian
    }

    fn bundle_point<R: Real>(&self, x: &[R], y: &[R]) -> Vec<R> {
        let mut pt = Vec::with_capacity(x.len() + y.len());
        pt.extend_from_slice(x);
        pt.extend_from_slice(y);
        pt
    }

    /// `L(x, y)`.
    pub fn lagrangian_at<R: Real>(&self, x: &[R], y: &[R]) -> Result<R, DynamicsError> {
        self.check_point(x, y)?;
        self.lagrangian
            .eval(&self.bundle_point(x, y))
            .map_err(|source| DynamicsError::Eval {
                context: "L".into(),
                source,
            })
    }

    /// The fiber gradient `dL/dy`, exact.
    pub fn momentum<R: Real>(&self, x: &[R], y: &[R]) -> Result<Vec<R>, DynamicsError> {
        self.check_point(x, y)?;
        let n = self.algebroid.base_dim();
        let m = self.algebroid.fiber_rank();
        let pt = self.bundle_point(x, y);
        let mut dir = vec![R::zero(); n + m];
        let mut theta = Vec::with_capacity(m);
        for a in 0..m {
            dir[n + a] = R::one();
            let jet = self
                .lagrangian
                .eval_jet1(&pt, &dir)
                .map_err(|source| DynamicsError::Eval {
                    context: format!("dL/dy[{a}]"),
                    source,
                })?;
            theta.push(jet.d);
            dir[n + a] = R::zero();
        }
        Ok(theta)
    }

    /// The energy `<dL/dy, y> - L`. Constant along solutions because the
    /// structure functions are antisymmetric.
    pub fn energy<R: Real>(&self, x: &[R], y: &[R]) -> Result<R, DynamicsError> {
        let theta = self.momentum(x, y)?;
        let l = self.lagrangian_at(x, y)?;
        let mut e = -l;
        for (t, v) in theta.iter().zip(y) {
            e += *t * *v;
        }
        Ok(e)
    }

    /// The base gradient `dL/dx`, exact.
    pub fn base_gradient<R: Real>(&self, x: &[R], y: &[R]) -> Result<Vec<R>, DynamicsError> {
        self.check_point(x, y)?;
        let n = self.algebroid.base_dim();
        let pt = self.bundle_point(x, y);
        let mut dir = vec![R::zero(); pt.len()];
        let mut grad = Vec::with_capacity(n);
        for i in 0..n {
            dir[i] = R::one();
            let jet = self
                .lagrangian
                .eval_jet1(&pt, &dir)
                .map_err(|source| DynamicsError::Eval {
                    context: format!("dL/dx[{i}]"),
                    source,
                })?;
            grad.push(jet.d);
            dir[i] = R::zero();
        }
        Ok(grad)
    }

    /// Momentum and fiber Hessian in one sweep of second-order jets.
    pub fn momentum_and_fiber_hessian<R: Real>(
        &self,
        x: &[R],
        y: &[R],
    ) -> Result<(Vec<R>, Vec<R>), DynamicsError> {
        self.check_point(x, y)?;
        let n = self.algebroid.base_dim();
        let m = self.algebroid.fiber_rank();
        let pt = self.bundle_point(x, y);
        let mut d1 = vec![R::zero(); n + m];
        let mut d2 = vec![R::zero(); n + m];
        let mut theta = vec![R::zero(); m];
        let mut hess = vec![R::zero(); m * m];
        for a in 0..m {
            d1[n + a] = R::one();
            for b in a..m {
                d2[n + b] = R::one();
                let jet = self
                    .lagrangian
                    .eval_jet2(&pt, &d1, &d2)
                    .map_err(|source| DynamicsError::Eval {
                        context: format!("d2L/dy[{a}]dy[{b}]"),
                        source,
                    })?;
                if b == a {
                    theta[a] = jet.d1;
                }
                hess[a * m + b] = jet.d12;
                hess[b * m + a] = jet.d12;
                d2[n + b] = R::zero();
            }
            d1[n + a] = R::zero();
        }
        Ok((theta, hess))
    }

    /// `sum_i d2L/dy[a] dx[i] v[i]` for a base direction `v`, exact.
    fn mixed_hessian_apply<R: Real>(
        &self,
        x: &[R],
        y: &[R],
        v: &[R],
    ) -> Result<Vec<R>, DynamicsError> {
        let n = self.algebroid.base_dim();
        let m = self.algebroid.fiber_rank();
        let pt = self.bundle_point(x, y);
        let mut d1 = vec![R::zero(); n + m];
        let mut d2 = vec![R::zero(); n + m];
        d2[..n].copy_from_slice(v);
        let mut out = Vec::with_capacity(m);
        for a in 0..m {
            d1[n + a] = R::one();
            let jet = self
                .lagrangian
                .eval_jet2(&pt, &d1, &d2)
                .map_err(|source| DynamicsError::Eval {
                    context: format!("d2L/dy[{a}]dx . v"),
                    source,
                })?;
            out.push(jet.d12);
            d1[n + a] = R::zero();
        }
        Ok(out)
    }

    fn check_point<R: Real>(&self, x: &[R], y: &[R]) -> Result<(), DynamicsError> {
        self.algebroid.check_base_point(x)?;
        self.algebroid.check_fiber_point(y)?;
        Ok(())
    }
}

/// Euler-Lagrange residual of a path, per node and in max norm.
#[derive(Clone, Debug, Serialize)]
pub struct ElReport<R> {
    /// Max over nodes and components of the residual covector.
    pub max_norm: R,
    /// Per-node max-norm of the residual covector.
    pub per_node: Vec<R>,
    /// Admissibility of the input path.
    pub admissibility_max: R,
    pub admissibility_kappa: R,
    /// Set when the path's admissibility defect is not consistent with a
    /// second-order-accurate admissible sample (`kappa > 100`).
    pub admissibility_warning: bool,
}

/// Threshold on `kappa = defect / h^2` above which a path is flagged as not
/// admissible in [`el_residual`].
pub const ADMISSIBILITY_KAPPA_WARN: f64 = 100.0;

/// The per-node Euler-Lagrange residual covectors
/// `E[a] = d/dt(dL/dy[a]) + dL/dy[g] C[g][a][b] y[b] - rho[i][a] dL/dx[i]`,
/// flattened node-major. Momenta are exact per node; only the time
/// derivative uses the difference stencils, so the residual of a true
/// solution decays at second order in the step.
pub fn el_covectors<R: Real>(
    sys: &LagrangianSystem,
    path: &EPath<R>,
) -> Result<Vec<R>, DynamicsError> {
    let n = path.base_dim();
    let m = path.fiber_rank();
    let nodes = path.grid().nodes();

    let mut thetas = Vec::with_capacity(nodes * m);
    for k in 0..nodes {
        thetas.extend(sys.momentum(path.x_at(k), path.y_at(k))?);
    }
    let theta_dot = crate::paths::time_derivative(&thetas, m, path.grid());

    let mut out = Vec::with_capacity(nodes * m);
    for k in 0..nodes {
        let x = path.x_at(k);
        let y = path.y_at(k);
        let theta = &thetas[k * m..(k + 1) * m];
        let c = sys.algebroid().structure_sparse_at(x)?;
        let bracket_term = c.apply_left(theta, y);
        let gradx = sys.base_gradient(x, y)?;
        let rho = sys.algebroid().anchor_at(x)?;
        for a in 0..m {
            let mut force = R::zero();
            for i in 0..n {
                force += rho[i * m + a] * gradx[i];
            }
            out.push(theta_dot[k * m + a] + bracket_term[a] - force);
        }
    }
    Ok(out)
}

/// Euler-Lagrange residual report of a path, with the admissibility of the
/// input checked alongside.
pub fn el_residual<R: Real>(
    sys: &LagrangianSystem,
    path: &EPath<R>,
) -> Result<ElReport<R>, DynamicsError> {
    let adm = path.admissibility()?;
    let m = path.fiber_rank();
    let covectors = el_covectors(sys, path)?;
    let mut per_node = Vec::with_capacity(path.grid().nodes());
    let mut max = R::zero();
    for k in 0..path.grid().nodes() {
        let mut node_max = R::zero();
        for a in 0..m {
            node_max = node_max.max_by_val(covectors[k * m + a].abs());
        }
        per_node.push(node_max);
        max = max.max_by_val(node_max);
    }
    Ok(ElReport {
        max_norm: max,
        per_node,
        admissibility_max: adm.max_residual,
        admissibility_kappa: adm.kappa,
        admissibility_warning: adm.kappa.to_f64() > ADMISSIBILITY_KAPPA_WARN,
    })
}

/// Integrator settings.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    /// Abort threshold for the 1-norm condition number of the fiber Hessian.
    pub condition_threshold: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            condition_threshold: 1e8,
        }
    }
}

/// Classical fixed-step RK4 on the first-order system
/// `dx/dt = rho(x) y`, `dy/dt = H(x, y)^{-1} r(x, y)` with
/// `r[a] = rho[i][a] dL/dx[i] - dL/dy[g] C[g][a][b] y[b]
///         - d2L/dy[a]dx[i] (rho y)[i]`.
///
/// `H` is the fiber Hessian, solved per stage by LU with partial pivoting.
/// Deterministic: identical inputs give bit-identical output.
pub fn integrate<R: Real + RealField>(
    sys: &LagrangianSystem,
    x0: &[R],
    y0: &[R],
    t0: R,
    t1: R,
    segments: usize,
) -> Result<EPath<R>, DynamicsError> {
    integrate_with(sys, x0, y0, t0, t1, segments, &IntegratorOptions::default())
}

pub fn integrate_with<R: Real + RealField>(
    sys: &LagrangianSystem,
    x0: &[R],
    y0: &[R],
    t0: R,
    t1: R,
    segments: usize,
    options: &IntegratorOptions,
) -> Result<EPath<R>, DynamicsError> {
    let grid = GridSpec::new(t0, t1, segments)?;
    let n = sys.algebroid().base_dim();
    let m = sys.algebroid().fiber_rank();
    sys.check_point(x0, y0)?;

    let h = grid.step();
    let half = R::from_lit(0.5);
    let sixth = R::one() / R::from_lit(6.0);
    let two = R::from_lit(2.0);

    let mut xs = Vec::with_capacity(grid.nodes() * n);
    let mut ys = Vec::with_capacity(grid.nodes() * m);
    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    xs.extend_from_slice(&x);
    ys.extend_from_slice(&y);

    let rhs = |x: &[R], y: &[R], t: R| -> Result<(Vec<R>, Vec<R>), DynamicsError> {
        let xdot = sys.algebroid().anchor_apply(x, y)?;
        let gradx = sys.base_gradient(x, y)?;
        let (theta, hess) = sys.momentum_and_fiber_hessian(x, y)?;
        let mixed = sys.mixed_hessian_apply(x, y, &xdot)?;
        let c = sys.algebroid().structure_sparse_at(x)?;
        let bracket_term = c.apply_left(&theta, y);
        let rho = sys.algebroid().anchor_at(x)?;
        let mut r = Vec::with_capacity(m);
        for a in 0..m {
            let mut force = R::zero();
            for i in 0..n {
                force += rho[i * m + a] * gradx[i];
            }
            r.push(force - bracket_term[a] - mixed[a]);
        }
        let (ydot, cond) = linalg::solve_with_condition(&hess, &r, m).ok_or(
            DynamicsError::SingularHessian {
                t: t.to_f64(),
                cond: f64::INFINITY,
            },
        )?;
        if cond.to_f64() > options.condition_threshold {
            return Err(DynamicsError::SingularHessian {
                t: t.to_f64(),
                cond: cond.to_f64(),
            });
        }
        Ok((xdot, ydot))
    };

    for k in 0..segments {
        let t = grid.time(k);
        let (k1x, k1y) = rhs(&x, &y, t)?;
        let (x2, y2) = advance(&x, &y, &k1x, &k1y, half * h);
        let (k2x, k2y) = rhs(&x2, &y2, t + half * h)?;
        let (x3, y3) = advance(&x, &y, &k2x, &k2y, half * h);
        let (k3x, k3y) = rhs(&x3, &y3, t + half * h)?;
        let (x4, y4) = advance(&x, &y, &k3x, &k3y, h);
        let (k4x, k4y) = rhs(&x4, &y4, t + h)?;

        for i in 0..n {
            x[i] += h * sixth * (k1x[i] + two * k2x[i] + two * k3x[i] + k4x[i]);
        }
        for a in 0..m {
            y[a] += h * sixth * (k1y[a] + two * k2y[a] + two * k3y[a] + k4y[a]);
        }
        let t_next = grid.time(k + 1);
        if x.iter().chain(y.iter()).any(|v| !v.finite()) {
            return Err(DynamicsError::NonFinite {
                t: t_next.to_f64(),
            });
        }
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
    }

    Ok(EPath::from_samples(sys.algebroid().clone(), grid, xs, ys)?)
}

fn advance<R: Real>(x: &[R], y: &[R], kx: &[R], ky: &[R], step: R) -> (Vec<R>, Vec<R>) {
    let nx = x.iter().zip(kx).map(|(&v, &d)| v + step * d).collect();
    let ny = y.iter().zip(ky).map(|(&v, &d)| v + step * d).collect();
    (nx, ny)
}

/// Per-node conserved-quantity samples of a path under a system.
pub fn energy_along<R: Real>(
    sys: &LagrangianSystem,
    path: &EPath<R>,
) -> Result<Vec<R>, DynamicsError> {
    (0..path.grid().nodes())
        .map(|k| sys.energy(path.x_at(k), path.y_at(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::{builtin, Builtin};

    fn free_particle2() -> LagrangianSystem {
        let a = Arc::new(builtin(Builtin::Tangent(2)).unwrap());
        LagrangianSystem::from_source(a, "(y1^2 + y2^2)/2").unwrap()
    }

    fn heavy_top_sys() -> LagrangianSystem {
        let a = Arc::new(builtin(Builtin::So3R3).unwrap());
        LagrangianSystem::from_source(a, "0.5*(y1^2 + y2^2 + 2*y3^2) - x3").unwrap()
    }

    #[test]
    fn momentum_of_quadratic_lagrangian() {
        let sys = free_particle2();
        let theta = sys.momentum(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(theta, vec![3.0, 4.0]);
    }

    #[test]
    fn momentum_of_heavy_top_is_inertia_times_omega() {
        let sys = heavy_top_sys();
        let theta = sys.momentum(&[0.0f64, 0.0, 1.0], &[0.3, -0.4, 0.5]).unwrap();
        assert!((theta[0] - 0.3).abs() < 1e-15);
        assert!((theta[1] + 0.4).abs() < 1e-15);
        assert!((theta[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn momentum_vanishes_for_velocity_independent_lagrangian() {
        let a = Arc::new(builtin(Builtin::Tangent(2)).unwrap());
        let sys = LagrangianSystem::from_source(a, "x1*x2 + sin(x1)").unwrap();
        let theta = sys.momentum(&[0.7f64, -0.3], &[5.0, 5.0]).unwrap();
        assert_eq!(theta, vec![0.0, 0.0]);
    }

    #[test]
    fn energy_examples() {
        let sys = free_particle2();
        let e = sys.energy(&[0.0f64, 0.0], &[3.0, 4.0]).unwrap();
        assert!((e - 12.5).abs() < 1e-14);

        let top = heavy_top_sys();
        let e = top.energy(&[0.0f64, 0.0, 1.0], &[0.0, 0.0, 1.0]).unwrap();
        // (1/2) omega . I omega + gamma . e = 1 + 1
        assert!((e - 2.0).abs() < 1e-14);

        // L linear in y: energy is minus the x-dependent part
        let a = Arc::new(builtin(Builtin::Tangent(1)).unwrap());
        let sys = LagrangianSystem::from_source(a, "x1*y1 - cos(x1)").unwrap();
        let e = sys.energy(&[0.4], &[7.0]).unwrap();
        assert!((e - 0.4f64.cos()).abs() < 1e-14);
    }

    #[test]
    fn free_particle_integration_is_exact() {
        let sys = free_particle2();
        let p = integrate(&sys, &[0.0f64, 0.0], &[1.0, 2.0], 0.0, 1.0, 100).unwrap();
        let last = p.grid().nodes() - 1;
        assert!((p.x_at(last)[0] - 1.0).abs() < 1e-12);
        assert!((p.x_at(last)[1] - 2.0).abs() < 1e-12);
        assert!((p.y_at(last)[0] - 1.0).abs() < 1e-12);
        assert!((p.y_at(last)[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn free_particle_straight_line_has_tiny_el_residual() {
        let sys = free_particle2();
        let grid = GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| {
            (vec![t, 2.0 * t], vec![1.0, 2.0])
        })
        .unwrap();
        let rep = el_residual(&sys, &p).unwrap();
        assert!(rep.max_norm <= 1e-12, "{}", rep.max_norm);
        assert!(!rep.admissibility_warning);
    }

    #[test]
    fn heavy_top_relative_equilibrium_is_stationary() {
        let sys = heavy_top_sys();
        let grid = GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |_| {
            (vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0])
        })
        .unwrap();
        let rep = el_residual(&sys, &p).unwrap();
        assert!(rep.max_norm <= 1e-12, "{}", rep.max_norm);

        let traj = integrate(&sys, &[0.0f64, 0.0, 1.0], &[0.0, 0.0, 1.0], 0.0, 1.0, 200).unwrap();
        for k in 0..traj.grid().nodes() {
            assert!((traj.x_at(k)[2] - 1.0).abs() <= 1e-12);
            assert!((traj.y_at(k)[2] - 1.0).abs() <= 1e-12);
            assert!(traj.x_at(k)[0].abs() <= 1e-12);
            assert!(traj.y_at(k)[1].abs() <= 1e-12);
        }
    }

    #[test]
    fn rigid_body_first_integrals_drift_slowly() {
        let a = Arc::new(builtin(Builtin::So3).unwrap());
        let sys =
            LagrangianSystem::from_source(a, "0.5*(y1^2 + 2*y2^2 + 3*y3^2)").unwrap();
        let p = integrate(&sys, &[0.0f64], &[1.0, 1.0, 1.0], 0.0, 2.0, 1000).unwrap();
        let i = [1.0, 2.0, 3.0];
        let msq0: f64 = (0..3).map(|k| (i[k] * p.y_at(0)[k]).powi(2)).sum();
        let e0 = sys.energy(p.x_at(0), p.y_at(0)).unwrap();
        for k in 0..p.grid().nodes() {
            let msq: f64 = (0..3).map(|j| (i[j] * p.y_at(k)[j]).powi(2)).sum();
            let e = sys.energy(p.x_at(k), p.y_at(k)).unwrap();
            assert!((msq - msq0).abs() < 1e-9, "momentum norm drift {}", msq - msq0);
            assert!((e - e0).abs() < 1e-10, "energy drift {}", e - e0);
        }
    }

    #[test]
    fn singular_hessian_aborts() {
        let a = Arc::new(builtin(Builtin::So3R3).unwrap());
        // no kinetic term: fiber Hessian is identically zero
        let sys = LagrangianSystem::from_source(a, "x3").unwrap();
        let err = integrate(&sys, &[0.0f64, 0.0, 1.0], &[0.0, 0.0, 1.0], 0.0, 1.0, 10);
        assert!(matches!(err, Err(DynamicsError::SingularHessian { .. })));
    }

    #[test]
    fn integration_is_bit_reproducible() {
        let sys = heavy_top_sys();
        let run = || {
            integrate(
                &sys,
                &[0.1, -0.2, 0.97],
                &[0.3, 0.2, 0.8],
                0.0,
                1.0,
                500,
            )
            .unwrap()
        };
        let p1 = run();
        let p2 = run();
        assert_eq!(p1.xs(), p2.xs());
        assert_eq!(p1.ys(), p2.ys());
    }

    #[test]
    fn el_residual_warns_on_non_admissible_path() {
        let sys = free_particle2();
        let grid = GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |t| {
            (vec![t * t, 0.0], vec![1.0, 0.0])
        })
        .unwrap();
        let rep = el_residual(&sys, &p).unwrap();
        assert!(rep.admissibility_warning);
    }
}
