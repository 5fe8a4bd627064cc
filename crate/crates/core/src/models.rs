//! Ready-made example systems and the Lagrange-multiplier diagnostics.
//!
//! The heavy top lives on the transformation algebroid of so(3) acting on
//! R^3 (builtin `so3_r3`): `L(gamma, omega) = omega . I omega / 2 -
//! gamma . e` with `gamma` the gravity direction in the body frame and `e`
//! the unit symmetry axis. Its equations of motion are
//!
//! ```text
//! I domega/dt + omega x (I omega) = gamma x e
//! d gamma/dt = gamma x omega
//! ```
//!
//! The free rigid body is shipped twice: on the Lie algebra so(3) directly,
//! and on a ZXZ Euler-angle chart whose kinematic matrix `W` maps chart
//! rates to body angular velocity; [`euler_to_so3`] is the corresponding
//! algebroid morphism and the reduction demo pushes chart solutions onto
//! so(3).
//!
//! The multiplier diagnostics probe the naive constrained-variational
//! formulation of the heavy top: [`abnormal_check`] verifies that
//! `p = alpha * gamma` solves the abnormal multiplier equations along any
//! admissible curve (so the abnormal family carries no information), and
//! [`normal_multiplier_gap`] measures how far `I omega` is from the range
//! of `p -> p x gamma` over multipliers tangent to the sphere; a positive
//! gap certifies that no normal multiplier exists at that state.

use std::sync::Arc;

use nalgebra::RealField;
use serde::Serialize;

use crate::algebroid::{builtin, AlgebroidError, Builtin};
use crate::dynamics::DynamicsError;
use crate::linalg;
use crate::morphism::{AlgebroidMorphism, MorphismError};
use crate::paths::{EPath, PathError};
use crate::scalar::Real;
use crate::LagrangianSystem;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Morphism(#[from] MorphismError),
    #[error("inertia entries must be positive, got {0:?}")]
    BadInertia([f64; 3]),
    #[error("symmetry axis must be a unit vector, |e| = {0}")]
    BadAxis(f64),
    #[error("abnormal family parameter alpha must be nonzero")]
    AlphaZero,
    #[error("gamma must be a unit vector, |gamma| = {0}")]
    GammaNotUnit(f64),
    #[error("multiplier state must have (p0, p) != 0")]
    ZeroMultiplier,
    #[error("path left the Euler chart domain at t = {t}: theta = {theta}")]
    LeftChartDomain { t: f64, theta: f64 },
    #[error("diagnostic expects the so3_r3 algebroid (3 base, 3 fiber)")]
    WrongAlgebroid,
}

/// Heavy-top parameters: diagonal inertia and the unit symmetry axis.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HeavyTopParams {
    pub inertia: [f64; 3],
    pub axis: [f64; 3],
}

impl Default for HeavyTopParams {
    /// The symmetric-top demo parameters: `I = diag(1, 1, 2)`, `e = e3`.
    fn default() -> Self {
        HeavyTopParams {
            inertia: [1.0, 1.0, 2.0],
            axis: [0.0, 0.0, 1.0],
        }
    }
}

impl HeavyTopParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.inertia.iter().any(|&i| i <= 0.0) {
            return Err(ModelError::BadInertia(self.inertia));
        }
        let norm = self.axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(ModelError::BadAxis(norm));
        }
        Ok(())
    }
}

fn cross<R: Real>(a: &[R], b: &[R]) -> [R; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Builds the heavy-top Lagrangian system on `so3_r3`.
pub fn heavy_top_system(params: &HeavyTopParams) -> Result<LagrangianSystem, ModelError> {
    params.validate()?;
    let algebroid = Arc::new(builtin(Builtin::So3R3)?);
    let [i1, i2, i3] = params.inertia;
    let [e1, e2, e3] = params.axis;
    let source = format!(
        "0.5*({i1:?}*y1^2 + {i2:?}*y2^2 + {i3:?}*y3^2) - ({e1:?}*x1 + {e2:?}*x2 + {e3:?}*x3)"
    );
    Ok(LagrangianSystem::from_source(algebroid, &source)?)
}

/// Free particle on the tangent bundle of an `n`-chart.
pub fn free_particle(dim: usize) -> Result<LagrangianSystem, ModelError> {
    let algebroid = Arc::new(builtin(Builtin::Tangent(dim))?);
    let terms: Vec<String> = (1..=dim).map(|a| format!("y{a}^2")).collect();
    let source = format!("({})/2", terms.join(" + "));
    Ok(LagrangianSystem::from_source(algebroid, &source)?)
}

/// Free rigid body on so(3): `L(omega) = omega . I omega / 2`.
pub fn rigid_body_so3(inertia: [f64; 3]) -> Result<LagrangianSystem, ModelError> {
    if inertia.iter().any(|&i| i <= 0.0) {
        return Err(ModelError::BadInertia(inertia));
    }
    let algebroid = Arc::new(builtin(Builtin::So3)?);
    let [i1, i2, i3] = inertia;
    let source = format!("0.5*({i1:?}*y1^2 + {i2:?}*y2^2 + {i3:?}*y3^2)");
    Ok(LagrangianSystem::from_source(algebroid, &source)?)
}

/// Kinematic matrix of the ZXZ Euler chart `(x1, x2, x3)`: body angular
/// velocity is `omega = W(x) (dx/dt)` with
///
/// ```text
///     [ sin(x2) sin(x3)   cos(x3)  0 ]
/// W = [ sin(x2) cos(x3)  -sin(x3)  0 ]
///     [ cos(x2)           0        1 ]
/// ```
///
/// `det W = -sin(x2)`, so the chart is restricted to
/// `x2 in [EULER_THETA_MIN, EULER_THETA_MAX]`.
pub const EULER_KINEMATIC_MATRIX: [&str; 9] = [
    "sin(x2)*sin(x3)",
    "cos(x3)",
    "0",
    "sin(x2)*cos(x3)",
    "-sin(x3)",
    "0",
    "cos(x2)",
    "0",
    "1",
];

pub const EULER_THETA_MIN: f64 = 0.2;
pub const EULER_THETA_MAX: f64 = std::f64::consts::PI - 0.2;

/// Free rigid body in the ZXZ Euler chart:
/// `L(x, dx/dt) = (W dx/dt) . I (W dx/dt) / 2`.
pub fn rigid_body_euler_chart(inertia: [f64; 3]) -> Result<LagrangianSystem, ModelError> {
    if inertia.iter().any(|&i| i <= 0.0) {
        return Err(ModelError::BadInertia(inertia));
    }
    let algebroid = Arc::new(builtin(Builtin::EulerChartSo3)?);
    let [i1, i2, i3] = inertia;
    let w1 = "(sin(x2)*sin(x3)*y1 + cos(x3)*y2)";
    let w2 = "(sin(x2)*cos(x3)*y1 - sin(x3)*y2)";
    let w3 = "(cos(x2)*y1 + y3)";
    let source = format!("0.5*({i1:?}*{w1}^2 + {i2:?}*{w2}^2 + {i3:?}*{w3}^2)");
    Ok(LagrangianSystem::from_source(algebroid, &source)?)
}

/// The morphism from the Euler-chart tangent bundle onto so(3): constant
/// base map to the dummy point, fiber map the kinematic matrix. Validated
/// numerically through its morphism residual and the reduction check rather
/// than against a transcribed formula.
pub fn euler_to_so3() -> Result<AlgebroidMorphism, ModelError> {
    let source = Arc::new(builtin(Builtin::EulerChartSo3)?);
    let target = Arc::new(builtin(Builtin::So3)?);
    Ok(AlgebroidMorphism::new(
        source,
        target,
        &["0"],
        &EULER_KINEMATIC_MATRIX,
    )?)
}

/// Converts a body angular velocity into chart rates at `x` by solving
/// `W(x) v = omega`.
pub fn body_to_chart_rates<R: Real + RealField>(
    morphism: &AlgebroidMorphism,
    x: &[R],
    omega: &[R],
) -> Result<Vec<R>, ModelError> {
    let w = morphism.fiber_matrix(x)?;
    let (v, _cond) =
        linalg::solve_with_condition(&w, omega, omega.len()).ok_or(ModelError::WrongAlgebroid)?;
    Ok(v)
}

/// Errors if any node of a path on the Euler chart leaves the fenced
/// nutation range.
pub fn check_euler_chart_domain<R: Real>(path: &EPath<R>) -> Result<(), ModelError> {
    for k in 0..path.grid().nodes() {
        let theta = path.x_at(k)[1].to_f64();
        if !(EULER_THETA_MIN..=EULER_THETA_MAX).contains(&theta) {
            return Err(ModelError::LeftChartDomain {
                t: path.grid().time(k).to_f64(),
                theta,
            });
        }
    }
    Ok(())
}

/// Hand-coded heavy-top equation residual
/// `I domega/dt + omega x (I omega) - gamma x e` per node (same difference
/// stencils as the generic machinery), used as an independent oracle for the
/// Euler-Lagrange residual.
pub fn euler_top_residual<R: Real>(
    params: &HeavyTopParams,
    path: &EPath<R>,
) -> Result<Vec<R>, ModelError> {
    params.validate()?;
    expect_so3_r3(path)?;
    let nodes = path.grid().nodes();
    let inertia = params.inertia.map(R::from_lit);
    let axis = params.axis.map(R::from_lit);
    let mut momenta = Vec::with_capacity(nodes * 3);
    for k in 0..nodes {
        let w = path.y_at(k);
        for i in 0..3 {
            momenta.push(inertia[i] * w[i]);
        }
    }
    let mdot = crate::paths::time_derivative(&momenta, 3, path.grid());
    let mut out = Vec::with_capacity(nodes * 3);
    for k in 0..nodes {
        let g = path.x_at(k);
        let w = path.y_at(k);
        let iw = [inertia[0] * w[0], inertia[1] * w[1], inertia[2] * w[2]];
        let gyro = cross(w, &iw);
        let torque = cross(g, &axis);
        for i in 0..3 {
            out.push(mdot[k * 3 + i] + gyro[i] - torque[i]);
        }
    }
    Ok(out)
}

/// First integrals of a heavy-top trajectory, sampled per node: `|gamma|^2`,
/// the energy `omega . I omega / 2 + gamma . e`, and the spin momentum
/// `gamma . I omega`.
#[derive(Clone, Debug, Serialize)]
pub struct HeavyTopIntegrals<R> {
    pub gamma_norm2: Vec<R>,
    pub energy: Vec<R>,
    pub spin_momentum: Vec<R>,
}

impl<R: Real> HeavyTopIntegrals<R> {
    /// Max drift of each integral from its initial value:
    /// `(|gamma|^2, energy, gamma . I omega)`.
    pub fn max_drifts(&self) -> [R; 3] {
        let drift = |v: &[R]| {
            let first = v[0];
            v.iter()
                .fold(R::zero(), |acc, &x| acc.max_by_val((x - first).abs()))
        };
        [
            drift(&self.gamma_norm2),
            drift(&self.energy),
            drift(&self.spin_momentum),
        ]
    }
}

pub fn heavy_top_first_integrals<R: Real>(
    params: &HeavyTopParams,
    path: &EPath<R>,
) -> Result<HeavyTopIntegrals<R>, ModelError> {
    params.validate()?;
    expect_so3_r3(path)?;
    let inertia = params.inertia.map(R::from_lit);
    let axis = params.axis.map(R::from_lit);
    let half = R::from_lit(0.5);
    let nodes = path.grid().nodes();
    let mut gamma_norm2 = Vec::with_capacity(nodes);
    let mut energy = Vec::with_capacity(nodes);
    let mut spin = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let g = path.x_at(k);
        let w = path.y_at(k);
        gamma_norm2.push(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
        let kinetic =
            half * (inertia[0] * w[0] * w[0] + inertia[1] * w[1] * w[1] + inertia[2] * w[2] * w[2]);
        let potential = g[0] * axis[0] + g[1] * axis[1] + g[2] * axis[2];
        energy.push(kinetic + potential);
        spin.push(g[0] * inertia[0] * w[0] + g[1] * inertia[1] * w[1] + g[2] * inertia[2] * w[2]);
    }
    Ok(HeavyTopIntegrals {
        gamma_norm2,
        energy,
        spin_momentum: spin,
    })
}

fn expect_so3_r3<R: Real>(path: &EPath<R>) -> Result<(), ModelError> {
    if path.base_dim() != 3 || path.fiber_rank() != 3 {
        return Err(ModelError::WrongAlgebroid);
    }
    Ok(())
}

/// A Lagrange-multiplier state `(p0, p)` of the constrained formulation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MultiplierState {
    pub p: [f64; 3],
    pub p0: f64,
}

impl MultiplierState {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.p0 == 0.0 && self.p == [0.0; 3] {
            return Err(ModelError::ZeroMultiplier);
        }
        Ok(())
    }
}

/// Result of the abnormal-family diagnostic.
#[derive(Clone, Debug, Serialize)]
pub struct AbnormalReport<R> {
    pub alpha: R,
    /// Max over nodes of `|p(t) - alpha gamma(t)|`.
    pub max_family_deviation: R,
    /// Max over nodes of `|p(t) x gamma(t)|`.
    pub max_cross_gamma: R,
    pub initial_multiplier: MultiplierState,
}

/// Integrates the abnormal multiplier equation `dp/dt = -omega x p` from
/// `p(t0) = alpha gamma(t0)` along a given trajectory (RK4 in `t`; `omega`
/// is interpolated linearly between the trajectory nodes) and reports how
/// well `p` tracks the family `alpha gamma`.
///
/// Because the entire family solves the abnormal system exactly, a small
/// deviation on every admissible input is the expected outcome; the
/// diagnostic exists to certify that emptiness of information, and to expose
/// corrupted (non-admissible) inputs through a large deviation.
pub fn abnormal_check<R: Real>(
    path: &EPath<R>,
    alpha: R,
    segments: usize,
) -> Result<AbnormalReport<R>, ModelError> {
    if alpha == R::zero() {
        return Err(ModelError::AlphaZero);
    }
    expect_so3_r3(path)?;
    let grid = path.grid();
    let span = grid.t1 - grid.t0;
    let path_segs = R::from_usize(grid.segments).expect("segment count fits");

    let sample = |data: &dyn Fn(usize) -> [R; 3], t: R| -> [R; 3] {
        // linear interpolation in node index space
        let u = (t - grid.t0) / span * path_segs;
        let mut j = u.to_f64().floor() as isize;
        if j < 0 {
            j = 0;
        }
        let j = (j as usize).min(grid.segments - 1);
        let frac = u - R::from_usize(j).expect("node index fits");
        let a = data(j);
        let b = data(j + 1);
        [
            a[0] + frac * (b[0] - a[0]),
            a[1] + frac * (b[1] - a[1]),
            a[2] + frac * (b[2] - a[2]),
        ]
    };
    let omega = |k: usize| -> [R; 3] {
        let y = path.y_at(k);
        [y[0], y[1], y[2]]
    };
    let gamma = |k: usize| -> [R; 3] {
        let x = path.x_at(k);
        [x[0], x[1], x[2]]
    };

    let g0 = gamma(0);
    let mut p = [alpha * g0[0], alpha * g0[1], alpha * g0[2]];
    let initial_multiplier = MultiplierState {
        p: [p[0].to_f64(), p[1].to_f64(), p[2].to_f64()],
        p0: 0.0,
    };
    initial_multiplier.validate()?;

    let h = span / R::from_usize(segments).expect("segment count fits");
    let half = R::from_lit(0.5);
    let two = R::from_lit(2.0);
    let sixth = R::one() / R::from_lit(6.0);
    let field = |t: R, p: &[R; 3]| -> [R; 3] {
        let w = sample(&omega, t);
        let c = cross(&w, p);
        [-c[0], -c[1], -c[2]]
    };

    let mut max_dev = R::zero();
    let mut max_cross = R::zero();
    let mut record = |p: &[R; 3], t: R, k: usize, exact_node: bool| {
        let g = if exact_node {
            gamma(k)
        } else {
            sample(&gamma, t)
        };
        let mut dev = R::zero();
        for i in 0..3 {
            dev = dev.max_by_val((p[i] - alpha * g[i]).abs());
        }
        let pc = cross(p, &g);
        let mut cr = R::zero();
        for v in pc {
            cr = cr.max_by_val(v.abs());
        }
        max_dev = max_dev.max_by_val(dev);
        max_cross = max_cross.max_by_val(cr);
    };

    let nodes_match = segments == grid.segments;
    record(&p, grid.t0, 0, true);
    for k in 0..segments {
        let t = grid.t0 + h * R::from_usize(k).expect("step fits");
        let k1 = field(t, &p);
        let p2 = advance3(&p, &k1, half * h);
        let k2 = field(t + half * h, &p2);
        let p3 = advance3(&p, &k2, half * h);
        let k3 = field(t + half * h, &p3);
        let p4 = advance3(&p, &k3, h);
        let k4 = field(t + h, &p4);
        for i in 0..3 {
            p[i] += h * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        let t_next = if k + 1 == segments {
            grid.t1
        } else {
            grid.t0 + h * R::from_usize(k + 1).expect("step fits")
        };
        record(&p, t_next, k + 1, nodes_match);
    }

    Ok(AbnormalReport {
        alpha,
        max_family_deviation: max_dev,
        max_cross_gamma: max_cross,
        initial_multiplier,
    })
}

fn advance3<R: Real>(p: &[R; 3], k: &[R; 3], step: R) -> [R; 3] {
    [p[0] + step * k[0], p[1] + step * k[1], p[2] + step * k[2]]
}

/// Closed-form distance from `I omega` to the range of `p -> p x gamma`
/// over multipliers `p` orthogonal to `gamma` (the multipliers available on
/// the sphere): the cross product is an isometry of the tangent plane, so
/// the unreachable part is exactly the component of `I omega` along `gamma`
/// and the gap is `|(I omega) . gamma|`.
pub fn normal_multiplier_gap(
    inertia: &[f64; 3],
    gamma: &[f64; 3],
    omega: &[f64; 3],
) -> Result<f64, ModelError> {
    let norm = gamma.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(ModelError::GammaNotUnit(norm));
    }
    let iw_dot_gamma: f64 = (0..3).map(|i| inertia[i] * omega[i] * gamma[i]).sum();
    Ok(iw_dot_gamma.abs())
}

/// Cross-check of [`normal_multiplier_gap`] by direct minimization of
/// `|p x gamma - I omega|` over a refining two-parameter grid in the plane
/// orthogonal to `gamma`.
pub fn normal_multiplier_gap_grid(
    inertia: &[f64; 3],
    gamma: &[f64; 3],
    omega: &[f64; 3],
    points_per_axis: usize,
    refinements: usize,
) -> Result<f64, ModelError> {
    let norm = gamma.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(ModelError::GammaNotUnit(norm));
    }
    let iw = [
        inertia[0] * omega[0],
        inertia[1] * omega[1],
        inertia[2] * omega[2],
    ];
    // orthonormal basis of the plane orthogonal to gamma
    let pick = if gamma[0].abs() <= gamma[1].abs() && gamma[0].abs() <= gamma[2].abs() {
        [1.0, 0.0, 0.0]
    } else if gamma[1].abs() <= gamma[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let mut e1 = cross(gamma, &pick);
    let n1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in e1.iter_mut() {
        *v /= n1;
    }
    let e2 = cross(gamma, &e1);

    let objective = |u: f64, v: f64| -> f64 {
        let p = [
            u * e1[0] + v * e2[0],
            u * e1[1] + v * e2[1],
            u * e1[2] + v * e2[2],
        ];
        let pg = cross(&p, gamma);
        ((pg[0] - iw[0]).powi(2) + (pg[1] - iw[1]).powi(2) + (pg[2] - iw[2]).powi(2)).sqrt()
    };

    let radius = iw.iter().map(|v| v * v).sum::<f64>().sqrt() + 1.0;
    let (mut cu, mut cv, mut half_span) = (0.0, 0.0, radius);
    let mut best = f64::INFINITY;
    let pts = points_per_axis.max(3);
    for _ in 0..refinements.max(1) {
        let step = 2.0 * half_span / (pts - 1) as f64;
        let (mut bu, mut bv) = (cu, cv);
        for iu in 0..pts {
            let u = cu - half_span + iu as f64 * step;
            for iv in 0..pts {
                let v = cv - half_span + iv as f64 * step;
                let val = objective(u, v);
                if val < best {
                    best = val;
                    bu = u;
                    bv = v;
                }
            }
        }
        cu = bu;
        cv = bv;
        half_span = 2.0 * step;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{el_residual, integrate};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn params_validation() {
        assert!(HeavyTopParams::default().validate().is_ok());
        assert!(HeavyTopParams {
            inertia: [1.0, -1.0, 2.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HeavyTopParams {
            axis: [0.0, 0.0, 1.1],
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn equilibrium_path_has_tiny_el_residual() {
        let sys = heavy_top_system(&HeavyTopParams::default()).unwrap();
        let grid = crate::paths::GridSpec::new(0.0f64, 1.0, 100).unwrap();
        let p = EPath::from_fn(sys.algebroid().clone(), grid, |_| {
            (vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0])
        })
        .unwrap();
        let rep = el_residual(&sys, &p).unwrap();
        assert!(rep.max_norm <= 1e-12);
    }

    #[test]
    fn generic_trajectory_satisfies_hand_coded_equations() {
        let params = HeavyTopParams::default();
        let sys = heavy_top_system(&params).unwrap();
        let p = integrate(&sys, &[0.2f64, -0.1, 0.97], &[0.3, 0.2, 0.6], 0.0, 2.0, 2000).unwrap();
        let hand = euler_top_residual(&params, &p).unwrap();
        let hand_max = hand.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(hand_max < 5e-5, "hand residual {hand_max}");

        // the generic Euler-Lagrange residual is the same covector
        let generic = crate::dynamics::el_covectors(&sys, &p).unwrap();
        let gap = hand
            .iter()
            .zip(&generic)
            .fold(0.0f64, |a, (h, g)| a.max((h - g).abs()));
        assert!(gap <= 1e-10, "two code paths disagree by {gap}");
    }

    #[test]
    fn first_integrals_drift_slowly() {
        let params = HeavyTopParams::default();
        let sys = heavy_top_system(&params).unwrap();
        let p = integrate(&sys, &[0.1f64, 0.2, 0.97], &[0.4, -0.2, 0.7], 0.0, 5.0, 5000).unwrap();
        let ints = heavy_top_first_integrals(&params, &p).unwrap();
        let [dg, de, ds] = ints.max_drifts();
        assert!(dg < 1e-8, "|gamma|^2 drift {dg}");
        assert!(de < 1e-8, "energy drift {de}");
        assert!(ds < 1e-8, "spin momentum drift {ds}");
    }

    #[test]
    fn abnormal_family_is_tracked_along_solutions() {
        let params = HeavyTopParams::default();
        let sys = heavy_top_system(&params).unwrap();
        let p = integrate(
            &sys,
            &[0.05, 0.05, -0.997493734528],
            &[0.05, -0.02, 0.2],
            0.0,
            5.0,
            5000,
        )
        .unwrap();
        let rep = abnormal_check(&p, 2.0, 5000).unwrap();
        assert!(rep.max_family_deviation < 1e-7, "{}", rep.max_family_deviation);
        assert!(rep.max_cross_gamma < 1e-6);
    }

    #[test]
    fn abnormal_check_rejects_zero_alpha() {
        let sys = heavy_top_system(&HeavyTopParams::default()).unwrap();
        let p = integrate(&sys, &[0.0f64, 0.0, 1.0], &[0.1, 0.0, 0.5], 0.0, 1.0, 100).unwrap();
        assert!(matches!(
            abnormal_check(&p, 0.0, 100),
            Err(ModelError::AlphaZero)
        ));
    }

    #[test]
    fn abnormal_check_exposes_corrupted_base_curves() {
        let sys = heavy_top_system(&HeavyTopParams::default()).unwrap();
        let p = integrate(&sys, &[0.1f64, 0.0, 0.99], &[0.2, 0.1, 0.5], 0.0, 2.0, 1000).unwrap();
        let corrupted = p
            .map_base(|_, t, x| vec![x[0] + 0.3 * t, x[1], x[2]])
            .unwrap();
        let rep = abnormal_check(&corrupted, 1.0, 1000).unwrap();
        assert!(rep.max_family_deviation > 0.1, "{}", rep.max_family_deviation);
    }

    #[test]
    fn abnormal_drift_decays_with_refinement_at_second_order_or_better() {
        let params = HeavyTopParams::default();
        let sys = heavy_top_system(&params).unwrap();
        let drift = |segments: usize| -> f64 {
            let p = integrate(
                &sys,
                &[0.05, 0.05, -0.997493734528],
                &[0.05, -0.02, 0.2],
                0.0,
                2.0,
                segments,
            )
            .unwrap();
            abnormal_check(&p, 2.0, segments)
                .unwrap()
                .max_family_deviation
        };
        let d1 = drift(500);
        let d2 = drift(1000);
        let order = (d1 / d2).log2();
        assert!(order >= 1.8, "order {order} ({d1} -> {d2})");
    }

    #[test]
    fn normal_gap_at_relative_equilibrium_is_two() {
        let gap = normal_multiplier_gap(&[1.0, 1.0, 2.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0])
            .unwrap();
        assert_eq!(gap, 2.0);
        let grid_gap =
            normal_multiplier_gap_grid(&[1.0, 1.0, 2.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], 101, 6)
                .unwrap();
        assert!((grid_gap - 2.0).abs() < 1e-6, "grid gap {grid_gap}");
    }

    #[test]
    fn normal_gap_vanishes_for_reachable_momenta() {
        // omega orthogonal to gamma with I omega also orthogonal
        let gap = normal_multiplier_gap(&[1.0, 1.0, 2.0], &[0.0, 0.0, 1.0], &[0.3, -0.4, 0.0])
            .unwrap();
        assert_eq!(gap, 0.0);
        let grid_gap =
            normal_multiplier_gap_grid(&[1.0, 1.0, 2.0], &[0.0, 0.0, 1.0], &[0.3, -0.4, 0.0], 101, 6)
                .unwrap();
        assert!(grid_gap < 1e-6, "grid gap {grid_gap}");
    }

    #[test]
    fn grid_minimizer_matches_closed_form_at_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let inertia = [1.0, 1.0, 2.0];
        for _ in 0..100 {
            let mut g = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 0.1 {
                continue;
            }
            for v in g.iter_mut() {
                *v /= n;
            }
            let w = [
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            ];
            let closed = normal_multiplier_gap(&inertia, &g, &w).unwrap();
            let grid = normal_multiplier_gap_grid(&inertia, &g, &w, 101, 6).unwrap();
            assert!(
                (closed - grid).abs() < 1e-6,
                "closed {closed} vs grid {grid}"
            );
        }
    }

    #[test]
    fn multiplier_state_validation() {
        assert!(MultiplierState {
            p: [0.0; 3],
            p0: 0.0
        }
        .validate()
        .is_err());
        assert!(MultiplierState {
            p: [0.0, 0.0, 2.0],
            p0: 0.0
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn gamma_unit_check() {
        assert!(matches!(
            normal_multiplier_gap(&[1.0, 1.0, 2.0], &[0.0, 0.0, 2.0], &[0.0, 0.0, 1.0]),
            Err(ModelError::GammaNotUnit(_))
        ));
    }

    #[test]
    fn euler_chart_domain_check() {
        let sys = rigid_body_euler_chart([1.0, 2.0, 3.0]).unwrap();
        let grid = crate::paths::GridSpec::new(0.0f64, 1.0, 10).unwrap();
        let inside = EPath::from_fn(sys.algebroid().clone(), grid, |t| {
            (vec![t, 1.3, 0.5], vec![1.0, 0.0, 0.0])
        })
        .unwrap();
        assert!(check_euler_chart_domain(&inside).is_ok());
        let outside = EPath::from_fn(sys.algebroid().clone(), grid, |t| {
            (vec![t, 0.15 * t + 0.05, 0.5], vec![1.0, 0.0, 0.0])
        })
        .unwrap();
        assert!(matches!(
            check_euler_chart_domain(&outside),
            Err(ModelError::LeftChartDomain { .. })
        ));
    }
}
