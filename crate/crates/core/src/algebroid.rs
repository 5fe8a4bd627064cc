//! Lie algebroids in a single chart: anchor matrix, structure functions and
//! the structure equations.
//!
//! A `LieAlgebroid` stores the anchor entries `rho[i][alpha](x)` and the
//! structure functions `C[alpha][beta][gamma](x)` as expressions in the base
//! coordinates `x1..xn`. Only entries with `beta < gamma` are stored; the
//! mirrored values are materialized with an explicit sign flip, so
//! antisymmetry of `C` holds exactly, not up to a tolerance.
//!
//! The structure equations tie anchor and bracket together:
//!
//! ```text
//! rho[j][a] d rho[i][b]/dx[j] - rho[j][b] d rho[i][a]/dx[j] = rho[i][g] C[g][a][b]
//! cyclic(a,b,g) { rho[i][a] d C[n][b][g]/dx[i] + C[m][b][g] C[n][a][m] } = 0
//! ```
//!
//! [`LieAlgebroid::check_structure_equations`] evaluates both residuals with
//! exact derivatives at sample points; for data that really is a Lie
//! algebroid the residuals are pure rounding noise.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{EvalError, Expression, ParseError};
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum AlgebroidError {
    #[error("expression error: {0}")]
    Parse(#[from] ParseError),
    #[error("evaluating {context}: {source}")]
    Eval {
        context: String,
        source: EvalError,
    },
    #[error("{what}: expected {expected} entries, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("structure entry C[{alpha}][{beta}][{gamma}]: {reason}")]
    BadStructureEntry {
        alpha: usize,
        beta: usize,
        gamma: usize,
        reason: String,
    },
    #[error("base dimension and fiber rank must be positive")]
    EmptyDimensions,
    #[error("unknown builtin algebroid \"{0}\"")]
    UnknownBuiltin(String),
    #[error("no sample points given")]
    NoPoints,
}

/// One stored structure-function entry `C[alpha][beta][gamma]` with
/// `beta < gamma`.
#[derive(Clone, Debug)]
pub struct StructureEntry {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub expr: Expression,
}

/// A Lie algebroid in one chart, immutable after construction.
#[derive(Clone, Debug)]
pub struct LieAlgebroid {
    name: String,
    base_dim: usize,
    fiber_rank: usize,
    x_vars: Arc<[String]>,
    full_vars: Arc<[String]>,
    /// Row-major `base_dim x fiber_rank` anchor entries.
    rho: Vec<Expression>,
    c_entries: Vec<StructureEntry>,
}

impl LieAlgebroid {
    /// Builds an algebroid from anchor entries (row-major, `n*m` strings in
    /// the variables `x1..xn`) and structure entries with `beta < gamma`.
    pub fn new(
        name: &str,
        base_dim: usize,
        fiber_rank: usize,
        rho: &[&str],
        c: &[(usize, usize, usize, &str)],
    ) -> Result<Self, AlgebroidError> {
        if base_dim == 0 || fiber_rank == 0 {
            return Err(AlgebroidError::EmptyDimensions);
        }
        if rho.len() != base_dim * fiber_rank {
            return Err(AlgebroidError::DimensionMismatch {
                what: "anchor matrix",
                expected: base_dim * fiber_rank,
                got: rho.len(),
            });
        }
        let x_names: Vec<String> = (1..=base_dim).map(|i| format!("x{i}")).collect();
        let x_vars: Arc<[String]> = x_names.into();
        let full_names: Vec<String> = (1..=base_dim)
            .map(|i| format!("x{i}"))
            .chain((1..=fiber_rank).map(|a| format!("y{a}")))
            .collect();

        let rho = rho
            .iter()
            .map(|src| Expression::parse_shared(src, &x_vars))
            .collect::<Result<Vec<_>, _>>()?;

        let mut entries = Vec::with_capacity(c.len());
        for &(alpha, beta, gamma, src) in c {
            if alpha >= fiber_rank || beta >= fiber_rank || gamma >= fiber_rank {
                return Err(AlgebroidError::BadStructureEntry {
                    alpha,
                    beta,
                    gamma,
                    reason: format!("index out of range (fiber rank {fiber_rank})"),
                });
            }
            if beta >= gamma {
                return Err(AlgebroidError::BadStructureEntry {
                    alpha,
                    beta,
                    gamma,
                    reason: "only beta < gamma entries are stored".into(),
                });
            }
            if entries
                .iter()
                .any(|e: &StructureEntry| e.alpha == alpha && e.beta == beta && e.gamma == gamma)
            {
                return Err(AlgebroidError::BadStructureEntry {
                    alpha,
                    beta,
                    gamma,
                    reason: "duplicate entry".into(),
                });
            }
            entries.push(StructureEntry {
                alpha,
                beta,
                gamma,
                expr: Expression::parse_shared(src, &x_vars)?,
            });
        }

        Ok(LieAlgebroid {
            name: name.to_owned(),
            base_dim,
            fiber_rank,
            x_vars,
            full_vars: full_names.into(),
            rho,
            c_entries: entries,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Base dimension `n`.
    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    /// Fiber rank `m`.
    pub fn fiber_rank(&self) -> usize {
        self.fiber_rank
    }

    /// The base coordinate names `x1..xn`.
    pub fn x_vars(&self) -> &Arc<[String]> {
        &self.x_vars
    }

    /// The bundle coordinate names `x1..xn, y1..ym`, the variable list for
    /// Lagrangians.
    pub fn full_vars(&self) -> &Arc<[String]> {
        &self.full_vars
    }

    pub fn anchor_exprs(&self) -> &[Expression] {
        &self.rho
    }

    pub fn structure_entries(&self) -> &[StructureEntry] {
        &self.c_entries
    }

    fn ctx_eval<R: Real>(
        &self,
        expr: &Expression,
        x: &[R],
        context: impl FnOnce() -> String,
    ) -> Result<R, AlgebroidError> {
        expr.eval(x).map_err(|source| AlgebroidError::Eval {
            context: context(),
            source,
        })
    }

    /// Entrywise evaluation of the anchor at `x`, row-major `n x m`.
    pub fn anchor_at<R: Real>(&self, x: &[R]) -> Result<Vec<R>, AlgebroidError> {
        self.check_base_point(x)?;
        let mut out = Vec::with_capacity(self.rho.len());
        for i in 0..self.base_dim {
            for a in 0..self.fiber_rank {
                out.push(self.ctx_eval(&self.rho[i * self.fiber_rank + a], x, || {
                    format!("rho[{i}][{a}]")
                })?);
            }
        }
        Ok(out)
    }

    /// The base velocity `rho(x) y` of the fiber vector `y`.
    pub fn anchor_apply<R: Real>(&self, x: &[R], y: &[R]) -> Result<Vec<R>, AlgebroidError> {
        let rho = self.anchor_at(x)?;
        Ok(mat_vec(&rho, y, self.base_dim, self.fiber_rank))
    }

    /// Entrywise evaluation of the structure functions at `x`, dense
    /// `m x m x m` with `C[alpha][beta][gamma]` at index
    /// `(alpha*m + beta)*m + gamma`. Antisymmetry in the last two indices is
    /// exact by construction.
    pub fn structure_at<R: Real>(&self, x: &[R]) -> Result<Vec<R>, AlgebroidError> {
        self.check_base_point(x)?;
        let m = self.fiber_rank;
        let mut out = vec![R::zero(); m * m * m];
        for e in &self.c_entries {
            let v = self.ctx_eval(&e.expr, x, || {
                format!("C[{}][{}][{}]", e.alpha, e.beta, e.gamma)
            })?;
            out[(e.alpha * m + e.beta) * m + e.gamma] = v;
            out[(e.alpha * m + e.gamma) * m + e.beta] = -v;
        }
        Ok(out)
    }

    /// Structure functions evaluated at `x` in the sparse `beta < gamma`
    /// form, for bilinear application.
    pub fn structure_sparse_at<R: Real>(
        &self,
        x: &[R],
    ) -> Result<EvaluatedStructure<R>, AlgebroidError> {
        self.check_base_point(x)?;
        let mut entries = Vec::with_capacity(self.c_entries.len());
        for e in &self.c_entries {
            let v = self.ctx_eval(&e.expr, x, || {
                format!("C[{}][{}][{}]", e.alpha, e.beta, e.gamma)
            })?;
            entries.push((e.alpha, e.beta, e.gamma, v));
        }
        Ok(EvaluatedStructure {
            fiber_rank: self.fiber_rank,
            entries,
        })
    }

    pub(crate) fn check_base_point<R: Real>(&self, x: &[R]) -> Result<(), AlgebroidError> {
        if x.len() != self.base_dim {
            return Err(AlgebroidError::DimensionMismatch {
                what: "base point",
                expected: self.base_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_fiber_point<R: Real>(&self, y: &[R]) -> Result<(), AlgebroidError> {
        if y.len() != self.fiber_rank {
            return Err(AlgebroidError::DimensionMismatch {
                what: "fiber point",
                expected: self.fiber_rank,
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Evaluates both structure-equation residuals at the given points.
    ///
    /// `residual1` is the compatibility of anchor and bracket, `residual2`
    /// the cyclic Jacobi sum; both use exact derivatives, so the report
    /// passes iff the data describes a Lie algebroid up to rounding at the
    /// sampled points.
    pub fn check_structure_equations<R: Real>(
        &self,
        points: &[Vec<R>],
        tol: R,
    ) -> Result<StructureReport<R>, AlgebroidError> {
        if points.is_empty() {
            return Err(AlgebroidError::NoPoints);
        }
        let n = self.base_dim;
        let m = self.fiber_rank;
        let mut per_point = Vec::with_capacity(points.len());
        let mut max1 = R::zero();
        let mut max2 = R::zero();

        for x in points {
            self.check_base_point(x)?;
            // rho values and partials d rho[i][a] / dx[j]
            let rho = self.anchor_at(x)?;
            let mut drho = vec![R::zero(); n * n * m]; // [j][i][a]
            for i in 0..n {
                for a in 0..m {
                    let expr = &self.rho[i * m + a];
                    for j in 0..n {
                        let d = expr
                            .partial(x, j)
                            .map_err(|source| AlgebroidError::Eval {
                                context: format!("d rho[{i}][{a}]/dx[{j}]"),
                                source,
                            })?;
                        drho[(j * n + i) * m + a] = d;
                    }
                }
            }
            let c = self.structure_at(x)?;
            // dC[i][nu][beta][gamma], antisymmetrized like C itself
            let mut dc = vec![R::zero(); n * m * m * m];
            for e in &self.c_entries {
                for i in 0..n {
                    let d = e
                        .expr
                        .partial(x, i)
                        .map_err(|source| AlgebroidError::Eval {
                            context: format!("d C[{}][{}][{}]/dx[{i}]", e.alpha, e.beta, e.gamma),
                            source,
                        })?;
                    dc[((i * m + e.alpha) * m + e.beta) * m + e.gamma] = d;
                    dc[((i * m + e.alpha) * m + e.gamma) * m + e.beta] = -d;
                }
            }

            let mut r1 = R::zero();
            for i in 0..n {
                for a in 0..m {
                    for b in 0..m {
                        let mut acc = R::zero();
                        for j in 0..n {
                            acc = acc + rho[j * m + a] * drho[(j * n + i) * m + b]
                                - rho[j * m + b] * drho[(j * n + i) * m + a];
                        }
                        for g in 0..m {
                            acc = acc - rho[i * m + g] * c[(g * m + a) * m + b];
                        }
                        r1 = r1.max_by_val(acc.abs());
                    }
                }
            }

            let mut r2 = R::zero();
            for nu in 0..m {
                for a in 0..m {
                    for b in 0..m {
                        for g in 0..m {
                            let mut acc = R::zero();
                            for i in 0..n {
                                acc = acc
                                    + rho[i * m + a] * dc[((i * m + nu) * m + b) * m + g]
                                    + rho[i * m + b] * dc[((i * m + nu) * m + g) * m + a]
                                    + rho[i * m + g] * dc[((i * m + nu) * m + a) * m + b];
                            }
                            for mu in 0..m {
                                acc = acc
                                    + c[(mu * m + b) * m + g] * c[(nu * m + a) * m + mu]
                                    + c[(mu * m + g) * m + a] * c[(nu * m + b) * m + mu]
                                    + c[(mu * m + a) * m + b] * c[(nu * m + g) * m + mu];
                            }
                            r2 = r2.max_by_val(acc.abs());
                        }
                    }
                }
            }

            max1 = max1.max_by_val(r1);
            max2 = max2.max_by_val(r2);
            per_point.push(PointResiduals {
                point: x.clone(),
                residual1: r1,
                residual2: r2,
            });
        }

        Ok(StructureReport {
            algebroid: self.name.clone(),
            tol,
            max_residual1: max1,
            max_residual2: max2,
            pass: max1 <= tol && max2 <= tol,
            per_point,
        })
    }
}

/// Structure functions evaluated at one base point.
#[derive(Clone, Debug)]
pub struct EvaluatedStructure<R> {
    fiber_rank: usize,
    /// `(alpha, beta, gamma, value)` with `beta < gamma`.
    entries: Vec<(usize, usize, usize, R)>,
}

impl<R: Real> EvaluatedStructure<R> {
    /// The bilinear map `(u, w) -> C(u, w)` with
    /// `C(u, w)[alpha] = C[alpha][beta][gamma] u[beta] w[gamma]`.
    /// Antisymmetry is applied entry by entry, so `C(u, u)` is exactly zero.
    pub fn apply(&self, u: &[R], w: &[R]) -> Vec<R> {
        let mut out = vec![R::zero(); self.fiber_rank];
        for &(a, b, g, v) in &self.entries {
            out[a] += v * (u[b] * w[g] - u[g] * w[b]);
        }
        out
    }

    /// The covector `z -> z C(., w)`, i.e.
    /// `out[alpha] = z[gamma] C[gamma][alpha][beta] w[beta]`.
    pub fn apply_left(&self, z: &[R], w: &[R]) -> Vec<R> {
        let mut out = vec![R::zero(); self.fiber_rank];
        for &(a, b, g, v) in &self.entries {
            // contribution of C[a][b][g] = v and C[a][g][b] = -v
            out[b] += z[a] * v * w[g];
            out[g] = out[g] - z[a] * v * w[b];
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointResiduals<R> {
    pub point: Vec<R>,
    pub residual1: R,
    pub residual2: R,
}

/// Result of [`LieAlgebroid::check_structure_equations`].
#[derive(Clone, Debug, Serialize)]
pub struct StructureReport<R> {
    pub algebroid: String,
    pub tol: R,
    pub max_residual1: R,
    pub max_residual2: R,
    pub pass: bool,
    pub per_point: Vec<PointResiduals<R>>,
}

/// Uniform sample points in `[lo, hi]^dim`.
pub fn sample_points<R: Real>(
    dim: usize,
    count: usize,
    lo: f64,
    hi: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<R>> {
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| R::from_lit(rng.random_range(lo..hi)))
                .collect()
        })
        .collect()
}

fn mat_vec<R: Real>(mat: &[R], v: &[R], rows: usize, cols: usize) -> Vec<R> {
    let mut out = vec![R::zero(); rows];
    for i in 0..rows {
        let mut acc = R::zero();
        for j in 0..cols {
            acc += mat[i * cols + j] * v[j];
        }
        out[i] = acc;
    }
    out
}

// ---------------------------------------------------------------------------
// Builtins
// ---------------------------------------------------------------------------

/// Construction parameters for the builtin algebroids.
#[derive(Clone, Debug)]
pub enum Builtin {
    /// Tangent bundle of an `n`-dimensional chart: identity anchor, zero
    /// bracket.
    Tangent(usize),
    /// A Lie algebra of rank `m`, represented over a single dummy base
    /// coordinate with zero anchor. Structure constants are given for
    /// `beta < gamma`.
    LieAlgebra {
        fiber_rank: usize,
        constants: Vec<(usize, usize, usize, f64)>,
    },
    /// so(3) with `C[alpha][beta][gamma] = epsilon[alpha][beta][gamma]`.
    So3,
    /// The transformation algebroid of so(3) acting on R^3: anchor
    /// `omega -> x cross omega`, constant structure functions epsilon.
    /// Admissible curves satisfy `d gamma/dt = gamma x omega`.
    So3R3,
    /// Tangent bundle over a ZXZ Euler-angle chart. Plain tangent algebroid;
    /// the rotation-group kinematics live in the morphism to so(3).
    EulerChartSo3,
}

/// Builds one of the builtin algebroids.
pub fn builtin(which: Builtin) -> Result<LieAlgebroid, AlgebroidError> {
    match which {
        Builtin::Tangent(n) => tangent(n, &format!("tangent({n})")),
        Builtin::LieAlgebra {
            fiber_rank,
            constants,
        } => lie_algebra(fiber_rank, &constants, &format!("lie_algebra({fiber_rank})")),
        Builtin::So3 => lie_algebra(3, &EPSILON_ENTRIES, "so3"),
        Builtin::So3R3 => LieAlgebroid::new(
            "so3_r3",
            3,
            3,
            &["0", "-x3", "x2", "x3", "0", "-x1", "-x2", "x1", "0"],
            &[(0, 1, 2, "1"), (1, 0, 2, "-1"), (2, 0, 1, "1")],
        ),
        Builtin::EulerChartSo3 => tangent(3, "euler_chart_so3"),
    }
}

/// Levi-Civita constants for `beta < gamma`.
const EPSILON_ENTRIES: [(usize, usize, usize, f64); 3] =
    [(0, 1, 2, 1.0), (1, 0, 2, -1.0), (2, 0, 1, 1.0)];

fn tangent(n: usize, name: &str) -> Result<LieAlgebroid, AlgebroidError> {
    let rho: Vec<&str> = (0..n * n)
        .map(|k| if k / n == k % n { "1" } else { "0" })
        .collect();
    LieAlgebroid::new(name, n, n, &rho, &[])
}

fn lie_algebra(
    m: usize,
    constants: &[(usize, usize, usize, f64)],
    name: &str,
) -> Result<LieAlgebroid, AlgebroidError> {
    let rho = vec!["0"; m];
    let sources: Vec<(usize, usize, usize, String)> = constants
        .iter()
        .map(|&(a, b, g, v)| (a, b, g, format!("{:?}", v)))
        .collect();
    let refs: Vec<(usize, usize, usize, &str)> = sources
        .iter()
        .map(|(a, b, g, s)| (*a, *b, *g, s.as_str()))
        .collect();
    LieAlgebroid::new(name, 1, m, &rho, &refs)
}

/// Resolves a CLI-style builtin name: `tangent(N)`, `so3`, `so3_r3` or
/// `euler_chart_so3`.
pub fn builtin_by_name(name: &str) -> Result<LieAlgebroid, AlgebroidError> {
    let trimmed = name.trim();
    if let Some(rest) = trimmed
        .strip_prefix("tangent(")
        .and_then(|r| r.strip_suffix(')'))
    {
        let n: usize = rest
            .trim()
            .parse()
            .map_err(|_| AlgebroidError::UnknownBuiltin(name.to_owned()))?;
        return builtin(Builtin::Tangent(n));
    }
    match trimmed {
        "so3" => builtin(Builtin::So3),
        "so3_r3" => builtin(Builtin::So3R3),
        "euler_chart_so3" => builtin(Builtin::EulerChartSo3),
        _ => Err(AlgebroidError::UnknownBuiltin(name.to_owned())),
    }
}

// ---------------------------------------------------------------------------
// JSON schema for custom algebroids
// ---------------------------------------------------------------------------

/// JSON form of a custom algebroid. Indices in `C` are 1-based to match the
/// `x1../y1..` naming; only `beta < gamma` entries are accepted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgebroidSchema {
    pub n: usize,
    pub m: usize,
    pub rho: Vec<Vec<String>>,
    #[serde(rename = "C", default)]
    pub c: Vec<SchemaStructureEntry>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemaStructureEntry {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub expr: String,
}

impl AlgebroidSchema {
    pub fn build(&self) -> Result<LieAlgebroid, AlgebroidError> {
        if self.rho.len() != self.n {
            return Err(AlgebroidError::DimensionMismatch {
                what: "rho rows",
                expected: self.n,
                got: self.rho.len(),
            });
        }
        let mut rho_flat = Vec::with_capacity(self.n * self.m);
        for row in &self.rho {
            if row.len() != self.m {
                return Err(AlgebroidError::DimensionMismatch {
                    what: "rho row",
                    expected: self.m,
                    got: row.len(),
                });
            }
            rho_flat.extend(row.iter().map(|s| s.as_str()));
        }
        let mut c = Vec::with_capacity(self.c.len());
        for e in &self.c {
            if e.alpha == 0 || e.beta == 0 || e.gamma == 0 {
                return Err(AlgebroidError::BadStructureEntry {
                    alpha: e.alpha,
                    beta: e.beta,
                    gamma: e.gamma,
                    reason: "indices are 1-based".into(),
                });
            }
            c.push((e.alpha - 1, e.beta - 1, e.gamma - 1, e.expr.as_str()));
        }
        let name = self.name.clone().unwrap_or_else(|| "custom".to_owned());
        LieAlgebroid::new(&name, self.n, self.m, &rho_flat, &c)
    }
}
