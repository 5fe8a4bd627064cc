//! Numerical Lagrangian mechanics on Lie algebroids in local coordinates.
//!
//! A Lie algebroid over a chart is described by its anchor matrix
//! `rho[i][alpha](x)` and structure functions `C[alpha][beta][gamma](x)`,
//! both stored as symbolic expressions with exact derivatives. On top of that
//! the crate provides:
//!
//! - structure-equation checks for the anchor/bracket data ([`algebroid`]);
//! - discretized admissible curves, the admissible-variation map and the
//!   canonical involution ([`paths`]);
//! - Euler-Lagrange residuals, energy/momentum and a fixed-step RK4
//!   integrator for regular Lagrangians ([`dynamics`]);
//! - the action functional, deformation along variation fields, homotopy
//!   sheets and numerical stationarity certification ([`variation`]);
//! - algebroid morphisms with admissibility/morphism residuals, push-forward
//!   of paths and reduction/reconstruction checks ([`morphism`]);
//! - ready-made example systems: free particle, free rigid body, heavy top,
//!   and the Lagrange-multiplier diagnostics ([`models`]).
//!
//! Everything is generic over the working scalar through [`scalar::Real`];
//! the aliases below fix `f64`, which is what the shipped tolerances assume.

pub mod algebroid;
pub mod dynamics;
pub mod expr;
mod linalg;
pub mod models;
pub mod morphism;
pub mod paths;
pub mod scalar;
pub mod variation;

pub use algebroid::LieAlgebroid;
pub use dynamics::LagrangianSystem;
pub use expr::Expression;
pub use morphism::AlgebroidMorphism;
pub use scalar::{Jet1, Jet2, Real, Scalar};

/// Second-order jet over `f64`.
pub type Jet2F64 = Jet2<f64>;
/// First-order jet over `f64`.
pub type Jet1F64 = Jet1<f64>;
/// Discretized admissible curve over `f64`.
pub type EPathF64 = paths::EPath<f64>;
/// Section along a path over `f64`.
pub type PathSectionF64 = paths::PathSection<f64>;
/// Homotopy sheet over `f64`.
pub type HomotopySheetF64 = variation::HomotopySheet<f64>;
