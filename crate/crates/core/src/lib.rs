//! Numerical toolkit for the degenerate wave equation
//! `y_tt - div(|x|^α ∇y) = 0` on planar domains whose boundary passes
//! through the degenerate point at the origin.

pub mod experiment;
pub mod geometry;
pub mod mesh;
pub mod observability;
pub mod quadrature;
pub mod riemann_multiplier;
pub mod shape_design;
pub mod sparse;
pub mod spectral;
pub mod wave_solver;
pub mod weighted_assembly;
