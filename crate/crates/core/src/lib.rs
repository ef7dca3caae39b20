//! Numerical laboratory for metric regularity of optimality mappings.
//!
//! Optimality systems of nonlinear programs, Mayer-type and control-affine
//! optimal control problems, and a one-dimensional semilinear parabolic
//! control problem are written as generalized equations, solved, perturbed,
//! and their strong (Hölder) sub-regularity constants fitted empirically.

pub mod affine;
pub mod conemin;
pub mod geneq;
pub mod linalg;
pub mod nlp;
pub mod parabolic;
pub mod rng;
pub mod grid;
pub mod mayer;
pub mod problems;
