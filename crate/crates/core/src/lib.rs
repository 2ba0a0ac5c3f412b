//! Discretization of the regional fractional Laplacian on uniform grids.
//!
//! The crate assembles the regional Gagliardo form
//! `∬_{Ω×Ω} (u(x)-u(y))² / |x-y|^{n+2σ}` for multilinear nodal functions on
//! grid-represented domains, computes the first Dirichlet eigenpair, and
//! runs Rayleigh–Faber–Krahn type shape optimizers on top of it. Companion
//! modules evaluate the fractional Hardy constant, check the Hardy and norm
//! equivalence inequalities on discrete functions, and experiment with the
//! symmetric decreasing rearrangement.

pub mod cli;
pub mod error;
pub mod gagliardo;
pub mod geometry;
pub mod hardy;
pub mod hull;
pub mod io;
pub mod quadrature;
pub mod rearrangement;
pub mod shape_opt;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
pub use gagliardo::{NearTable, RegionalForm};
pub use geometry::{DirectionSet, DomainMask, GridSpec, Shape};
pub use spectral::{EigenOptions, EigenResult, MassMatrix};
