//! Energy-stable solver for a two-phase Cahn-Hilliard system with a soluble
//! surfactant, coupled to Darcy-Forchheimer flow in a rectangle.
//!
//! Fields live on a cell-centred grid; all spatial operators are exact spectral
//! operators in cosine (scalars) and mixed sine/cosine (velocity) bases.

pub mod config;
pub mod darcy;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod grid;
pub mod initial;
pub mod krylov;
pub mod model;
pub mod snapshot;
pub mod step;

pub use error::{Error, Result};
pub use grid::{Basis, Grid2D, ScalarField, SpectralCoeffs, VectorField};
pub use model::ModelParams;
pub use step::{ChemicalPotentials, SolverTolerances, State, StepReport};
