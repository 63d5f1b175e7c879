//! Site energies of a two-centre tight-binding model, evaluated either by
//! diagonalization or by contour integration of the resolvent, together with
//! point-defect relaxation on truncated domains.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod contour;
pub mod defect;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod spectral;

pub use config::{Experiment, RunConfig};
pub use contour::{Contour, ContourParams, ContourShape, ContourSystem, ResolventCache};
pub use defect::{DefectReference, RelaxOptions, TruncatedProblem};
pub use error::{Error, Result};
pub use geometry::{Configuration, DisplacementField, Lattice, SiteId};
pub use model::{HamiltonianMatrix, TbModel};
pub use spectral::{Occupation, SpectralData};
