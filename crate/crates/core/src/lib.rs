//! Numerical workbench for gradient Ricci shrinkers: jets of charts and their
//! curvature, weighted tensor calculus, Galerkin spectra on the Gaussian and
//! cylinder models, variations of the soliton tensor and gauge fixing.

pub mod chart_geometry;
pub mod cli_reports;
pub mod error;
pub mod gauge;
pub mod jet;
mod linalg;
pub mod model_spaces;
pub mod poly;
pub mod quadrature;
pub mod spectral;
pub mod tensor;
pub mod variation;
pub mod weighted_calculus;

pub use chart_geometry::{Chart, IdentityId, JetMode, MetricFamily, Patch, Topology, WeightFamily};
pub use error::{Error, Result};
pub use model_spaces::{make_cylinder, make_gaussian, KBasis, ModelGeometry, ModelKind, PolyVectorBasis};
pub use poly::Poly;
pub use weighted_calculus::{FieldExpr, Grid, GridField, Measure, Op, Quadrature, Rank, TensorField};
pub use variation::{CenterOfMass, JacobiDecomposition, PerturbationPath};
pub use gauge::{Cutoff, DiffeoMap, GaugeRecord, GaugeSolver, GaugeState};
pub use cli_reports::{CheckRecord, Command, ExperimentConfig, Report};
