//! Gaussian-process emulation for simulators with time-series output.
//!
//! The crate is organised around the stages of building and coupling
//! emulators:
//!
//! - [`design`]: input domains and space-filling designs.
//! - [`gp`]: univariate GP emulator with constant/linear trend and a
//!   squared-exponential kernel, fitted by maximising the integrated
//!   posterior of the lengthscales.
//! - [`basis`]: principal-component basis for multivariate ensembles.
//! - [`mvem`]: multivariate emulator (basis + one GP per coefficient) and
//!   cross-validation.
//! - [`linked`]: feed-forward networks of emulators with closed-form moment
//!   propagation and a Monte Carlo reference.
//! - [`sim`]: the heat-demand and energy-cost simulators used as the case
//!   study.

pub mod basis;
pub mod design;
pub mod error;
pub mod gp;
pub mod io;
pub mod linked;
pub mod mvem;
pub mod sim;

pub use basis::{Ensemble, GaussianVector, PcBasis, Truncation};
pub use design::{DesignMatrix, Dimension, Domain};
pub use error::{Error, Result};
pub use gp::{FitOptions, GpModel, KernelSpec, Prediction, TrendKind};
pub use linked::{LinkedNetwork, LinkedPrediction, McEstimate, Wire};
pub use mvem::{MvEmulator, MvOptions, MvPrediction, ValidationReport};
