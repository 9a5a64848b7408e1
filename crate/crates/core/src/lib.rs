//! Reduced and filtered dynamics of an open quantum system driven by
//! single-photon combinations and mixtures of coherent states.

pub mod drive;
pub mod envelope;
pub mod filter;
pub mod error;
pub mod grid;
pub mod hierarchy;
pub mod operator;
pub mod oracle;
mod propagate;
pub mod quadrature;
pub mod random;
pub mod scenario;
pub mod trajectory;

pub use envelope::{AmplitudeMode, Envelope, FieldState, GammaMatrix, TAIL_EPS};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use hierarchy::{HierarchyState, Layout};
pub use operator::{Operator, SystemModel};

pub use num_complex::Complex64 as C64;
