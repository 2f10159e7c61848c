//! Sparse identification of reaction networks and other polynomial or
//! rational ODE systems from multi-environment time-course data.

pub mod aim;
pub mod data;
pub mod error;
pub mod estimate;
pub mod field;
pub mod harness;
pub mod ode;
pub mod optim;
pub mod scales;
pub mod smooth;

pub use data::{Dataset, Environment};
pub use error::{Error, Result, SolveError};
pub use field::{
    enumerate_search_space, eval_field, jacobian_theta, jacobian_x, Family, FieldKind, FieldSpec,
    IntMatrix, SearchSpace, Stoichiometry,
};
pub use ode::{solve_ivp, solve_sensitivities, SensitivityOptions, SolveConfig, Trajectory};
pub use scales::{apply_environment, InterventionScales};
