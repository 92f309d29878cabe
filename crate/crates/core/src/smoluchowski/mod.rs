//! Coagulation–diffusion solver on a periodic box with a geometric mass grid.

mod coag;
mod grid;
mod monitor;
mod oracle;
mod semigroup;
mod solver;

pub use coag::{coag_gain, coag_loss, CoagTable};
pub use grid::{MassField, MassGrid, Overflow, SignedMassField, SolverGrid, Torus};
pub use monitor::{measure_inequality_constant, moment_monitor, MomentReport, MomentRow};
pub use oracle::{homogeneous_oracle, OracleTrajectory};
pub use semigroup::{apply_drift_semigroup, apply_heat_semigroup, SpectralOperator};
pub use solver::{
    linearized_solve, picard_solve, strang_step, suggested_horizon, InitialCondition,
    PicardOutcome, SignedPath, SolutionPath, Solver, SolverConfig, StepReport,
};
