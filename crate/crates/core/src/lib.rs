//! Solver for second-order mean field games in which agents interact through
//! their controls: the coupling enters the Hamiltonian through a kernel
//! average of the optimal drifts, so the forward-backward system carries a
//! nonlocal vector unknown V alongside (u, m).
//!
//! The discretization is a monotone upwind finite-difference scheme on a
//! rectangular space-time grid. A backward implicit sweep solves the HJB
//! levels by damped-free Newton steps, the forward Fokker-Planck sweep uses
//! the transposed step matrices (which conserves mass and preserves
//! positivity exactly), and the drift fixed point is relaxed by kernel
//! sweeps. The remaining unknowns (right-hand side f and drift V at every
//! level) satisfy a fixed-point system solved by an outer Newton method whose
//! Jacobian is only available as a matrix-vector product; inner solves use
//! BiCGStab. Continuation in viscosity, in the interaction parameters, in an
//! initial-condition perturbation, or from a coarser grid provides the warm
//! starts that make the harder regimes reachable.

pub mod drift;
pub mod fp;
pub mod grid;
pub mod hjb;
pub mod linalg;
pub mod numham;
pub mod outer;
pub mod scenarios;

pub use grid::{ScalarField, SpaceTimeGrid, VectorField};
pub use numham::HamiltonianParams;
pub use outer::{
    ContinuationSchedule, DiscreteProblem, OuterConfig, OuterState, SolveReport, Stage,
};
pub use scenarios::ScenarioConfig;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("singular matrix: zero pivot at index {pivot_index}")]
    SingularMatrix { pivot_index: usize },
    #[error("BiCGStab breakdown after restart at iteration {iters}")]
    KrylovBreakdown { iters: usize },
    #[error("HJB Newton did not reach tolerance: residual {residual:.3e} after {iters} iterations")]
    HjbNewtonStalled { residual: f64, iters: usize },
    #[error("outer Newton diverged: residual grew for {window} consecutive steps (last {residual:.3e})")]
    OuterDiverged { residual: f64, window: usize },
    #[error("outer Newton hit the iteration cap: residual {residual:.3e} after {iters} iterations")]
    OuterStalled { residual: f64, iters: usize },
    #[error("continuation stage '{stage}' failed: {source}")]
    StageFailed {
        stage: String,
        #[source]
        source: Box<SolverError>,
    },
    #[error("stationary cycle did not settle: time variation {variation:.3e} after {cycles} cycles")]
    StationaryStalled { variation: f64, cycles: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}
