//! Convex inner subproblem of the penalty-based surface design.

pub(crate) mod ipm;
mod model;
mod surrogates;

pub use ipm::SolveStatus;
pub(crate) use model::restore_feasibility;
pub use model::{assemble, solve, AnchorPoint, ModeMask, SubproblemModel, SubproblemOptions, SubproblemSolution};
pub use surrogates::{
    penalty, surrogate_f0, surrogate_f1, surrogate_f2, surrogate_f3, surrogate_f4, MinorantForm,
};
