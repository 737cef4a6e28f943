//! Alternating optimization: Adam steps on the augmented loss, projection of
//! `W + U` onto the constraint set, and the dual update.

mod engine;
mod projection;
mod state;

pub use engine::{run_admm_finetune, Aborted, AdmmSchedule, FinetuneOutcome, RunResult, RunSetup};
pub(crate) use engine::{run_with, StepRule};
pub use projection::Projection;
pub use state::{
    finalize, init_admm, AdmmLayer, AdmmState, AugmentedLoss, FinalizeReport, LayerResidual,
    ResidualRecord,
};
