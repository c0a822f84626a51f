//! The perturbation search: Adam over an unconstrained variable `z`, mapped
//! through a tanh box so every iterate is a valid perturbation of the cover.

mod adam;
mod bounds;
mod config;
mod objective;
mod search;

pub use adam::AdamState;
pub use bounds::{compute_bounds, reparameterize, reparameterize_backward, BoundBox};
pub use config::{AdamConfig, NormMode, SpsConfig, ZInit};
pub use objective::{evaluate_loss, LossBreakdown, Objective};
pub use search::{
    initial_z, search_perturbation, search_with_progress, write_trace_csv, SearchOutcome, SearchState, TraceRow,
};
