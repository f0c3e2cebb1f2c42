//! MPI fitting: parameterization, gradient tape, Adam, and the optimization
//! loop with resumable state.

mod adam;
mod config;
pub mod objective;
mod params;
mod run;
pub mod tape;

pub use adam::{lr_schedule, Adam};
pub use config::OptimConfig;
pub use objective::{loss_and_grad, loss_only, EdgeMasks};
pub use params::{decode, denormalize, init_params, normalize_inputs, Params};
pub use run::{
    load_state, optimize, read_state, save_state, write_state, Fit, OptimState, Optimizer,
};
