pub mod abstraction;
pub mod chain;
pub mod error;
pub mod gauss;
pub mod imc_analysis;
pub mod sde_moments;
pub mod simulator;
pub mod system;

pub use error::{Error, Result};
pub use nalgebra;
pub use system::PetcSystem;
