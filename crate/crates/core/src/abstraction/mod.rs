//! Interval Markov chain abstraction of the sampling behaviour over a grid partition.

pub mod bounds;
pub mod imc;
pub mod partition;

pub use bounds::{abs_bounds, phi_box, tau_bounds, trans_bounds_regular, AbstractionConfig, Abstractor};
pub use imc::{build_imc, Imc, ImcMetadata, SystemRecord};
pub use partition::{build_partition, Partition};
