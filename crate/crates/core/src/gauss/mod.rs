//! Gaussian box probabilities and their optimization over boxes.

pub mod mvn;
pub mod normal;
pub mod optimize;
pub mod rect;

pub use mvn::{mvn_rect_prob, FixedIntegrator, MvnConfig, MvnEstimate};
pub use optimize::{max_over_box, min_over_box, AscentConfig, BoxExtremum, BoxProblem, RectProbObjective};
pub use rect::{rect_diff, Hyperrect};
