//! Exact continuous-time response machinery for piecewise-constant inputs.

mod basis;
mod expm;
mod model;
pub mod oracle;
mod propagate;
mod signal;

pub use basis::{BasisResponses, ForcedResponse, LoadProfile, Phase};
pub use expm::matrix_exponential;
pub use model::StateSpaceModel;
pub use propagate::{propagate_segment, Propagator, PropagatorCache};
pub use signal::PiecewiseSignal;
