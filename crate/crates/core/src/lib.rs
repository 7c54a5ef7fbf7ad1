//! Scheduling of rigid load requests on constrained continuous-time LTI
//! systems.
//!
//! Each request has a fixed profile that may only be delayed. The scheduler
//! picks the delays and a zero-order-hold control deviation by projected
//! gradient descent on either a log-barrier or an exponential soft-penalty
//! treatment of the state constraints `C x(t) <= d`.

pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod irrigation;
pub mod lti;
pub mod objectives;
pub mod problem;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
