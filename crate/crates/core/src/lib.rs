pub mod coordinator;
pub mod error;
pub mod geometry;
pub mod model;
pub mod mpc;
pub mod opt;
pub mod rci;

pub use error::{Error, Result};
