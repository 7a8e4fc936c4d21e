//! Whitney-type Sobolev extension on grid-discretized domains.

pub mod error;
pub mod extension;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod local;
pub mod partition;
pub mod product;
pub mod quasicube;
pub mod sparse;
pub mod suite;
pub mod whitney;

pub use error::{Error, Result};
