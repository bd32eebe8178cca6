pub mod diff;
pub mod error;
pub mod head;
pub mod io;
pub mod real;
pub mod synth;
pub mod train;

pub use error::{HopeError, Result};
pub use real::Real;
