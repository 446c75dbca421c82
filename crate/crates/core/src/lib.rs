pub mod complex_serde;
pub mod error;
pub mod fock;
pub mod liouvillian;
pub mod metrology;
pub mod steady;
pub mod sweep;
pub mod counting;

pub use error::{Error, Result};
