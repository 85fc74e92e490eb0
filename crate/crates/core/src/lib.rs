mod codec;
pub mod augment;
pub mod error;
pub mod grappa;
pub mod harness;
pub mod net;
pub mod num;
pub mod par;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use rng::Rng;
