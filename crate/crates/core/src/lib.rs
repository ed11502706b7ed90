pub mod ai4csi;
pub mod channel;
pub mod error;
pub mod evaluate;
pub mod hash;
pub mod legacy;
pub mod numerics;
pub mod pilots;
pub mod quantizer;

pub use error::{Error, Result};
