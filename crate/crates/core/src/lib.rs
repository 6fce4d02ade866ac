//! Misalignment-tolerant fusion of visual and thermal imagery with a
//! cross-attention GAN.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
