//! Bistatic ISAC hybrid beamforming: position-error-bound analytics and joint
//! waveform design on the complex circle manifold.

pub mod array;
pub mod beamformer;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod fisher;
pub mod linalg;
pub mod manifold;
pub mod pcomp;
pub mod position;
pub mod sca;
pub mod scenario;
pub mod table;
pub mod verify;

pub use error::{Error, Result};
