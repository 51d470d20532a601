//! Secure beamforming for integrated sensing and communication.

pub mod alg_an;
pub mod alg_known;
pub mod baselines;
pub mod design;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod scenario;
pub mod sdp;
pub mod validate;
