pub mod eigen;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod kernels;
mod linalg;
pub mod mige;
pub mod oracles;
pub mod projection;
pub mod sample;
pub mod ssge;
