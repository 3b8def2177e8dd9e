//! Egocentric full-body pose estimation under self-occlusion.

pub mod skeleton;
pub mod eval;
pub mod ik;
pub mod model;
pub mod occlusion;
pub mod synth;
pub mod training;
