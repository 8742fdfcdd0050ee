//! Simulator and autonomy stack for a beach microplastics survey robot: an
//! eye-in-hand arm that servos a NIR probe onto millimetre particles and
//! classifies their spectra.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod classifier;
pub mod experiments;
pub mod kinematics;
pub mod mailbox;
pub mod mission;
pub mod segmentation;
pub mod servo;
pub mod sim;
pub mod spectra;
