//! Tactile contact-patch estimation and stability-driven stacking in simulation.
//!
//! A grasped object is pressed onto a support while a wrist force/torque
//! sensor and two marker-based tactile pads record the response. From each
//! press an estimator predicts which cells of the grasped face touch the
//! support. Estimates from several presses are fused into a world-frame
//! belief of where the support lies; the object is released once the hull of
//! confident contact contains its centre of mass, and otherwise moved toward
//! the believed support.

pub mod belief_filter;
pub mod dataset;
pub mod estimator;
pub mod geometry;
pub mod policy;
pub mod rng;
pub mod sensor_sim;
pub mod sim_env;
pub mod stability;

pub use belief_filter::{BeliefMap, GripperPose};
pub use estimator::{PatchEstimate, TrainedModel};
pub use geometry::{GridSpec, PatchMask, Point2, Shape2};
pub use sensor_sim::{ProbeObservation, SensorParams};
