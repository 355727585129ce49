//! Core logic for the sentinel surveillance robot system.
//!
//! Everything in this crate is transport-agnostic: the simulated world the
//! robot lives in, the background-subtraction motion detector, the secure
//! envelope protocol spoken between robot and server, and the robot's
//! operating state machine with its store-and-forward journal.

pub mod agent;
pub mod messages;
pub mod secure;
pub mod vision;
pub mod world;

pub use vision::Frame;
pub use world::{Heading, MoveDir, RobotPose, WorldGrid};
