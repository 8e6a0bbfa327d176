//! Planar non-prehensile manipulation planning with a single fingertip.
//!
//! The crate simulates a fingertip pushing a rigid object among static
//! obstacles, derives candidate object motions from a spectral analysis of
//! the contact dynamics at sampled grasps, and grows a tree of pushed
//! trajectories toward a goal region.

pub mod dynamics;
pub mod geometry;
pub mod invdyn;
pub mod planner;
pub mod reachset;
pub mod scenario;

pub use geometry::{Pose2, Shape, Vec2};
