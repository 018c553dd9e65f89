//! Occlusion-aware path planning over bird's-eye-view semantic grids.
//!
//! The pipeline runs per frame:
//!
//! 1. [`occlusion`] synthesizes ground-truth urban maps and ray-casts lidar
//!    visibility to produce occluded observations.
//! 2. [`inpaint`] fills `UNKNOWN` cells with one of several pluggable backends.
//! 3. [`skeleton`] closes the road mask, thins it and extracts a waypoint graph.
//! 4. [`planner`] runs hybrid A* over `(px, py, theta)` to the waypoint nearest
//!    the goal.
//! 5. [`metrics`] scores the processed plan against the plan on ground truth.
//!
//! [`losses`] carries the inpainting training objective as plain numerical
//! functions with analytic gradients, and [`harness`] ties everything into
//! sequence runs with CSV/JSON/SVG output.

pub mod bitmask;
pub mod grid;
pub mod harness;
pub mod inpaint;
pub mod losses;
pub mod metrics;
pub mod occlusion;
pub mod planner;
pub mod render;
pub mod skeleton;

pub use bitmask::BitMask;
pub use grid::{ClassId, Frame, GridError, SemanticGrid, VehiclePose};

/// A cell coordinate `(x, y)`; `x` is the column, `y` the row (row 0 at the top).
pub type Cell = (usize, usize);
