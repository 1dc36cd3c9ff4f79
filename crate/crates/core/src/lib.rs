//! Two-view geometry under dynamic motion, a dynamics-aware masked attention
//! aggregator with hand-derived gradients, multi-task losses and the
//! trajectory, depth and point-cloud evaluation metrics.

pub mod geometry;
pub mod rng;
pub mod scene_sim;
pub mod pose;
pub mod aggregator;
pub mod losses;
pub mod metrics;
