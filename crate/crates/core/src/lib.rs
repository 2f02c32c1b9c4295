//! Filtering of partially observed stochastic reaction networks.

pub mod ffsp;
pub mod grid;
pub mod model;
pub mod network;
pub mod rng;
pub mod ssa;
pub mod particle;
pub mod projection;
pub mod filters;
