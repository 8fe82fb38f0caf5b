//! Early-warning estimation of the bifurcation-proximity parameter `λ` for
//! one-dimensional random maps with additive bounded noise.

pub mod dynamics;
pub mod noise;
pub mod simulate;
pub mod density;
pub mod estimator;
pub mod experiments;
pub mod io;
pub mod cli;
