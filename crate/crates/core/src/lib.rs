//! Property-driven coarsening of population continuous-time Markov chains.
pub mod cluster;
pub mod coarse;
pub mod embed;
pub mod exec;
pub mod expr;
pub mod gp;
pub mod mitl;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod smc;
