#![allow(dead_code)]

pub mod gen;
pub mod mitl_oracle;

use coarseqest::model::{parse_model, ReactionNetwork};

pub const SIRS_MODEL: &str = include_str!("../../../../sirs.model");

pub fn sirs() -> ReactionNetwork {
    parse_model(SIRS_MODEL).unwrap()
}

/// The shipped SIRS model with a different population size.
pub fn sirs_with_population(n: u32) -> ReactionNetwork {
    let text = SIRS_MODEL.replace("population = 100", &format!("population = {n}"));
    parse_model(&text).unwrap()
}
