//! Model description documents (TOML).
//!
//! ```toml
//! species = ["S", "I", "R"]
//! population = 100
//!
//! [parameters]
//! beta = 0.01
//!
//! [[reactions]]
//! name = "recovery"
//! reactants = { I = 1 }
//! products = { R = 1 }
//! rate = "beta"          # number or expression over parameters
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{ModelError, Reaction, ReactionNetwork};
use crate::expr::{parse_expr, Scope};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    species: Vec<String>,
    population: Option<u32>,
    #[serde(default)]
    bounds: BTreeMap<String, u32>,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    #[serde(default)]
    reactions: Vec<RawReaction>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReaction {
    name: String,
    #[serde(default)]
    reactants: BTreeMap<String, u32>,
    #[serde(default)]
    products: BTreeMap<String, u32>,
    rate: RawRate,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRate {
    Number(f64),
    Expr(String),
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |p| offset - p - 1) + 1;
    (line, column)
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<ReactionNetwork, ModelError> {
    let raw: RawModel = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ModelError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let d = raw.species.len();
    let index = |name: &str| -> Result<usize, ModelError> {
        raw.species
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| ModelError::UnknownSpecies(name.to_string()))
    };
    let mut scope = Scope {
        constants: raw.parameters.clone(),
        ..Scope::default()
    };
    if let Some(n) = raw.population {
        scope.constants.entry("N".into()).or_insert(f64::from(n));
    }

    let mut reactions = Vec::with_capacity(raw.reactions.len());
    for r in &raw.reactions {
        let mut reactants = vec![0u32; d];
        let mut products = vec![0u32; d];
        for (name, &c) in &r.reactants {
            reactants[index(name)?] += c;
        }
        for (name, &c) in &r.products {
            products[index(name)?] += c;
        }
        let rate_constant = match &r.rate {
            RawRate::Number(v) => *v,
            RawRate::Expr(s) => parse_expr(s, &scope)
                .map_err(|e| ModelError::BadRate {
                    reaction: r.name.clone(),
                    message: e.to_string(),
                })?
                .constant_value()
                .ok_or_else(|| ModelError::BadRate {
                    reaction: r.name.clone(),
                    message: "rate must not depend on species".into(),
                })?,
        };
        reactions.push(Reaction {
            name: r.name.clone(),
            reactants,
            products,
            rate_constant,
        });
    }

    let mut net = ReactionNetwork::new(raw.species.clone(), reactions, raw.population)?;
    if !raw.bounds.is_empty() {
        let mut b = vec![raw.population.unwrap_or(u32::MAX); d];
        for (name, &cap) in &raw.bounds {
            b[index(name)?] = cap;
        }
        if raw.population.is_none() && raw.bounds.len() < d {
            return Err(ModelError::UnboundedStateSpace);
        }
        net = net.with_bounds(b)?;
    }
    Ok(net)
}
