//! Name-keyed registries of interchangeable strategies.
//!
//! Every family of algorithms in the crate (potential models, force kernels,
//! integrators, transport-distance estimators, observers) is exposed as a
//! trait object built from a [`Registry`] by name plus a flat parameter map,
//! so the harness can select variants from configuration at runtime.

use std::collections::BTreeMap;

use crate::error::{KclError, Result};

/// Flat numeric parameters passed to strategy constructors.
pub type Params = BTreeMap<String, f64>;

type Factory<T> = Box<dyn Fn(&Params) -> Result<Box<T>> + Send + Sync>;

struct Entry<T: ?Sized> {
    keys: &'static [&'static str],
    factory: Factory<T>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Entry<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`; `keys` lists the parameters it accepts.
    pub fn register<F>(&mut self, name: &'static str, keys: &'static [&'static str], factory: F)
    where
        F: Fn(&Params) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(
            name,
            Entry {
                keys,
                factory: Box::new(factory),
            },
        );
    }

    pub fn create(&self, name: &str, params: &Params) -> Result<Box<T>> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| KclError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })?;
        if let Some(bad) = params.keys().find(|k| !entry.keys.contains(&k.as_str())) {
            return Err(KclError::invalid(
                format!("{}.{}", name, bad),
                format!("unknown parameter (accepted: {})", entry.keys.join(", ")),
            ));
        }
        (entry.factory)(params)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

/// Reads an optional parameter with a default.
pub fn param_or(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Reads a required parameter.
pub fn param(params: &Params, key: &str) -> Result<f64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| KclError::invalid(key, "missing parameter"))
}

pub fn positive(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(KclError::invalid(
            name,
            format!("must be positive and finite, got {value}"),
        ))
    }
}
