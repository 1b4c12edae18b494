//! Specification and behavior-space model.
//!
//! Everything here is immutable after validation and free of I/O, apart from
//! the JSON document helpers at the bottom.

mod paths;
mod types;
mod validate;

use std::path::Path as FsPath;

pub use paths::{
    enumerate_free_form_paths, find_cycle, DependencyClosure, PathSpaceError, MAX_ENUMERATED_AGENTS,
};
pub use types::*;
pub use validate::{
    validate_behavior_space, validate_specification, SchemaError, SchemaErrorKind, Strictness,
    Validated, ValidationResult,
};

/// Reads and validates `specification.json`.
pub fn load_specification(
    path: &FsPath,
    strictness: Strictness,
) -> Result<Validated<Specification>, LoadError> {
    let doc = read_json(path)?;
    validate_specification(&doc, strictness).map_err(|errors| LoadError::Invalid {
        path: path.display().to_string(),
        errors,
    })
}

/// Reads and validates `behavior_space.json` against the agents of `spec`.
pub fn load_behavior_space(
    path: &FsPath,
    spec: &Specification,
    strictness: Strictness,
) -> Result<Validated<BehaviorSpace>, LoadError> {
    let doc = read_json(path)?;
    validate_behavior_space(&doc, &spec.agent_ids(), strictness).map_err(|errors| {
        LoadError::Invalid {
            path: path.display().to_string(),
            errors,
        }
    })
}

fn read_json(path: &FsPath) -> Result<serde_json::Value, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| LoadError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} is not valid JSON: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path} failed validation: {}", join_errors(.errors))]
    Invalid {
        path: String,
        errors: Vec<SchemaError>,
    },
}

fn join_errors(errors: &[SchemaError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
