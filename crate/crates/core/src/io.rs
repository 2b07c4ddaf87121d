//! JSON input files with line and field diagnostics.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate, Controller, DelayTerm, DelaySystem, DistributedKernel, ModelError, PerturbationBounds,
};

/// Where a JSON document failed to parse or validate.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{source_name}:{line}:{column}: {field}: {message}")]
pub struct InputError {
    pub source_name: String,
    pub line: usize,
    pub column: usize,
    /// Dotted path to the offending field, `.` for the document root.
    pub field: String,
    pub message: String,
}

/// Parses `text` into `T`, locating errors by line, column and field path.
pub fn parse_json<T: DeserializeOwned>(source_name: &str, text: &str) -> Result<T, InputError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let parsed: Result<T, _> = serde_path_to_error::deserialize(&mut de);
    let fail = |path: String, e: &serde_json::Error| InputError {
        source_name: source_name.to_string(),
        line: e.line(),
        column: e.column(),
        field: path,
        message: strip_position(&e.to_string()),
    };
    let value = parsed.map_err(|e| {
        let path = e.path().to_string();
        fail(path, e.inner())
    })?;
    de.end().map_err(|e| fail(".".into(), &e))?;
    Ok(value)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// System file: the nominal system, optional delay-variation radii and an
/// optional controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub neutral: Vec<DelayTerm>,
    #[serde(default)]
    pub discrete: Vec<DelayTerm>,
    #[serde(default)]
    pub distributed: Option<DistributedKernel>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub input_delays: Vec<DelayTerm>,
    #[serde(default)]
    pub perturbation: Option<PerturbationBounds>,
    #[serde(default)]
    pub controller: Option<Controller>,
}

/// A validated system file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSystem {
    pub system: DelaySystem,
    pub perturbation: PerturbationBounds,
    pub controller: Option<Controller>,
}

impl SystemFile {
    pub fn from_parts(sys: &DelaySystem, pert: Option<&PerturbationBounds>, ctrl: Option<&Controller>) -> Self {
        let rows = |m: &crate::linalg::Mat| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Self {
            n: sys.n,
            p: sys.p,
            a: rows(&sys.a),
            neutral: sys.neutral.clone(),
            discrete: sys.discrete.clone(),
            distributed: sys.distributed.clone(),
            b: rows(&sys.b),
            input_delays: sys.input_delays.clone(),
            perturbation: pert.cloned(),
            controller: ctrl.cloned(),
        }
    }
}

/// Parses and validates a system file; model errors are located at the
/// field they name.
pub fn load_system(source_name: &str, text: &str) -> Result<LoadedSystem, InputError> {
    let file: SystemFile = parse_json(source_name, text)?;
    let at_field = |field: &str, message: String| {
        let (line, column) = locate(text, field);
        InputError {
            source_name: source_name.to_string(),
            line,
            column,
            field: field.to_string(),
            message,
        }
    };
    let model_err = |e: ModelError| {
        let field = match &e {
            ModelError::Dimension { field, .. } | ModelError::Invalid { field, .. } | ModelError::DuplicateDelay { field, .. } => {
                field.clone()
            }
        };
        at_field(&field, e.to_string())
    };
    let matrix = |name: &str, rows: &[Vec<f64>]| {
        crate::model::matrix_rows::from_rows(rows).map_err(|m| at_field(name, m))
    };
    let system = DelaySystem {
        n: file.n,
        p: file.p,
        a: matrix("A", &file.a)?,
        neutral: file.neutral,
        discrete: file.discrete,
        distributed: file.distributed,
        b: matrix("B", &file.b)?,
        input_delays: file.input_delays,
    };
    let perturbation = file.perturbation.unwrap_or_else(|| PerturbationBounds::zero(&system));
    validate(&system, &perturbation).map_err(model_err)?;
    if let Some(c) = &file.controller {
        c.check(&system).map_err(model_err)?;
    }
    Ok(LoadedSystem {
        system,
        perturbation,
        controller: file.controller,
    })
}

/// Best-effort position of the first key named by `field` (`discrete[1].delay` → `"discrete"`).
fn locate(text: &str, field: &str) -> (usize, usize) {
    let head = field
        .split(['.', '['])
        .next()
        .unwrap_or(field)
        .split('/')
        .next()
        .unwrap_or(field);
    let needle = format!("\"{head}\"");
    match text.find(&needle) {
        Some(off) => {
            let before = &text[..off];
            let line = before.matches('\n').count() + 1;
            let column = off - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            (line, column)
        }
        None => (1, 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GH: &str = r#"{
  "n": 1, "p": 1,
  "A": [[0]],
  "discrete": [{"delay": 1.0, "matrix": [[-1]]}],
  "B": [[1]],
  "perturbation": {"mu": [0.5], "one_sided": true}
}"#;

    #[test]
    fn loads_example() {
        let l = load_system("gh.json", GH).unwrap();
        assert_eq!(l.system.discrete[0].delay, 1.0);
        assert_eq!(l.perturbation.mu, vec![0.5]);
    }

    #[test]
    fn syntax_error_has_line() {
        let bad = "{\n  \"n\": 1,\n  \"p\": ,\n}";
        let e = load_system("x.json", bad).unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn type_error_names_field() {
        let bad = GH.replace("\"delay\": 1.0", "\"delay\": \"one\"");
        let e = load_system("x.json", &bad).unwrap_err();
        assert_eq!(e.field, "discrete[0].delay");
        assert_eq!(e.line, 4);
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = GH.replace("\"n\": 1", "\"n\": 1, \"bogus\": 3");
        let e = load_system("x.json", &bad).unwrap_err();
        assert!(e.message.contains("bogus"), "{}", e.message);
    }

    #[test]
    fn model_error_located() {
        let bad = GH.replace("\"mu\": [0.5]", "\"mu\": [0.5, 0.1]");
        let e = load_system("x.json", &bad).unwrap_err();
        assert_eq!(e.field, "perturbation.mu");
        assert_eq!(e.line, 6);
    }

    #[test]
    fn round_trip() {
        let l = load_system("gh.json", GH).unwrap();
        let f = SystemFile::from_parts(&l.system, Some(&l.perturbation), None);
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(load_system("rt", &text).unwrap(), l);
    }
}
