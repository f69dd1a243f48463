//! JSON problem files.
//!
//! ```json
//! {
//!   "name": "circle",
//!   "dim": 2,
//!   "function": "(x1^2 + x2^2 - 4)^2",
//!   "mode": "euclidean",
//!   "zero_set": [
//!     { "kind": "chart", "param": ["2*cos(t1)", "2*sin(t1)"],
//!       "param_domain": [[0, 6.283185307179586]], "d0": 1 }
//!   ],
//!   "grid": "x1:-3:3:101,x2:-3:3:101"
//! }
//! ```
//!
//! In manifold mode (`"mode": {"manifold": "sphere2"}`) the function is
//! written in ambient coordinates, every component names the chart it is
//! written in (`"atlas_chart": "north"`) and uses that chart's coordinates,
//! and `grid` is the chart-coordinate grid shared by all charts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprFunction, ParseError};
use crate::geometry::{Chart, GeometryError, ZeroComponent, ZeroSetDescription};
use crate::grid::GridSpec;
use crate::manifold::{Atlas, ManifoldError};
use crate::tolerances::Tolerances;

/// Zero samples per component for the NHC check.
pub const DEFAULT_NHC_SAMPLES: usize = 32;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Euclidean,
    Manifold(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentSpec {
    Point {
        location: Vec<f64>,
        #[serde(default)]
        atlas_chart: Option<String>,
    },
    Chart {
        param: Vec<String>,
        param_domain: Vec<(f64, f64)>,
        d0: usize,
        #[serde(default = "default_regularity")]
        declared_regularity: u32,
        #[serde(default)]
        atlas_chart: Option<String>,
    },
}

fn default_regularity() -> u32 {
    2
}

fn default_nhc_samples() -> usize {
    DEFAULT_NHC_SAMPLES
}

impl ComponentSpec {
    fn atlas_chart(&self) -> Option<&str> {
        match self {
            ComponentSpec::Point { atlas_chart, .. } | ComponentSpec::Chart { atlas_chart, .. } => {
                atlas_chart.as_deref()
            }
        }
    }

    fn build(&self, field: &str, dim: usize) -> Result<ZeroComponent, ConfigError> {
        match self {
            ComponentSpec::Point { location, .. } => {
                if location.len() != dim {
                    return Err(invalid(
                        format!("{field}.location"),
                        format!("has {} coordinates, expected {dim}", location.len()),
                    ));
                }
                Ok(ZeroComponent::Point(location.clone()))
            }
            ComponentSpec::Chart {
                param,
                param_domain,
                d0,
                declared_regularity,
                ..
            } => {
                if *d0 == 0 || *d0 >= dim {
                    return Err(invalid(format!("{field}.d0"), format!("must satisfy 1 <= d0 < {dim}")));
                }
                if param_domain.len() != *d0 {
                    return Err(invalid(
                        format!("{field}.param_domain"),
                        format!("needs {d0} intervals, got {}", param_domain.len()),
                    ));
                }
                if param.len() != dim {
                    return Err(invalid(
                        format!("{field}.param"),
                        format!("needs {dim} coordinate expressions, got {}", param.len()),
                    ));
                }
                let coords = param
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        ExprFunction::parse_with_prefix(s, *d0, 't')
                            .map_err(|e| invalid(format!("{field}.param[{i}]"), e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let chart = Chart::new(coords, param_domain.clone(), *declared_regularity)
                    .map_err(|e: GeometryError| invalid(field, e.to_string()))?;
                Ok(ZeroComponent::Chart(chart))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dim: usize,
    pub function: String,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub zero_set: Vec<ComponentSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub grid: GridSpec,
    #[serde(default = "default_nhc_samples")]
    pub nhc_samples: usize,
}

fn default_mode() -> Mode {
    Mode::Euclidean
}

/// A validated problem ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub f: ExprFunction,
    pub tol: Tolerances,
    pub grid: GridSpec,
    pub nhc_samples: usize,
    pub kind: ProblemKind,
}

#[derive(Debug, Clone)]
pub enum ProblemKind {
    Euclidean(ZeroSetDescription),
    Manifold {
        atlas: Atlas,
        /// Zero set of chart `c` in its own coordinates.
        zero_sets: Vec<ZeroSetDescription>,
    },
}

impl ProblemConfig {
    pub fn from_json(text: &str, path: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::from_json(&text, &shown)
    }

    pub fn build(&self) -> Result<Problem, ConfigError> {
        if self.dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        let f = ExprFunction::parse(&self.function, self.dim)
            .map_err(|e: ParseError| invalid("function", e.to_string()))?;
        self.tolerances
            .validate()
            .map_err(|m| invalid("tolerances", m))?;
        if self.nhc_samples == 0 {
            return Err(invalid("nhc_samples", "must be positive"));
        }
        if self.zero_set.is_empty() {
            return Err(invalid("zero_set", "needs at least one component"));
        }
        let kind = match &self.mode {
            Mode::Euclidean => {
                if self.grid.dim() != self.dim {
                    return Err(invalid("grid", format!("has {} axes, expected {}", self.grid.dim(), self.dim)));
                }
                let comps = self
                    .zero_set
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        if c.atlas_chart().is_some() {
                            return Err(invalid(format!("zero_set[{i}].atlas_chart"), "only allowed in manifold mode"));
                        }
                        c.build(&format!("zero_set[{i}]"), self.dim)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let zs = ZeroSetDescription::new(self.dim, comps).map_err(|e| invalid("zero_set", e.to_string()))?;
                ProblemKind::Euclidean(zs)
            }
            Mode::Manifold(name) => {
                let atlas = Atlas::by_name(name).map_err(|e: ManifoldError| invalid("mode", e.to_string()))?;
                if atlas.ambient_dim != self.dim {
                    return Err(invalid(
                        "dim",
                        format!("atlas {name} lives in dimension {}", atlas.ambient_dim),
                    ));
                }
                let m = atlas.manifold_dim;
                if self.grid.dim() != m {
                    return Err(invalid("grid", format!("chart grid needs {m} axes")));
                }
                let mut per_chart: Vec<Vec<ZeroComponent>> = vec![Vec::new(); atlas.charts.len()];
                for (i, c) in self.zero_set.iter().enumerate() {
                    let field = format!("zero_set[{i}]");
                    let chart = c
                        .atlas_chart()
                        .ok_or_else(|| invalid(format!("{field}.atlas_chart"), "required in manifold mode"))?;
                    let idx = atlas.chart_index(chart).ok_or_else(|| {
                        invalid(format!("{field}.atlas_chart"), format!("atlas {name} has no chart `{chart}`"))
                    })?;
                    per_chart[idx].push(c.build(&field, m)?);
                }
                let zero_sets = per_chart
                    .into_iter()
                    .enumerate()
                    .map(|(c, comps)| {
                        ZeroSetDescription::new(m, comps)
                            .map_err(|e| invalid("zero_set", format!("chart {}: {e}", atlas.charts[c].name)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ProblemKind::Manifold { atlas, zero_sets }
            }
        };
        Ok(Problem {
            name: self.name.clone().unwrap_or_else(|| "problem".to_string()),
            f,
            tol: self.tolerances,
            grid: self.grid.clone(),
            nhc_samples: self.nhc_samples,
            kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CIRCLE: &str = r#"{
        "name": "circle",
        "dim": 2,
        "function": "(x1^2 + x2^2 - 4)^2",
        "zero_set": [
            {"kind": "chart", "param": ["2*cos(t1)", "2*sin(t1)"],
             "param_domain": [[0, 6.283185307179586]], "d0": 1}
        ],
        "tolerances": {"seed": 7},
        "grid": "x1:-3:3:101,x2:-3:3:101"
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ProblemConfig::from_json(CIRCLE, "circle.json").unwrap();
        assert_eq!(cfg.mode, Mode::Euclidean);
        assert_eq!(cfg.tolerances.seed, 7);
        assert_eq!(cfg.tolerances.r0, 1.0);
        let p = cfg.build().unwrap();
        assert_eq!(p.nhc_samples, DEFAULT_NHC_SAMPLES);
        match p.kind {
            ProblemKind::Euclidean(zs) => assert_eq!(zs.components[0].d0(), 1),
            _ => panic!("expected euclidean"),
        }
    }

    #[test]
    fn unknown_field_reports_location() {
        let text = CIRCLE.replace("\"name\"", "\"nmae\"");
        let err = ProblemConfig::from_json(&text, "x.json").unwrap_err().to_string();
        assert!(err.contains("nmae") && err.contains("line"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        let cases = [
            CIRCLE.replace("\"d0\": 1", "\"d0\": 2"),
            CIRCLE.replace("x2^2 - 4", "x3^2 - 4"),
            CIRCLE.replace("{\"seed\": 7}", "{\"r0\": -1}"),
            CIRCLE.replace("x1:-3:3:101,x2:-3:3:101", "x1:-3:3:101"),
        ];
        for text in cases {
            let cfg = ProblemConfig::from_json(&text, "x.json").unwrap();
            assert!(matches!(cfg.build(), Err(ConfigError::Invalid { .. })), "{text}");
        }
    }

    #[test]
    fn manifold_mode_groups_by_chart() {
        let text = r#"{
            "dim": 3,
            "function": "x2^2",
            "mode": {"manifold": "sphere2"},
            "zero_set": [
                {"kind": "chart", "param": ["t1", "0"], "param_domain": [[-2.5, 2.5]], "d0": 1, "atlas_chart": "north"},
                {"kind": "chart", "param": ["t1", "0"], "param_domain": [[-2.5, 2.5]], "d0": 1, "atlas_chart": "south"}
            ],
            "grid": "x1:-2:2:41,x2:-2:2:41"
        }"#;
        let p = ProblemConfig::from_json(text, "f5.json").unwrap().build().unwrap();
        match p.kind {
            ProblemKind::Manifold { atlas, zero_sets } => {
                assert_eq!(atlas.name, "sphere2");
                assert_eq!(zero_sets.len(), 2);
            }
            _ => panic!("expected manifold"),
        }
    }
}
