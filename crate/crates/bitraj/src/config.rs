//! JSON run configuration: systems, observables, schedules, experiments.
//!
//! Matrices are written as {"re": [[…]], "im": [[…]]} with the imaginary
//! part optional. Validation reports the JSON path of the offending field.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::composite::{compose, CompositeSystem};
use crate::error::{Error, Result};
use crate::numeric::{c, CMatrix};
use crate::system::{
    coarse_grain, observable_from_matrix, InitializationEvent, MeasurementSchedule, Observable,
    QuantumSystem, Resolution,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixSpec {
    fn build(&self, path: &str, dim: usize) -> Result<CMatrix> {
        let rows = self.re.len();
        if rows != dim || self.re.iter().any(|r| r.len() != dim) {
            return Err(Error::SchemaError {
                path: format!("{path}.re"),
                message: format!("expected a {dim}x{dim} matrix"),
            });
        }
        if let Some(im) = &self.im {
            if im.len() != dim || im.iter().any(|r| r.len() != dim) {
                return Err(Error::SchemaError {
                    path: format!("{path}.im"),
                    message: format!("expected a {dim}x{dim} matrix"),
                });
            }
        }
        let mut m = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let im = self.im.as_ref().map(|r| r[i][j]).unwrap_or(0.0);
                m[(i, j)] = c(self.re[i][j], im);
                if !m[(i, j)].re.is_finite() || !m[(i, j)].im.is_finite() {
                    return Err(Error::SchemaError {
                        path: format!("{path}[{i}][{j}]"),
                        message: "non-finite entry".into(),
                    });
                }
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub dim: usize,
    pub hamiltonian: MatrixSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub name: String,
    #[serde(default)]
    pub outcomes: Option<Vec<f64>>,
    #[serde(default)]
    pub projectors: Option<Vec<MatrixSpec>>,
    #[serde(default)]
    pub matrix: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub label: f64,
    pub members: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionSpec {
    pub name: String,
    pub parent: String,
    pub cells: Vec<CellSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub observable: String,
    pub outcome: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub time: f64,
    pub weights: Vec<WeightSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub time: f64,
    pub observable: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub name: String,
    pub entries: Vec<EntrySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeSpec {
    pub system_b: SystemSpec,
    pub coupling: f64,
    pub v_a: MatrixSpec,
    pub v_b: MatrixSpec,
    /// environment state ρ̂_B
    pub environment: MatrixSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub schedule: Option<String>,
    #[serde(default)]
    pub position: Option<usize>,
    #[serde(default)]
    pub resolution: Option<String>,
    #[serde(default)]
    pub observable: Option<String>,
    #[serde(default)]
    pub observable_b: Option<String>,
    #[serde(default)]
    pub outcome: Option<f64>,
    #[serde(default)]
    pub total_time: Option<f64>,
    #[serde(default)]
    pub time: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub grids: Option<Vec<usize>>,
    #[serde(default)]
    pub f_plus: Option<Vec<f64>>,
    #[serde(default)]
    pub f_minus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSpec {
    #[serde(default = "default_equality")]
    pub equality: f64,
    #[serde(default = "default_psd")]
    pub psd: f64,
}

fn default_equality() -> f64 {
    1e-10
}

fn default_psd() -> f64 {
    1e-10
}

impl Default for TolerancesSpec {
    fn default() -> Self {
        Self { equality: default_equality(), psd: default_psd() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub observables: Vec<ObservableSpec>,
    #[serde(default)]
    pub resolutions: Vec<ResolutionSpec>,
    pub initialization: InitSpec,
    #[serde(default)]
    pub schedules: Vec<ScheduleSpec>,
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
    #[serde(default)]
    pub composite: Option<CompositeSpec>,
    #[serde(default)]
    pub tolerances: TolerancesSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

/// A parsed and cross-validated configuration with every referenced object
/// built.
#[derive(Debug)]
pub struct LoadedConfig {
    pub system: QuantumSystem,
    pub observables: BTreeMap<String, Observable>,
    pub resolutions: BTreeMap<String, Resolution>,
    pub init: InitializationEvent,
    pub schedules: BTreeMap<String, MeasurementSchedule>,
    pub schedule_order: Vec<String>,
    pub experiments: Vec<ExperimentSpec>,
    pub composite: Option<(CompositeSystem, CMatrix)>,
    pub tol_equality: f64,
    pub tol_psd: f64,
    pub seed: u64,
}

/// Parse a UTF-8 JSON document into a validated configuration.
pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let raw: RunConfig = serde_json::from_str(text).map_err(|e| Error::SchemaError {
        path: "$".into(),
        message: e.to_string(),
    })?;
    build_config(raw)
}

fn schema_err(path: impl Into<String>, err: Error) -> Error {
    Error::SchemaError { path: path.into(), message: err.to_string() }
}

fn build_config(raw: RunConfig) -> Result<LoadedConfig> {
    let dim = raw.system.dim;
    if dim < 2 {
        return Err(Error::SchemaError {
            path: "system.dim".into(),
            message: format!("dimension must be at least 2, got {dim}"),
        });
    }
    let h = raw.system.hamiltonian.build("system.hamiltonian", dim)?;
    let system =
        QuantumSystem::new(h).map_err(|e| schema_err("system.hamiltonian", e))?;

    let mut observables = BTreeMap::new();
    for (i, spec) in raw.observables.iter().enumerate() {
        let path = format!("observables[{i}]");
        let obs = match (&spec.projectors, &spec.matrix) {
            (Some(projs), None) => {
                let outcomes = spec.outcomes.clone().ok_or_else(|| Error::SchemaError {
                    path: format!("{path}.outcomes"),
                    message: "explicit projectors need an outcomes list".into(),
                })?;
                if outcomes.len() != projs.len() {
                    return Err(Error::SchemaError {
                        path: format!("{path}.projectors"),
                        message: format!(
                            "{} outcomes vs {} projectors",
                            outcomes.len(),
                            projs.len()
                        ),
                    });
                }
                let matrices = projs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| p.build(&format!("{path}.projectors[{k}]"), dim))
                    .collect::<Result<Vec<_>>>()?;
                Observable::new(spec.name.clone(), outcomes, matrices)
                    .map_err(|e| schema_err(&path, e))?
            }
            (None, Some(matrix)) => {
                let m = matrix.build(&format!("{path}.matrix"), dim)?;
                observable_from_matrix(&system, spec.name.clone(), &m)
                    .map_err(|e| schema_err(format!("{path}.matrix"), e))?
            }
            _ => {
                return Err(Error::SchemaError {
                    path,
                    message: "give either explicit projectors or a Hermitian matrix".into(),
                })
            }
        };
        if observables.insert(spec.name.clone(), obs).is_some() {
            return Err(Error::SchemaError {
                path: format!("{path}.name"),
                message: format!("duplicate observable name `{}`", spec.name),
            });
        }
    }

    let mut resolutions = BTreeMap::new();
    for (i, spec) in raw.resolutions.iter().enumerate() {
        let path = format!("resolutions[{i}]");
        let parent = observables.get(&spec.parent).ok_or_else(|| Error::SchemaError {
            path: format!("{path}.parent"),
            message: format!("unknown observable `{}`", spec.parent),
        })?;
        let cells = spec.cells.iter().map(|c| (c.label, c.members.clone())).collect();
        let res = Resolution::new(parent, cells).map_err(|e| schema_err(&path, e))?;
        // resolutions must produce a valid coarse device
        coarse_grain(parent, &res).map_err(|e| schema_err(&path, e))?;
        if resolutions.insert(spec.name.clone(), res).is_some() {
            return Err(Error::SchemaError {
                path: format!("{path}.name"),
                message: format!("duplicate resolution name `{}`", spec.name),
            });
        }
    }

    let weight_sum: f64 = raw.initialization.weights.iter().map(|w| w.weight).sum();
    if (weight_sum - 1.0).abs() > 1e-9 {
        return Err(Error::SchemaError {
            path: "initialization.weights".into(),
            message: Error::WeightSumError { sum: weight_sum }.to_string(),
        });
    }
    let mut weight_refs = Vec::new();
    for (i, w) in raw.initialization.weights.iter().enumerate() {
        let obs = observables.get(&w.observable).ok_or_else(|| Error::SchemaError {
            path: format!("initialization.weights[{i}].observable"),
            message: format!("unknown observable `{}`", w.observable),
        })?;
        weight_refs.push((obs, w.outcome, w.weight / weight_sum));
    }
    let init = InitializationEvent::from_weights(&system, raw.initialization.time, &weight_refs)
        .map_err(|e| schema_err("initialization", e))?;

    let mut schedules = BTreeMap::new();
    let mut schedule_order = Vec::new();
    for (i, spec) in raw.schedules.iter().enumerate() {
        let path = format!("schedules[{i}]");
        let entries = spec
            .entries
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let obs = observables.get(&e.observable).ok_or_else(|| Error::SchemaError {
                    path: format!("{path}.entries[{k}].observable"),
                    message: format!("unknown observable `{}`", e.observable),
                })?;
                Ok((e.time, obs.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let schedule = MeasurementSchedule::new(raw.initialization.time, entries)
            .map_err(|e| schema_err(&path, e))?;
        if schedules.insert(spec.name.clone(), schedule).is_some() {
            return Err(Error::SchemaError {
                path: format!("{path}.name"),
                message: format!("duplicate schedule name `{}`", spec.name),
            });
        }
        schedule_order.push(spec.name.clone());
    }

    let composite = match &raw.composite {
        None => None,
        Some(spec) => {
            let dim_b = spec.system_b.dim;
            let h_b = spec.system_b.hamiltonian.build("composite.system_b.hamiltonian", dim_b)?;
            let sys_b = QuantumSystem::new(h_b)
                .map_err(|e| schema_err("composite.system_b.hamiltonian", e))?;
            let v_a = spec.v_a.build("composite.v_a", dim)?;
            let v_b = spec.v_b.build("composite.v_b", dim_b)?;
            let comp = compose(&system, &sys_b, spec.coupling, &v_a, &v_b)
                .map_err(|e| schema_err("composite", e))?;
            let rho_b = spec.environment.build("composite.environment", dim_b)?;
            InitializationEvent::from_density_matrix(&sys_b, raw.initialization.time, &rho_b)
                .map_err(|e| schema_err("composite.environment", e))?;
            Some((comp, rho_b))
        }
    };

    let known_kinds = [
        "causality",
        "inconsistency",
        "markov",
        "uncertainty",
        "zeno",
        "coarse_placement",
        "statics",
        "surrogate_convergence",
        "map_convergence",
    ];
    for (i, e) in raw.experiments.iter().enumerate() {
        let path = format!("experiments[{i}]");
        if !known_kinds.contains(&e.kind.as_str()) {
            return Err(Error::SchemaError {
                path: format!("{path}.kind"),
                message: format!("unknown experiment kind `{}`", e.kind),
            });
        }
        if let Some(s) = &e.schedule {
            if !schedules.contains_key(s) {
                return Err(Error::SchemaError {
                    path: format!("{path}.schedule"),
                    message: format!("unknown schedule `{s}`"),
                });
            }
        }
        if let Some(o) = &e.observable {
            if !observables.contains_key(o) {
                return Err(Error::SchemaError {
                    path: format!("{path}.observable"),
                    message: format!("unknown observable `{o}`"),
                });
            }
        }
        if let Some(o) = &e.observable_b {
            if !observables.contains_key(o) {
                return Err(Error::SchemaError {
                    path: format!("{path}.observable_b"),
                    message: format!("unknown observable `{o}`"),
                });
            }
        }
        if let Some(r) = &e.resolution {
            if !resolutions.contains_key(r) {
                return Err(Error::SchemaError {
                    path: format!("{path}.resolution"),
                    message: format!("unknown resolution `{r}`"),
                });
            }
        }
        if matches!(e.kind.as_str(), "surrogate_convergence" | "map_convergence")
            && composite.is_none()
        {
            return Err(Error::SchemaError {
                path,
                message: "convergence experiments need a composite block".into(),
            });
        }
    }

    Ok(LoadedConfig {
        system,
        observables,
        resolutions,
        init,
        schedules,
        schedule_order,
        experiments: raw.experiments,
        composite,
        tol_equality: raw.tolerances.equality,
        tol_psd: raw.tolerances.psd,
        seed: raw.seed,
    })
}
