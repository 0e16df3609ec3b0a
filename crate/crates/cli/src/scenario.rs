//! Scenario files: the system, its sensors, the communication graph, the
//! weight rule, fusion depths and Monte Carlo settings.
//!
//! ```toml
//! [system]
//! a = [[1.0, 1.0], [0.0, 1.0]]
//! q = [[0.1, 0.0], [0.0, 0.1]]
//!
//! [[sensors]]
//! c = [[1.0, 0.0]]
//! r = [[1.0]]
//! count = 2            # optional, default 1
//!
//! [[sensors]]
//! naive = true         # measures nothing
//! count = 3
//!
//! [graph]
//! kind = "geometric"   # geometric | complete | path | file
//! width = 300.0
//! radius = 130.0
//! seed = 1
//! # path = "edges.txt" for kind = "file"
//!
//! [weights]
//! rule = "metropolis"  # metropolis | uniform
//!
//! [fusion]
//! depths = [4, 9, 14]  # optional
//!
//! [trials]
//! steps = 200
//! trials = 1000
//! seed = 7
//! eval_window = 1
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use cmdf_core::model::{check_sensors, collective_observability, SensorModel, SystemModel};
use cmdf_core::network::{self, Graph, WeightMatrix};
use cmdf_core::simulate::{reference_scenario, TrialConfig};
use cmdf_core::{Matrix, Vector};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Name of the built-in four-state tracking scenario.
pub const BUILTIN_REFERENCE: &str = "reference";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    system: SystemSection,
    sensors: Vec<SensorSection>,
    graph: GraphSection,
    #[serde(default)]
    weights: WeightSection,
    #[serde(default)]
    fusion: FusionSection,
    #[serde(default)]
    trials: TrialSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    a: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorSection {
    c: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    naive: bool,
    #[serde(default = "one")]
    count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "kind")]
enum GraphSection {
    Geometric { width: f64, radius: f64, seed: u64 },
    Complete,
    Path,
    File { path: PathBuf },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightSection {
    #[serde(default)]
    rule: WeightRule,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightRule {
    #[default]
    Metropolis,
    Uniform,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusionSection {
    depths: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialSection {
    steps: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    eval_window: Option<usize>,
    x0: Option<Vec<f64>>,
    p0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Where the communication graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    Geometric { width: f64, radius: f64, seed: u64 },
    Complete,
    Path,
    File(PathBuf),
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: SystemModel,
    pub sensors: Vec<SensorModel>,
    pub graph: GraphSource,
    pub weights: WeightRule,
    /// Explicit fusion depths; commands pick their own defaults when empty.
    pub depths: Vec<usize>,
    pub trials: TrialConfig,
    pub output: PathBuf,
}

/// Noise seed used when a scenario does not set one.
pub const DEFAULT_TRIAL_SEED: u64 = 1;

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(Matrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

impl Scenario {
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let system = SystemModel::new(matrix(&file.system.a, "system.a")?, matrix(&file.system.q, "system.q")?)?;
        let n = system.dim();

        let mut sensors = Vec::new();
        for (k, s) in file.sensors.iter().enumerate() {
            let model = match (s.naive, &s.c, &s.r) {
                (true, None, None) => SensorModel::naive(n),
                (false, Some(c), Some(r)) => SensorModel::new(
                    matrix(c, &format!("sensors[{k}].c"))?,
                    matrix(r, &format!("sensors[{k}].r"))?,
                )?,
                _ => {
                    return Err(CliError::Config(format!(
                        "sensors[{k}] needs either `naive = true` or both `c` and `r`"
                    )))
                }
            };
            sensors.extend(std::iter::repeat_n(model, s.count));
        }
        if sensors.is_empty() {
            return Err(CliError::Config("scenario has no sensors".into()));
        }

        let graph = match file.graph {
            GraphSection::Geometric { width, radius, seed } => GraphSource::Geometric { width, radius, seed },
            GraphSection::Complete => GraphSource::Complete,
            GraphSection::Path => GraphSource::Path,
            GraphSection::File { path } => GraphSource::File(base_dir.join(path)),
        };

        let t = file.trials;
        let mut trials = TrialConfig::new(n, t.seed.unwrap_or(DEFAULT_TRIAL_SEED));
        if let Some(v) = t.steps {
            trials.steps = v;
        }
        if let Some(v) = t.trials {
            trials.trials = v;
        }
        if let Some(v) = t.eval_window {
            trials.eval_window = v;
        }
        if let Some(v) = t.x0 {
            trials.x0 = Vector::from_vec(v);
        }
        if let Some(v) = t.p0 {
            trials.p0 = matrix(&v, "trials.p0")?;
        }

        let scenario = Self {
            system,
            sensors,
            graph,
            weights: file.weights.rule,
            depths: file.fusion.depths.unwrap_or_default(),
            trials,
            output: file.output.dir.map_or_else(|| PathBuf::from("."), |d| base_dir.join(d)),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn builtin(name: &str) -> CliResult<Self> {
        if name != BUILTIN_REFERENCE {
            return Err(CliError::Config(format!(
                "unknown built-in scenario `{name}` (available: {BUILTIN_REFERENCE})"
            )));
        }
        let r = reference_scenario();
        let n = r.system.dim();
        Ok(Self {
            system: r.system,
            sensors: r.sensors,
            graph: GraphSource::Geometric { width: r.width, radius: r.radius, seed: 1 },
            weights: WeightRule::Metropolis,
            depths: Vec::new(),
            trials: TrialConfig::new(n, DEFAULT_TRIAL_SEED),
            output: PathBuf::from("."),
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        check_sensors(&self.system, &self.sensors)?;
        if !collective_observability(&self.system, &self.sensors) {
            return Err(CliError::Core(cmdf_core::Error::Unobservable(
                "sensors are not collectively observable".into(),
            )));
        }
        self.trials.validate(self.system.dim())?;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn build_graph(&self) -> CliResult<Graph> {
        let nn = self.node_count();
        let g = match &self.graph {
            GraphSource::Geometric { width, radius, seed } => network::random_geometric(nn, *width, *radius, *seed)?,
            GraphSource::Complete => Graph::complete(nn),
            GraphSource::Path => Graph::path(nn),
            GraphSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                Graph::from_edge_list(&text)?
            }
        };
        if g.node_count() != nn {
            return Err(CliError::Config(format!(
                "graph has {} nodes but the scenario has {nn} sensors",
                g.node_count()
            )));
        }
        Ok(g)
    }

    pub fn build_weights(&self, g: &Graph) -> CliResult<WeightMatrix> {
        Ok(match self.weights {
            WeightRule::Metropolis => network::metropolis_weights(g)?,
            WeightRule::Uniform => {
                if !network::graph_metrics(g).connected {
                    return Err(CliError::Core(cmdf_core::Error::Disconnected));
                }
                WeightMatrix::uniform(g.node_count())
            }
        })
    }
}
