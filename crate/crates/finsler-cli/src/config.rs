//! Experiment configuration: a single JSON document, overridden field by
//! field by command-line flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use finsler::transport::ChartCurve;

use crate::CliError;

/// Loop specification accepted in config files and `--loop` JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoopSpec {
    /// Axis-aligned square loop.
    Rectangle { corner: [f64; 2], side: f64 },
    Circle { center: [f64; 2], radius: f64 },
    Polyline { vertices: Vec<[f64; 2]> },
}

impl LoopSpec {
    pub fn to_curve(&self) -> ChartCurve {
        match self {
            LoopSpec::Rectangle { corner, side } => ChartCurve::Rectangle {
                corner: corner.to_vec(),
                edge_u: vec![*side, 0.0],
                edge_v: vec![0.0, *side],
            },
            LoopSpec::Circle { center, radius } => ChartCurve::Circle {
                center: center.to_vec(),
                radius: *radius,
            },
            LoopSpec::Polyline { vertices } => ChartCurve::Polyline {
                vertices: vertices.iter().map(|v| v.to_vec()).collect(),
            },
        }
    }
}

/// Metric parameters selectable from config.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    /// Chart dimension for the euclidean/klein/funk entries.
    pub dimension: Option<usize>,
}

/// On-disk config schema. Unknown fields are rejected so typos surface as
/// config errors, not silent defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema: Option<u32>,
    pub metrics: Option<Vec<String>>,
    pub params: Option<MetricParams>,
    pub points: Option<Vec<[f64; 2]>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub samples: Option<usize>,
    pub grid: Option<usize>,
    pub depth_cap: Option<usize>,
    pub field_cap: Option<usize>,
    pub step: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    #[serde(rename = "loop")]
    pub loop_spec: Option<LoopSpec>,
    pub project: Option<bool>,
}

/// Fully resolved experiment configuration; echoed verbatim into
/// `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub metrics: Vec<String>,
    pub params: MetricParams,
    pub points: Vec<[f64; 2]>,
    pub seed: u64,
    pub out: PathBuf,
    pub samples: usize,
    pub grid: usize,
    pub depth_cap: usize,
    pub field_cap: usize,
    pub step: f64,
    pub epsilons: Vec<f64>,
    #[serde(rename = "loop")]
    pub loop_spec: LoopSpec,
    pub project: bool,
}

pub const DEFAULT_METRICS: [&str; 4] = ["berwald_flat", "euclidean", "funk", "klein"];

impl Resolved {
    /// Merge precedence: built-in defaults < config file < CLI flags.
    pub fn assemble(file: FileConfig, flags: &crate::CommonArgs) -> Result<Resolved, CliError> {
        if let Some(schema) = file.schema {
            if schema != 1 {
                return Err(CliError::Config(format!(
                    "unsupported config schema {schema} (expected 1)"
                )));
            }
        }

        let mut points: Vec<[f64; 2]> = file
            .points
            .unwrap_or_else(|| finsler::DEFAULT_BASE_POINTS.to_vec());
        if !flags.points.is_empty() {
            points = flags
                .points
                .iter()
                .map(|raw| parse_point(raw))
                .collect::<Result<_, _>>()?;
        }

        let mut metrics = file
            .metrics
            .unwrap_or_else(|| DEFAULT_METRICS.iter().map(|s| s.to_string()).collect());
        if !flags.metrics.is_empty() {
            metrics = flags.metrics.clone();
        }
        metrics.sort();
        metrics.dedup();

        let epsilons = match &flags.epsilons {
            Some(raw) => raw
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Config(format!("bad epsilon '{tok}'")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => file.epsilons.unwrap_or_else(|| vec![0.04, 0.02, 0.01]),
        };

        let loop_spec = match &flags.loop_spec {
            Some(raw) => serde_json::from_str(raw)
                .map_err(|e| CliError::Config(format!("bad --loop JSON: {e}")))?,
            None => file.loop_spec.unwrap_or(LoopSpec::Rectangle {
                corner: [0.1, 0.1],
                side: 0.2,
            }),
        };

        let file_dimension = file.params.as_ref().and_then(|p| p.dimension);
        let resolved = Resolved {
            metrics,
            params: MetricParams {
                dimension: Some(flags.dimension.or(file_dimension).unwrap_or(2)),
            },
            points,
            seed: flags.seed.or(file.seed).unwrap_or(finsler::DEFAULT_SEED),
            out: flags
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("out")),
            samples: flags.samples.or(file.samples).unwrap_or(100),
            grid: flags.grid.or(file.grid).unwrap_or(64),
            depth_cap: flags.depth_cap.or(file.depth_cap).unwrap_or(3),
            field_cap: flags.field_cap.or(file.field_cap).unwrap_or(64),
            step: flags.step.or(file.step).unwrap_or(1e-3),
            epsilons,
            loop_spec,
            project: flags.project || file.project.unwrap_or(false),
        };

        if resolved.grid == 0 || resolved.grid % 2 != 0 {
            return Err(CliError::Config(format!(
                "grid must be even and positive, got {}",
                resolved.grid
            )));
        }
        if !(resolved.step > 0.0 && resolved.step < 1.0) {
            return Err(CliError::Config(format!(
                "step must lie in (0, 1), got {}",
                resolved.step
            )));
        }
        if resolved.depth_cap > 4 {
            return Err(CliError::Config(format!(
                "depth cap {} exceeds the jet budget (max 4)",
                resolved.depth_cap
            )));
        }
        if resolved.metrics.is_empty() {
            return Err(CliError::Config("no metrics selected".into()));
        }
        if resolved.points.is_empty() {
            return Err(CliError::Config("no base points given".into()));
        }
        Ok(resolved)
    }

    pub fn dimension(&self) -> usize {
        self.params.dimension.unwrap_or(2)
    }

    /// Build the catalog the run will use, honouring the dimension
    /// parameter, and check every requested id exists.
    pub fn catalog(&self) -> Result<finsler::Catalog, CliError> {
        let catalog = finsler::Catalog::standard_dim(self.dimension())
            .map_err(|e| CliError::Config(e.to_string()))?;
        for id in &self.metrics {
            if catalog.get(id).is_none() {
                return Err(CliError::Config(format!(
                    "unknown metric '{id}' (catalog: {})",
                    catalog.ids().collect::<Vec<_>>().join(", ")
                )));
            }
        }
        Ok(catalog)
    }
}

fn parse_point(raw: &str) -> Result<[f64; 2], CliError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!(
            "point '{raw}' must be 'x1,x2'"
        )));
    }
    let x1 = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Config(format!("bad coordinate '{}'", parts[0])))?;
    let x2 = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Config(format!("bad coordinate '{}'", parts[1])))?;
    Ok([x1, x2])
}

/// Load the config file when given, else an empty default.
pub fn load(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", p.display())))
        }
    }
}
