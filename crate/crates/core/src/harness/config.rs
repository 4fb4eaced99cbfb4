use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::network::NetLayout;
use crate::optim::{Method, OptimConfig};
use crate::problems::{Mode, ProblemKind};
use crate::sampling::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    GlorotUniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Training points drawn uniformly without replacement; the rest halved
    /// into validation and test, validation taking the odd point.
    UniformHalvesValidationOdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryAllocation {
    /// Points shared among the initial slab and the boundary faces in
    /// proportion to their measure, with randomized rounding.
    MeasureProportional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub mode: Mode,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Diffusivity,
            mode: Mode::Forward,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub neurons: usize,
    pub init: InitScheme,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden_layers: 6,
            neurons: 5,
            init: InitScheme::GlorotUniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Boundary/initial points (forward).
    pub n_boundary: Option<usize>,
    /// Latin-hypercube collocation points (forward).
    pub n_collocation: Option<usize>,
    /// Interior measurements (inverse).
    pub n_train: Option<usize>,
    /// Relative noise level on measurement values (inverse).
    pub noise: f64,
    /// `false` drops the physics terms from the loss.
    pub physics: bool,
    /// Solution grid that training, validation and test points come from;
    /// the problem's full grid when absent.
    pub grid: Option<GridSpec>,
    pub split_policy: SplitPolicy,
    pub boundary_allocation: BoundaryAllocation,
    /// Points per block when evaluating errors.
    pub eval_block: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_boundary: None,
            n_collocation: None,
            n_train: None,
            noise: 0.0,
            physics: true,
            grid: None,
            split_policy: SplitPolicy::UniformHalvesValidationOdd,
            boundary_allocation: BoundaryAllocation::MeasureProportional,
            eval_block: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub realizations: usize,
    /// Realization `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            realizations: 1,
            base_seed: 1,
            workers: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Everything that determines an experiment; persisted verbatim in every run
/// record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub network: NetworkSection,
    pub data: DataSection,
    pub run: RunSection,
    pub optimizer: OptimConfig,
}

impl ExperimentConfig {
    /// Defaults of the four standard experiments.
    pub fn preset(kind: ProblemKind, mode: Mode) -> Self {
        let mut c = Self::default();
        c.problem = ProblemSection { kind, mode };
        c.network.neurons = match kind {
            ProblemKind::Diffusivity => 5,
            ProblemKind::Biot => 20,
        };
        match mode {
            Mode::Forward => {
                c.data.n_boundary = Some(96);
                c.data.n_collocation = Some(160);
            }
            Mode::Inverse => {
                c.data.n_train = Some(match kind {
                    ProblemKind::Diffusivity => 250,
                    ProblemKind::Biot => 1000,
                });
            }
        }
        if kind == ProblemKind::Biot && mode == Mode::Inverse {
            c.optimizer.method = Method::AdamThenLbfgs;
        }
        c
    }

    pub fn layout(&self) -> NetLayout {
        self.problem.kind.layout(self.network.hidden_layers, self.network.neurons)
    }

    pub fn grid(&self) -> GridSpec {
        self.data.grid.clone().unwrap_or_else(|| GridSpec::default_for(self.problem.kind))
    }

    /// Number of grid points held out as training points by the split.
    pub fn n_split_train(&self) -> usize {
        match self.problem.mode {
            Mode::Forward => self.data.n_boundary.unwrap_or(0),
            Mode::Inverse => self.data.n_train.unwrap_or(0),
        }
    }

    /// Fills in the grid so that the echo lists it explicitly.
    pub fn resolved(mut self) -> Self {
        self.data.grid = Some(self.grid());
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match self.problem.mode {
            Mode::Forward => {
                if !matches!((self.data.n_boundary, self.data.n_collocation), (Some(b), Some(c)) if b >= 1 && c >= 1) {
                    return bad("forward mode needs n_boundary >= 1 and n_collocation >= 1".into());
                }
                if self.data.noise != 0.0 {
                    return bad("noise applies to inverse-mode measurements only".into());
                }
            }
            Mode::Inverse => {
                if !matches!(self.data.n_train, Some(n) if n >= 1) {
                    return bad("inverse mode needs n_train >= 1".into());
                }
                if !self.data.physics {
                    return bad("inverse mode cannot drop the physics terms".into());
                }
            }
        }
        if !(self.data.noise >= 0.0 && self.data.noise.is_finite()) {
            return bad(format!("noise must be finite and >= 0, got {}", self.data.noise));
        }
        if self.run.realizations == 0 {
            return bad("realizations must be >= 1".into());
        }
        if self.run.workers == 0 || self.data.eval_block == 0 {
            return bad("workers and eval_block must be >= 1".into());
        }
        self.layout().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.optimizer.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let grid = self.grid();
        if grid.spatial_intervals.len() != self.problem.kind.spatial_dims() {
            return bad("grid dimension does not match the problem".into());
        }
        if self.n_split_train() > grid.n_points() {
            return bad(format!("{} training points requested from a grid of {}", self.n_split_train(), grid.n_points()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        Ok(toml::to_string(self)?)
    }
}

/// Parses a config file into a generic tree: TOML unless the extension is
/// `.json`.
pub fn read_tree(path: &Path) -> Result<serde_json::Value, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_tree(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse_tree(text: &str, json: bool) -> Result<serde_json::Value, HarnessError> {
    if json {
        Ok(serde_json::from_str(text)?)
    } else {
        let v: toml::Value = toml::from_str(text)?;
        Ok(serde_json::to_value(v)?)
    }
}

/// Overlays `top` on `base`, recursing into tables.
pub fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `base` with the values present in `tree` overriding it.
pub fn overlay(base: &ExperimentConfig, tree: serde_json::Value) -> Result<ExperimentConfig, HarnessError> {
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, tree);
    Ok(serde_json::from_value(v)?)
}

/// Command-line overrides, applied after the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
    pub noise: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.run.base_seed = s;
        }
        if let Some(r) = self.realizations {
            cfg.run.realizations = r;
        }
        if let Some(e) = self.noise {
            cfg.data.noise = e;
        }
        if let Some(o) = &self.out_dir {
            cfg.run.out_dir = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
    }
}

/// A config axis a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NBoundary,
    NCollocation,
    NTrain,
    HiddenLayers,
    Neurons,
    Noise,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NBoundary => "n_boundary",
            SweepAxis::NCollocation => "n_collocation",
            SweepAxis::NTrain => "n_train",
            SweepAxis::HiddenLayers => "hidden_layers",
            SweepAxis::Neurons => "neurons",
            SweepAxis::Noise => "noise",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<(), HarnessError> {
        let count = || -> Result<usize, HarnessError> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(HarnessError::Config(format!("{} takes whole numbers, got {value}", self.name())))
            }
        };
        match self {
            SweepAxis::NBoundary => cfg.data.n_boundary = Some(count()?),
            SweepAxis::NCollocation => cfg.data.n_collocation = Some(count()?),
            SweepAxis::NTrain => cfg.data.n_train = Some(count()?),
            SweepAxis::HiddenLayers => cfg.network.hidden_layers = count()?,
            SweepAxis::Neurons => cfg.network.neurons = count()?,
            SweepAxis::Noise => cfg.data.noise = value,
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisValues {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Axes of a sweep; the first indexes rows and the second columns of the
/// emitted matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axes: Vec<AxisValues>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.axes.is_empty() || self.axes.iter().any(|a| a.values.is_empty()) {
            return Err(HarnessError::Config("sweep needs at least one axis with at least one value".into()));
        }
        Ok(())
    }

    /// Value indices of every cell, last axis fastest.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new()];
        for a in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    (0..a.values.len()).map(move |i| {
                        let mut c = c.clone();
                        c.push(i);
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

/// Splits a config tree into the experiment part and an optional `sweep` table.
pub fn take_sweep(tree: &mut serde_json::Value) -> Result<Option<SweepSpec>, HarnessError> {
    match tree.as_object_mut().and_then(|o| o.remove("sweep")) {
        Some(s) => Ok(Some(serde_json::from_value(s)?)),
        None => Ok(None),
    }
}
