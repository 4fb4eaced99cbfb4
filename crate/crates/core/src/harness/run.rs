use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SweepAxis, SweepSpec};
use super::output::{emit_outputs, emit_sweep, preflight, write_ablation_csv, write_run_artifacts};
use super::HarnessError;
use crate::jet::predict_columns;
use crate::loss::{HistoryRecord, LossBreakdown, LossProblem};
use crate::metrics::{aggregate, median, percent_error, relative_l2, RealizationStats};
use crate::network::MlpParams;
use crate::optim::{train, OptimError, StopReason};
use crate::problems::{Mode, ProblemSpec};
use crate::sampling::{add_noise_to_set, boundary_initial_points, build_grid, lhs_collocation, split, SampleSet, SetKind};

/// Independent random streams derived from one realization seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStream {
    Split = 1,
    Boundary = 2,
    Collocation = 3,
    Noise = 4,
    Init = 5,
}

pub fn stream_seed(seed: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub realization: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub stop_reason: Option<StopReason>,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub final_loss: Option<LossBreakdown>,
    /// Estimated θ (inverse mode).
    pub theta: Option<Vec<f64>>,
    pub theta_percent_error: Option<Vec<f64>>,
    /// Output names, aligned with the per-field errors.
    pub fields: Vec<String>,
    pub validation_l2: Option<Vec<f64>>,
    pub test_l2: Option<Vec<f64>>,
    pub validation_l2_sum: Option<f64>,
    pub test_l2_sum: Option<f64>,
    pub params_file: Option<String>,
    pub loss_history_file: Option<String>,
}

impl RunRecord {
    /// Named scalar metrics in a fixed order; empty for failed runs.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut m = Vec::new();
        if self.status != RunStatus::Ok {
            return m;
        }
        if let Some(v) = &self.validation_l2 {
            m.extend(self.fields.iter().zip(v).map(|(f, e)| (format!("validation_l2_{f}"), *e)));
        }
        m.extend(self.validation_l2_sum.map(|e| ("validation_l2_sum".to_string(), e)));
        if let Some(v) = &self.test_l2 {
            m.extend(self.fields.iter().zip(v).map(|(f, e)| (format!("test_l2_{f}"), *e)));
        }
        m.extend(self.test_l2_sum.map(|e| ("test_l2_sum".to_string(), e)));
        if let Some(t) = &self.theta_percent_error {
            m.extend(t.iter().enumerate().map(|(i, e)| (format!("theta{}_percent_error", i + 1), *e)));
        }
        if let Some(l) = &self.final_loss {
            m.push(("final_loss".to_string(), l.total));
        }
        m
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics().into_iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

/// A record with the artifacts it references.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub params: Option<MlpParams<f64>>,
    pub history: Vec<HistoryRecord>,
}

/// Training problem and held-out sets of one realization.
pub(crate) struct RealizationData {
    pub problem: LossProblem,
    pub validation: SampleSet,
    pub test: SampleSet,
}

pub(crate) fn realization_data(cfg: &ExperimentConfig, grid: &SampleSet, seed: u64) -> Result<RealizationData, HarnessError> {
    let kind = cfg.problem.kind;
    let spec = ProblemSpec::new(kind, cfg.problem.mode);
    let (train_set, validation, test) = split(grid, cfg.n_split_train(), stream_seed(seed, SeedStream::Split))?;
    let mut problem = match cfg.problem.mode {
        Mode::Forward => {
            let b = boundary_initial_points(&spec, cfg.data.n_boundary.unwrap_or(0), stream_seed(seed, SeedStream::Boundary))?;
            let c = lhs_collocation(cfg.data.n_collocation.unwrap_or(0), &spec.bounds(), stream_seed(seed, SeedStream::Collocation))?;
            LossProblem::forward(kind, b, c)?
        }
        Mode::Inverse => {
            let m = add_noise_to_set(&train_set, cfg.data.noise, stream_seed(seed, SeedStream::Noise))?;
            LossProblem::inverse(kind, SampleSet { kind: SetKind::Measurement, ..m })?
        }
    };
    problem.physics = cfg.data.physics;
    Ok(RealizationData { problem, validation, test })
}

/// Relative L² error of each output over `set`.
pub(crate) fn field_errors(cfg: &ExperimentConfig, params: &[f64], set: &SampleSet) -> Result<Vec<f64>, HarnessError> {
    let pred = predict_columns(cfg.layout(), params, &set.points, cfg.data.eval_block);
    pred.iter()
        .enumerate()
        .map(|(k, p)| Ok(relative_l2(p, &set.value_column(k).expect("grid sets carry values"))?))
        .collect()
}

fn failed(cfg: &ExperimentConfig, realization: usize, seed: u64, error: String, wall: f64) -> RunOutput {
    RunOutput {
        record: RunRecord {
            config: cfg.clone(),
            realization,
            seed,
            status: RunStatus::Failed,
            error: Some(error),
            stop_reason: None,
            iterations: 0,
            evaluations: 0,
            wall_time_s: wall,
            final_loss: None,
            theta: None,
            theta_percent_error: None,
            fields: cfg.problem.kind.output_names().iter().map(|s| s.to_string()).collect(),
            validation_l2: None,
            test_l2: None,
            validation_l2_sum: None,
            test_l2_sum: None,
            params_file: None,
            loss_history_file: None,
        },
        params: None,
        history: Vec::new(),
    }
}

/// Trains and evaluates realization `index` of `cfg` on `grid`. Errors end up
/// in the record rather than the return value.
pub fn run_realization(cfg: &ExperimentConfig, grid: &SampleSet, index: usize) -> RunOutput {
    let seed = cfg.run.base_seed.wrapping_add(index as u64);
    let start = Instant::now();
    let result = (|| -> Result<RunOutput, HarnessError> {
        let data = realization_data(cfg, grid, seed)?;
        let layout = cfg.layout();
        let outcome = match train(&data.problem, layout, &cfg.optimizer, stream_seed(seed, SeedStream::Init)) {
            Ok(o) => o,
            Err(e @ OptimError::Divergence { .. }) => return Ok(failed(cfg, index, seed, e.to_string(), start.elapsed().as_secs_f64())),
            Err(OptimError::Loss(e)) => return Err(e.into()),
            Err(e) => return Err(HarnessError::Config(e.to_string())),
        };
        let validation_l2 = field_errors(cfg, &outcome.params, &data.validation)?;
        let test_l2 = field_errors(cfg, &outcome.params, &data.test)?;
        let (theta, theta_percent_error) = match cfg.problem.mode {
            Mode::Forward => (None, None),
            Mode::Inverse => {
                let truth = ProblemSpec::new(cfg.problem.kind, Mode::Inverse).true_theta();
                let err = percent_error(&outcome.theta, &truth)?;
                (Some(outcome.theta.clone()), Some(err))
            }
        };
        let r = &outcome.result;
        let history = r.breakdowns.iter().enumerate().map(|(i, b)| HistoryRecord::new(i, b)).collect();
        let record = RunRecord {
            config: cfg.clone(),
            realization: index,
            seed,
            status: RunStatus::Ok,
            error: None,
            stop_reason: Some(r.stop_reason),
            iterations: r.iterations,
            evaluations: r.evaluations,
            wall_time_s: start.elapsed().as_secs_f64(),
            final_loss: r.breakdowns.last().copied(),
            theta,
            theta_percent_error,
            fields: cfg.problem.kind.output_names().iter().map(|s| s.to_string()).collect(),
            validation_l2_sum: Some(validation_l2.iter().sum()),
            test_l2_sum: Some(test_l2.iter().sum()),
            validation_l2: Some(validation_l2),
            test_l2: Some(test_l2),
            params_file: Some(format!("params_{seed}.json")),
            loss_history_file: Some(format!("loss_{seed}.jsonl")),
        };
        Ok(RunOutput {
            record,
            params: Some(MlpParams::from_flat(layout, outcome.params)?),
            history,
        })
    })();
    result.unwrap_or_else(|e| failed(cfg, index, seed, e.to_string(), start.elapsed().as_secs_f64()))
}

/// Runs `jobs` closures on up to `workers` threads; results keep job order.
fn parallel<T: Send>(jobs: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Trains `cfg.run.realizations` networks with seeds `base_seed + i`, writes
/// every run's artifacts and the aggregate into `cfg.run.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let out = cfg.run.out_dir.clone();
    preflight(&out)?;
    let grid = build_grid(&cfg.grid(), &ProblemSpec::new(cfg.problem.kind, cfg.problem.mode))?;
    let records = parallel(cfg.run.realizations, cfg.run.workers, |i| {
        let output = run_realization(&cfg, &grid, i);
        let r = &output.record;
        match r.status {
            RunStatus::Ok => log::info!(
                "seed {}: {:?} after {} iterations, validation sum L2 {:.3e}",
                r.seed,
                r.stop_reason.unwrap(),
                r.iterations,
                r.validation_l2_sum.unwrap_or(f64::NAN)
            ),
            RunStatus::Failed => log::warn!("seed {} failed: {}", r.seed, r.error.as_deref().unwrap_or("")),
        }
        write_run_artifacts(&output, &out).map(|_| output.record)
    });
    let records = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    emit_outputs(&records, &out)?;
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub stats: RealizationStats,
    pub median: f64,
}

/// Statistics over the successful realizations of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub total: usize,
    pub failed: usize,
    pub metrics: Vec<MetricSummary>,
}

impl Aggregate {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn all_failed(&self) -> bool {
        self.total > 0 && self.failed == self.total
    }
}

pub fn aggregate_records(records: &[RunRecord]) -> Aggregate {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.status == RunStatus::Ok).collect();
    let names: Vec<String> = ok.first().map(|r| r.metrics().into_iter().map(|(n, _)| n).collect()).unwrap_or_default();
    let metrics = names
        .into_iter()
        .filter_map(|name| {
            let values: Vec<f64> = ok.iter().filter_map(|r| r.metric(&name)).collect();
            let stats = aggregate(&values).ok()?;
            Some(MetricSummary {
                median: median(&values)?,
                name,
                stats,
            })
        })
        .collect();
    Aggregate {
        total: records.len(),
        failed: records.len() - ok.len(),
        metrics,
    }
}

/// One cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    /// Axis values of the cell, in axis order.
    pub values: Vec<f64>,
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
    /// Set when the cell could not run at all.
    pub error: Option<String>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.aggregate.all_failed()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axes: Vec<SweepAxis>,
    pub axis_values: Vec<Vec<f64>>,
    pub cells: Vec<CellResult>,
}

fn cell_name(axes: &[SweepAxis], values: &[f64]) -> String {
    axes.iter().zip(values).map(|(a, v)| format!("{}={v}", a.name())).collect::<Vec<_>>().join("_")
}

/// One experiment per cell of the Cartesian product of the axis values; each
/// cell writes into its own subdirectory and the sweep tables go to the base
/// output directory.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepResult, HarnessError> {
    spec.validate()?;
    let out = base.run.out_dir.clone();
    preflight(&out)?;
    let axes: Vec<SweepAxis> = spec.axes.iter().map(|a| a.axis).collect();
    let mut cells = Vec::new();
    for idx in spec.cells() {
        let values: Vec<f64> = idx.iter().zip(&spec.axes).map(|(&i, a)| a.values[i]).collect();
        let mut cfg = base.clone();
        cfg.run.out_dir = out.join(cell_name(&axes, &values));
        let run = axes
            .iter()
            .zip(&values)
            .try_for_each(|(a, &v)| a.apply(&mut cfg, v))
            .and_then(|_| run_experiment(&cfg));
        cells.push(match run {
            Ok(records) => CellResult {
                values,
                aggregate: aggregate_records(&records),
                records,
                error: None,
            },
            Err(e) => {
                log::warn!("sweep cell {} failed: {e}", cell_name(&axes, &values));
                CellResult {
                    values,
                    records: Vec::new(),
                    aggregate: aggregate_records(&[]),
                    error: Some(e.to_string()),
                }
            }
        });
    }
    let result = SweepResult {
        axes,
        axis_values: spec.axes.iter().map(|a| a.values.clone()).collect(),
        cells,
    };
    emit_sweep(&result, &out)?;
    Ok(result)
}

/// The same realizations trained with and without the physics terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Ablation {
    pub with_physics: Vec<RunRecord>,
    pub without_physics: Vec<RunRecord>,
}

/// Trains every realization twice from identical seeds and training points,
/// once with the full loss and once with the physics terms dropped.
pub fn ablate_regularization(cfg: &ExperimentConfig) -> Result<Ablation, HarnessError> {
    if cfg.problem.mode != Mode::Forward {
        return Err(HarnessError::Config("the regularization ablation needs a forward-mode config".into()));
    }
    let out = cfg.run.out_dir.clone();
    preflight(&out)?;
    let mut with = cfg.clone();
    with.data.physics = true;
    with.run.out_dir = out.join("with_physics");
    let mut without = cfg.clone();
    without.data.physics = false;
    without.run.out_dir = out.join("without_physics");
    let ablation = Ablation {
        with_physics: run_experiment(&with)?,
        without_physics: run_experiment(&without)?,
    };
    write_ablation_csv(&ablation, &out)?;
    Ok(ablation)
}

/// Whether a persisted run directory is present for `seed`.
pub(crate) fn run_file(dir: &Path, seed: u64) -> std::path::PathBuf {
    dir.join(format!("run_{seed}.json"))
}
