use std::path::Path;

use super::run::{field_errors, realization_data, RunRecord, RunStatus};
use super::HarnessError;
use crate::metrics::percent_error;
use crate::network::load_params;
use crate::problems::{Mode, ProblemSpec};
use crate::sampling::build_grid;

/// Metrics recomputed from persisted artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayedMetrics {
    pub validation_l2: Vec<f64>,
    pub test_l2: Vec<f64>,
    pub theta_percent_error: Option<Vec<f64>>,
}

impl ReplayedMetrics {
    /// Largest relative deviation from the values stored in `record`.
    pub fn max_relative_deviation(&self, record: &RunRecord) -> f64 {
        let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
        let pairs = |a: &[f64], b: &Option<Vec<f64>>| -> f64 {
            match b {
                Some(b) if a.len() == b.len() => a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max),
                _ => f64::INFINITY,
            }
        };
        let mut worst = pairs(&self.validation_l2, &record.validation_l2).max(pairs(&self.test_l2, &record.test_l2));
        match (&self.theta_percent_error, &record.theta_percent_error) {
            (Some(a), b @ Some(_)) => worst = worst.max(pairs(a, b)),
            (None, None) => {}
            _ => worst = f64::INFINITY,
        }
        worst
    }
}

/// Regenerates the held-out sets from the record's config and seed, reloads
/// the persisted parameters from `dir` and recomputes the errors.
pub fn replay_record(record: &RunRecord, dir: &Path) -> Result<ReplayedMetrics, HarnessError> {
    if record.status != RunStatus::Ok {
        return Err(HarnessError::Replay(format!("seed {} did not complete", record.seed)));
    }
    let cfg = &record.config;
    let name = record.params_file.as_ref().ok_or_else(|| HarnessError::Replay("record has no parameter file".into()))?;
    let params = load_params(&dir.join(name))?;
    if params.layout != cfg.layout() {
        return Err(HarnessError::Replay("persisted parameters do not match the configured layout".into()));
    }
    let grid = build_grid(&cfg.grid(), &ProblemSpec::new(cfg.problem.kind, cfg.problem.mode))?;
    let data = realization_data(cfg, &grid, record.seed)?;
    let theta_percent_error = match cfg.problem.mode {
        Mode::Forward => None,
        Mode::Inverse => {
            let theta = record.theta.as_ref().ok_or_else(|| HarnessError::Replay("inverse record without θ".into()))?;
            Some(percent_error(theta, &ProblemSpec::new(cfg.problem.kind, Mode::Inverse).true_theta())?)
        }
    };
    Ok(ReplayedMetrics {
        validation_l2: field_errors(cfg, &params.values, &data.validation)?,
        test_l2: field_errors(cfg, &params.values, &data.test)?,
        theta_percent_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, ExperimentConfig};
    use crate::problems::ProblemKind;
    use crate::sampling::GridSpec;

    #[test]
    fn persisted_runs_replay_exactly() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::preset(ProblemKind::Diffusivity, Mode::Inverse);
        cfg.network.hidden_layers = 2;
        cfg.data.grid = Some(GridSpec::unit(vec![31], 15));
        cfg.data.n_train = Some(40);
        cfg.data.noise = 0.05;
        cfg.optimizer.max_iterations = 50;
        cfg.run.realizations = 2;
        cfg.run.out_dir = d.path().to_path_buf();
        let records = run_experiment(&cfg).unwrap();
        for r in &records {
            let stored: RunRecord = serde_json::from_str(&std::fs::read_to_string(d.path().join(format!("run_{}.json", r.seed))).unwrap()).unwrap();
            assert_eq!(&stored, r);
            let m = replay_record(&stored, d.path()).unwrap();
            assert_eq!(m.max_relative_deviation(r), 0.0);
        }
    }

    #[test]
    fn missing_params_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::preset(ProblemKind::Diffusivity, Mode::Forward);
        cfg.network.hidden_layers = 1;
        cfg.data.grid = Some(GridSpec::unit(vec![15], 9));
        cfg.data.n_boundary = Some(10);
        cfg.data.n_collocation = Some(10);
        cfg.optimizer.max_iterations = 5;
        cfg.run.out_dir = d.path().to_path_buf();
        let r = run_experiment(&cfg).unwrap().remove(0);
        std::fs::remove_file(d.path().join(r.params_file.as_ref().unwrap())).unwrap();
        assert!(replay_record(&r, d.path()).is_err());
    }
}
