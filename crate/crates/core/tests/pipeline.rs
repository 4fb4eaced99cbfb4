use std::fs;

use poropinn::harness::{replay_record, run_experiment, run_sweep, AxisValues, ExperimentConfig, RunRecord, SweepAxis, SweepSpec};
use poropinn::problems::{Mode, ProblemKind};
use poropinn::sampling::GridSpec;

fn small_inverse(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(ProblemKind::Diffusivity, Mode::Inverse);
    cfg.network.hidden_layers = 1;
    cfg.network.neurons = 3;
    cfg.data.grid = Some(GridSpec::unit(vec![31], 15));
    cfg.data.n_train = Some(30);
    cfg.optimizer.max_iterations = 15;
    cfg.run.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn hyperparameter_grid_matrices_follow_the_axes() {
    let d = tempfile::tempdir().unwrap();
    let base = small_inverse(d.path());
    let spec = SweepSpec {
        axes: vec![
            AxisValues {
                axis: SweepAxis::HiddenLayers,
                values: vec![1.0, 2.0, 3.0],
            },
            AxisValues {
                axis: SweepAxis::Neurons,
                values: vec![2.0, 3.0, 4.0],
            },
        ],
    };
    let result = run_sweep(&base, &spec).unwrap();
    assert_eq!(result.cells.len(), 9);
    let metrics = ["validation_l2_p", "validation_l2_sum", "test_l2_p", "test_l2_sum", "theta1_percent_error", "theta2_percent_error", "final_loss"];
    for m in metrics {
        let text = fs::read_to_string(d.path().join(format!("sweep_matrix_{m}.csv"))).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 4, "{m}");
        assert_eq!(rows[0], ["hidden_layers\\neurons", "2", "3", "4"]);
        for (r, label) in rows[1..].iter().zip(["1", "2", "3"]) {
            assert_eq!(r[0], label);
            assert_eq!(r.len(), 4);
            assert!(r[1..].iter().all(|v| v.parse::<f64>().is_ok()), "{m}: {r:?}");
        }
    }
    let cell = &result.cells[5];
    assert_eq!(cell.values, vec![2.0, 4.0]);
    assert!(cell.records.iter().all(|r| r.config.network.hidden_layers == 2 && r.config.network.neurons == 4));
}

#[test]
fn realizations_are_isolated_and_replayable() {
    let d = tempfile::tempdir().unwrap();
    let mut all = small_inverse(&d.path().join("all"));
    all.run.realizations = 3;
    all.data.noise = 0.1;
    let records = run_experiment(&all).unwrap();

    // the third realization alone, via its own base seed
    let mut single = all.clone();
    single.run.realizations = 1;
    single.run.base_seed = all.run.base_seed + 2;
    single.run.out_dir = d.path().join("single");
    let alone = run_experiment(&single).unwrap().remove(0);
    let strip = |r: &RunRecord| (r.metrics(), r.theta.clone());
    assert_eq!(strip(&alone), strip(&records[2]));

    for r in &records {
        let m = replay_record(r, &all.run.out_dir).unwrap();
        assert_eq!(m.max_relative_deviation(r), 0.0);
    }
}

#[test]
fn config_echo_lists_every_default() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_inverse(d.path());
    let r = run_experiment(&cfg).unwrap().remove(0);
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join(format!("run_{}.json", r.seed))).unwrap()).unwrap();
    let c = &echo["config"];
    for key in [
        "method",
        "lbfgs_memory",
        "wolfe_c1",
        "wolfe_c2",
        "max_line_search",
        "adam_step_size",
        "adam_beta1",
        "adam_beta2",
        "adam_epsilon",
        "adam_iterations",
        "stop_tolerance",
        "max_iterations",
        "theta_init",
    ] {
        assert!(!c["optimizer"][key].is_null(), "optimizer.{key} missing");
    }
    assert_eq!(c["network"]["init"], "glorot_uniform");
    assert_eq!(c["data"]["split_policy"], "uniform_halves_validation_odd");
    assert_eq!(c["data"]["boundary_allocation"], "measure_proportional");
    assert!(c["data"]["grid"].is_object());
}
