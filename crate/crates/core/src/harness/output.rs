use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::run::{aggregate_records, run_file, Ablation, Aggregate, RunOutput, RunRecord, SweepResult};
use super::HarnessError;
use crate::loss::write_history;
use crate::network::save_params;

pub const AGGREGATE_HEADER: &str = "metric,mean,sd,min,max,median,count,failed,total";

/// Creates `dir` and proves it writable.
pub fn preflight(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_check");
    fs::write(&probe, b"ok")?;
    fs::remove_file(probe)?;
    Ok(())
}

/// Record, parameters and loss history of one realization.
pub(crate) fn write_run_artifacts(output: &RunOutput, dir: &Path) -> Result<(), HarnessError> {
    let r = &output.record;
    if let (Some(p), Some(name)) = (&output.params, &r.params_file) {
        save_params(p, &dir.join(name))?;
    }
    if let Some(name) = &r.loss_history_file {
        write_history(&dir.join(name), &output.history)?;
    }
    fs::write(run_file(dir, r.seed), serde_json::to_string_pretty(r)?)?;
    Ok(())
}

fn csv_row(agg: &Aggregate) -> Vec<String> {
    agg.metrics
        .iter()
        .map(|m| {
            format!(
                "{},{:e},{:e},{:e},{:e},{:e},{},{},{}",
                m.name, m.stats.mean, m.stats.sd, m.stats.min, m.stats.max, m.median, m.stats.count, agg.failed, agg.total
            )
        })
        .collect()
}

pub fn write_aggregate_csv(agg: &Aggregate, path: &Path) -> Result<(), HarnessError> {
    let mut text = String::from(AGGREGATE_HEADER);
    text.push('\n');
    for row in csv_row(agg) {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Whitespace-delimited table: one row per `x`, then mean and SD of each
/// metric.
pub fn figdata_text(x_name: &str, rows: &[(f64, &Aggregate)]) -> String {
    let names: Vec<&str> = rows
        .iter()
        .find(|(_, a)| !a.metrics.is_empty())
        .map(|(_, a)| a.metrics.iter().map(|m| m.name.as_str()).collect())
        .unwrap_or_default();
    let mut out = format!("# {x_name}");
    for n in &names {
        let _ = write!(out, " {n}_mean {n}_sd");
    }
    out.push('\n');
    for (x, agg) in rows {
        let _ = write!(out, "{x}");
        for n in &names {
            match agg.metric(n) {
                Some(m) => {
                    let _ = write!(out, " {:e} {:e}", m.stats.mean, m.stats.sd);
                }
                None => out.push_str(" nan nan"),
            }
        }
        out.push('\n');
    }
    out
}

/// Run records, the aggregate table and a per-realization data file.
pub fn emit_outputs(records: &[RunRecord], dir: &Path) -> Result<(), HarnessError> {
    preflight(dir)?;
    for r in records {
        fs::write(run_file(dir, r.seed), serde_json::to_string_pretty(r)?)?;
    }
    let agg = aggregate_records(records);
    write_aggregate_csv(&agg, &dir.join("aggregate.csv"))?;
    let per_run: Vec<(f64, Aggregate)> = records.iter().map(|r| (r.seed as f64, aggregate_records(std::slice::from_ref(r)))).collect();
    let rows: Vec<(f64, &Aggregate)> = per_run.iter().map(|(x, a)| (*x, a)).collect();
    fs::write(dir.join("figdata_realizations.dat"), figdata_text("seed", &rows))?;
    Ok(())
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Long table, one matrix per metric (rows: first axis, columns: second axis,
/// one file per combination of any further axes) and error-bar data along the
/// first axis.
pub(crate) fn emit_sweep(result: &SweepResult, dir: &Path) -> Result<(), HarnessError> {
    let axis_names: Vec<&str> = result.axes.iter().map(|a| a.name()).collect();
    let mut long = axis_names.join(",");
    long.push(',');
    long.push_str(AGGREGATE_HEADER);
    long.push_str(",error\n");
    for cell in &result.cells {
        let prefix: Vec<String> = cell.values.iter().map(|&v| fmt_value(v)).collect();
        let prefix = prefix.join(",");
        let rows = csv_row(&cell.aggregate);
        if rows.is_empty() {
            let err = cell.error.clone().unwrap_or_else(|| "all realizations failed".into()).replace(',', ";");
            let _ = writeln!(long, "{prefix},,,,,,,0,{},{},{err}", cell.aggregate.failed, cell.aggregate.total);
        }
        for row in rows {
            let _ = writeln!(long, "{prefix},{row},");
        }
    }
    fs::write(dir.join("sweep_long.csv"), long)?;

    let metric_names: Vec<String> = result
        .cells
        .iter()
        .find(|c| !c.aggregate.metrics.is_empty())
        .map(|c| c.aggregate.metrics.iter().map(|m| m.name.clone()).collect())
        .unwrap_or_default();
    let rows_axis = &result.axis_values[0];
    let cols_axis: Vec<f64> = result.axis_values.get(1).cloned().unwrap_or_else(|| vec![f64::NAN]);
    // groups of cells sharing the values of axes beyond the second
    let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for (i, cell) in result.cells.iter().enumerate() {
        let rest: Vec<f64> = cell.values.iter().skip(2).copied().collect();
        match groups.iter_mut().find(|(r, _)| *r == rest) {
            Some((_, v)) => v.push(i),
            None => groups.push((rest, vec![i])),
        }
    }
    for (rest, members) in &groups {
        let suffix: String = result
            .axes
            .iter()
            .skip(2)
            .zip(rest)
            .map(|(a, v)| format!("_{}={}", a.name(), fmt_value(*v)))
            .collect();
        let find = |r: f64, c: f64| {
            members.iter().map(|&i| &result.cells[i]).find(|cell| cell.values[0] == r && (cell.values.len() < 2 || cell.values[1] == c))
        };
        for metric in &metric_names {
            let corner = match axis_names.get(1) {
                Some(second) => format!("{}\\{}", axis_names[0], second),
                None => axis_names[0].to_string(),
            };
            let mut text = corner;
            for &c in &cols_axis {
                let _ = write!(text, ",{}", if c.is_nan() { metric.clone() } else { fmt_value(c) });
            }
            text.push('\n');
            for &r in rows_axis {
                text.push_str(&fmt_value(r));
                for &c in &cols_axis {
                    let v = find(r, c).and_then(|cell| cell.aggregate.metric(metric)).map(|m| format!("{:e}", m.stats.mean));
                    let _ = write!(text, ",{}", v.unwrap_or_default());
                }
                text.push('\n');
            }
            fs::write(dir.join(format!("sweep_matrix_{metric}{suffix}.csv")), text)?;
        }
        // error bars along the first axis, one file per value of the second
        for &c in &cols_axis {
            let rows: Vec<(f64, &Aggregate)> = rows_axis.iter().filter_map(|&r| find(r, c).map(|cell| (r, &cell.aggregate))).collect();
            let col_suffix = match result.axes.get(1) {
                Some(a) => format!("_{}={}", a.name(), fmt_value(c)),
                None => String::new(),
            };
            fs::write(dir.join(format!("figdata_{}{col_suffix}{suffix}.dat", axis_names[0])), figdata_text(axis_names[0], &rows))?;
        }
    }
    Ok(())
}

pub(crate) fn write_ablation_csv(ablation: &Ablation, dir: &Path) -> Result<(), HarnessError> {
    let mut text = String::from("seed,with_physics_validation_l2_sum,without_physics_validation_l2_sum\n");
    for (a, b) in ablation.with_physics.iter().zip(&ablation.without_physics) {
        let f = |r: &RunRecord| r.validation_l2_sum.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(text, "{},{},{}", a.seed, f(a), f(b));
    }
    fs::write(dir.join("ablation.csv"), text)?;
    Ok(())
}
