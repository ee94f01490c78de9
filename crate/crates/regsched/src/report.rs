//! Turns a directory of run artifacts into plot-ready CSV files:
//! validation-error curves, metaparameter trajectories, error versus depth,
//! the expert-configuration error surface, parameter-variance curves and
//! pruning trajectories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{write_atomic, Summary};
use crate::ga_reg::GaRegLogRecord;
use crate::metrics::RunRecord;
use crate::regularizers::ALL_KINDS;

struct TrainRun {
    name: String,
    summary: Summary,
    records: Vec<RunRecord>,
    ga_log: Vec<GaRegLogRecord>,
}

struct PruneRun {
    name: String,
    cres: String,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn scan(run_dir: &Path) -> Result<(Vec<TrainRun>, Vec<PruneRun>)> {
    let mut train_runs = Vec::new();
    let mut prune_runs = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for dir in entries {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let summary_path = dir.join("summary.json");
        if summary_path.is_file() {
            let summary: Summary = serde_json::from_str(&fs::read_to_string(&summary_path)?)?;
            let records = match read_jsonl::<RunRecord>(&dir.join("records.jsonl")) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("warning: {name}: no usable records.jsonl ({e})");
                    Vec::new()
                }
            };
            let ga_log = if dir.join("ga_reg_log.jsonl").is_file() {
                read_jsonl::<GaRegLogRecord>(&dir.join("ga_reg_log.jsonl")).unwrap_or_else(|e| {
                    eprintln!("warning: {name}: unreadable ga_reg_log.jsonl ({e})");
                    Vec::new()
                })
            } else {
                Vec::new()
            };
            train_runs.push(TrainRun {
                name,
                summary,
                records,
                ga_log,
            });
        } else if dir.join("prune_summary.json").is_file() {
            match fs::read_to_string(dir.join("cres.csv")) {
                Ok(cres) => prune_runs.push(PruneRun { name, cres }),
                Err(e) => eprintln!("warning: {name}: unreadable cres.csv ({e})"),
            }
        }
    }
    Ok((train_runs, prune_runs))
}

/// Read every run under `run_dir` and emit the plot-data CSVs into
/// `run_dir/report/`. Returns the files written. Missing inputs for one
/// output produce a warning; an entirely empty directory is an error.
pub fn cmd_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let (train_runs, prune_runs) = scan(run_dir)?;
    if train_runs.is_empty() && prune_runs.is_empty() {
        return Err(Error::Runtime(format!(
            "no run artifacts found under {}",
            run_dir.display()
        )));
    }
    let report_dir = run_dir.join("report");
    let mut written = Vec::new();

    let curve_runs: Vec<&TrainRun> = train_runs.iter().filter(|r| !r.records.is_empty()).collect();
    if curve_runs.is_empty() {
        eprintln!("warning: no records found; skipping error and variance curves");
    } else {
        let val_curve = per_iteration_table_ref(&curve_runs, |r| r.val_mae.to_string());
        let path = report_dir.join("validation_error_curves.csv");
        write_atomic(&path, val_curve.as_bytes())?;
        written.push(path);

        let variance_curve =
            per_iteration_table_ref(&curve_runs, |r| r.parameter_variance.to_string());
        let path = report_dir.join("parameter_variance_curves.csv");
        write_atomic(&path, variance_curve.as_bytes())?;
        written.push(path);

        let robustness_curve = per_iteration_table_ref(&curve_runs, |r| {
            r.robustness.map(|v| v.to_string()).unwrap_or_default()
        });
        let path = report_dir.join("robustness_curves.csv");
        write_atomic(&path, robustness_curve.as_bytes())?;
        written.push(path);
    }

    // accepted metaparameter vectors over iterations, one file per run
    for run in &train_runs {
        if run.ga_log.is_empty() {
            continue;
        }
        let mut csv = String::from("iteration,layer");
        for kind in ALL_KINDS {
            csv.push(',');
            csv.push_str(kind.name());
        }
        csv.push('\n');
        for record in run.ga_log.iter().filter(|r| r.accepted) {
            csv.push_str(&format!("{},{}", record.iteration, record.layer));
            for value in record.lambda {
                csv.push_str(&format!(",{value}"));
            }
            csv.push('\n');
        }
        let path = report_dir.join(format!("metaparameter_trajectory_{}.csv", run.name));
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }

    // mean test error grouped by depth and mode
    {
        let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
        for run in &train_runs {
            groups
                .entry((run.summary.layers, run.summary.mode.clone()))
                .or_default()
                .push(run.summary.test_mae);
        }
        let mut csv = String::from("layers,mode,mean_test_mae,runs\n");
        for ((layers, mode), values) in &groups {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            csv.push_str(&format!("{layers},{mode},{mean},{}\n", values.len()));
        }
        let path = report_dir.join("error_vs_depth.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }

    // expert-configuration surface: (autoencoder depth, layer count) cells
    let expert_runs: Vec<&TrainRun> = train_runs
        .iter()
        .filter(|r| r.summary.mode == "expert")
        .collect();
    if expert_runs.is_empty() {
        eprintln!("warning: no expert-mode runs; skipping the expert surface");
    } else {
        let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for run in expert_runs {
            groups
                .entry((run.summary.autoencoder_layers, run.summary.layers))
                .or_default()
                .push(run.summary.test_mae);
        }
        let mut csv = String::from("autoencoder_layers,layers,mean_test_mae,runs\n");
        for ((s, k), values) in &groups {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            csv.push_str(&format!("{s},{k},{mean},{}\n", values.len()));
        }
        let path = report_dir.join("expert_error_surface.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }

    // pruning trajectories through complexity/robustness/error space
    if prune_runs.is_empty() {
        eprintln!("warning: no pruning runs; skipping the pruning trajectories");
    } else {
        let mut csv = String::from("run,generation,complexity,error,robustness\n");
        for run in &prune_runs {
            for line in run.cres.lines().skip(1) {
                csv.push_str(&run.name);
                csv.push(',');
                csv.push_str(line);
                csv.push('\n');
            }
        }
        let path = report_dir.join("pruning_trajectories.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }

    Ok(written)
}

fn per_iteration_table_ref(runs: &[&TrainRun], column: impl Fn(&RunRecord) -> String) -> String {
    let mut csv = String::from("iteration");
    for run in runs {
        csv.push(',');
        csv.push_str(&run.name);
    }
    csv.push('\n');
    let mut tables: Vec<BTreeMap<usize, String>> = Vec::new();
    let mut iterations: Vec<usize> = Vec::new();
    for run in runs {
        let mut table = BTreeMap::new();
        for record in &run.records {
            table.insert(record.iteration, column(record));
            iterations.push(record.iteration);
        }
        tables.push(table);
    }
    iterations.sort_unstable();
    iterations.dedup();
    for iteration in iterations {
        csv.push_str(&iteration.to_string());
        for table in &tables {
            csv.push(',');
            if let Some(value) = table.get(&iteration) {
                csv.push_str(value);
            }
        }
        csv.push('\n');
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{cmd_train, ExperimentConfig};
    use crate::model::Activation;
    use crate::schedule::ScheduleMode;

    fn config(dir: &Path, mode: ScheduleMode) -> ExperimentConfig {
        ExperimentConfig {
            dataset: crate::experiment::DatasetSpec {
                source: "synthetic".to_string(),
                target_column: None,
                objects: Some(300),
                features: Some(6),
            },
            architecture: crate::experiment::ArchitectureSpec {
                hidden: vec![5],
                activation: Activation::Relu,
                autoencoder_layers: 0,
            },
            training: crate::experiment::TrainingSpec {
                iterations: 20,
                learning_rate: 1e-3,
                batch_size: 16,
                record_every: 1,
                robustness_window: 5,
            },
            schedule: crate::experiment::ScheduleBlock {
                mode,
                static_matrix: None,
                pretrain_iterations: None,
            },
            ga_reg: crate::experiment::GaRegSpec {
                population_size: 3,
                generations: 2,
                ..Default::default()
            },
            ga_nas: Default::default(),
            seeds: vec![0],
            output_dir: dir.to_path_buf(),
            dataset_seed: 0,
            compare_modes: None,
            compare_datasets: None,
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(cmd_report(dir.path()).is_err());
    }

    #[test]
    fn report_emits_curves_and_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        cmd_train(&config(dir.path(), ScheduleMode::Basic)).unwrap();
        cmd_train(&config(dir.path(), ScheduleMode::Sequential)).unwrap();
        let written = cmd_report(dir.path()).unwrap();
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"validation_error_curves.csv".to_string()));
        assert!(names.contains(&"parameter_variance_curves.csv".to_string()));
        assert!(names.contains(&"error_vs_depth.csv".to_string()));
        assert!(names
            .iter()
            .any(|n| n.starts_with("metaparameter_trajectory_")));

        // one column per regularizer kind in the trajectory file
        let trajectory = written
            .iter()
            .find(|p| {
                p.file_name()
                    .unwrap()
                    .to_string_lossy()
                    .starts_with("metaparameter_trajectory_")
            })
            .unwrap();
        let text = std::fs::read_to_string(trajectory).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "iteration,layer,lasso,layers,orthogonal,ridge,highfreq,localdiff"
        );
    }
}
