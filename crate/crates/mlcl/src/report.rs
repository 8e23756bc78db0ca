//! File emission for run records: metric CSVs, forgetting CSVs, learning
//! curves, and per-task correlation-matrix dumps. All output is formatted
//! deterministically so identical runs produce identical bytes.

use crate::acm::write_acm;
use crate::error::Result;
use crate::metrics::METRIC_NAMES;
use crate::trainer::RunRecord;
use std::fs;
use std::path::Path;

/// `metrics.csv`: one row per (checkpoint task, seen test set).
pub fn write_metrics_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::from("task,split,mAP,CP,CR,CF1,OP,OR,OF1\n");
    for outcome in &record.per_task {
        for (j, report) in outcome.reports.iter().enumerate() {
            let values: Vec<String> =
                report.values().iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&format!("{},{},{}\n", outcome.task, j + 1, values.join(",")));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// `forgetting.csv`: per-task drops and the average, per metric. Empty runs
/// (single task) write only the header.
pub fn write_forgetting_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::from("metric,task,value\n");
    for report in &record.forgetting {
        for (j, v) in report.per_task.iter().enumerate() {
            out.push_str(&format!("{},{},{v:.6}\n", report.metric, j + 1));
        }
        out.push_str(&format!("{},avg,{:.6}\n", report.metric, report.average));
    }
    fs::write(path, out)?;
    Ok(())
}

/// `curve.csv`: mAP over the union of seen test sets after each task.
pub fn write_curve_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::from("task,mAP_seen\n");
    for outcome in &record.per_task {
        out.push_str(&format!("{},{:.6}\n", outcome.task, outcome.seen_map));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes everything a run leaves behind into `dir`: `metrics.csv`,
/// `forgetting.csv`, `curve.csv` and `acm_t<N>.txt` per task (graph modes).
pub fn write_run_record(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), record)?;
    write_forgetting_csv(&dir.join("forgetting.csv"), record)?;
    write_curve_csv(&dir.join("curve.csv"), record)?;
    for outcome in &record.per_task {
        if let Some(acm) = &outcome.acm {
            write_acm(&dir.join(format!("acm_t{}.txt", outcome.task)), acm, record.scenario)?;
        }
    }
    Ok(())
}

/// Sanity helper for reports: the metric header order.
pub fn metric_header() -> String {
    format!("task,split,{}", METRIC_NAMES.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossWeights;
    use crate::model::ModelDims;
    use crate::optim::AdamConfig;
    use crate::stream::{generate_synthetic, split_into_tasks, CooccurrenceSpec, Scenario};
    use crate::trainer::{run_continual, RunConfig};

    #[test]
    fn run_outputs_are_byte_reproducible() {
        let spec = CooccurrenceSpec::uniform(4, 6, 0.45, 0.2, 0.1, 3);
        let data = generate_synthetic(&spec, 160, 3).unwrap();
        let stream =
            split_into_tasks(&data, &[vec![0, 1], vec![2, 3]], Scenario::Cl, 0.7, 3).unwrap();
        let config = RunConfig {
            scenario: Scenario::Cl,
            seed: 3,
            dims: ModelDims {
                input_dim: 6,
                feature_dim: 6,
                gcn_dim1: 4,
                gcn_dim2: 4,
                backbone_layers: 2,
                activation_slope: 0.2,
            },
            weights: LossWeights::new(0.7, 0.3, 10.0).unwrap(),
            adam: AdamConfig::default(),
            batch_size: 8,
            ..RunConfig::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_run_record(dir_a.path(), &run_continual(&stream, &config).unwrap()).unwrap();
        write_run_record(dir_b.path(), &run_continual(&stream, &config).unwrap()).unwrap();
        for name in ["metrics.csv", "forgetting.csv", "curve.csv", "acm_t1.txt", "acm_t2.txt"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}
