//! Cluster-count ablation: run the full distill-and-probe pipeline once per
//! cluster count, plus once with uniform random sampling as the baseline.

use std::collections::HashSet;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, linear_probe, mean_average_precision, LabelValue, labeled_split_from_f64, Labels,
};
use crate::store::PairedDataset;
use crate::trainer::{distill, forward_rows, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepSampling {
    Bds { k: usize },
    Random,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub sampling: SweepSampling,
    pub final_loss: f64,
    /// Linear-probe score on exported student embeddings: accuracy percent
    /// for single-label tasks, mAP x 100 for multi-label.
    pub metric: f64,
}

fn probe_metric(
    state: &TrainState,
    data: &PairedDataset,
    train_labels: &[(String, LabelValue)],
    test_labels: &[(String, LabelValue)],
    config: &TrainConfig,
) -> Result<f64> {
    let embeddings = forward_rows(&state.student, data.inputs.view())?;
    let train = labeled_split_from_f64(&data.ids, &embeddings, train_labels)?;
    let test = labeled_split_from_f64(&data.ids, &embeddings, test_labels)?;
    let scores = linear_probe(&train, &test, &config.probe)?;
    match &test.labels {
        Labels::Single(classes) => accuracy(scores.view(), classes),
        Labels::Multi(hot) => Ok(100.0 * mean_average_precision(scores.view(), hot.view())?.map),
    }
}

/// One pipeline run per k in `k_values`, then a uniform-sampling baseline.
/// Rows come back in `k_values` order with the baseline last.
pub fn cluster_sweep(
    data: &PairedDataset,
    train_labels: &[(String, LabelValue)],
    test_labels: &[(String, LabelValue)],
    k_values: &[usize],
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if k_values.is_empty() {
        return Err(Error::invalid_argument("no cluster counts given"));
    }
    let unique: HashSet<_> = k_values.iter().collect();
    if unique.len() != k_values.len() {
        return Err(Error::invalid_argument("duplicate cluster counts"));
    }

    let mut rows = Vec::with_capacity(k_values.len() + 1);
    for &k in k_values {
        let run_config = TrainConfig {
            k_clusters: k,
            bds_enabled: true,
            ..config.clone()
        };
        let (state, report) = distill(data, &run_config)?;
        rows.push(SweepRow {
            sampling: SweepSampling::Bds { k },
            final_loss: report.final_loss.unwrap_or(f64::NAN),
            metric: probe_metric(&state, data, train_labels, test_labels, &run_config)?,
        });
    }

    let baseline_config = TrainConfig {
        bds_enabled: false,
        ..config.clone()
    };
    let (state, report) = distill(data, &baseline_config)?;
    rows.push(SweepRow {
        sampling: SweepSampling::Random,
        final_loss: report.final_loss.unwrap_or(f64::NAN),
        metric: probe_metric(&state, data, train_labels, test_labels, &baseline_config)?,
    });
    Ok(rows)
}

/// Fixed-header CSV: `sampling,k,final_loss,metric`, with an empty k for the
/// random baseline row.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sampling", "k", "final_loss", "metric"])
        .map_err(|e| Error::format(e.to_string()))?;
    for row in rows {
        let (sampling, k) = match row.sampling {
            SweepSampling::Bds { k } => ("bds", k.to_string()),
            SweepSampling::Random => ("random", String::new()),
        };
        w.write_record([
            sampling,
            &k,
            &format!("{:.6}", row.final_loss),
            &format!("{:.6}", row.metric),
        ])
        .map_err(|e| Error::format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
