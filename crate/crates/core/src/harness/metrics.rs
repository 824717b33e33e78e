use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::profiling::SilhouetteReport;
use crate::toyworld::{AugmentationType, NUM_AUGMENTATIONS};

/// First line of every metrics CSV. Bump the version when columns change.
pub const METRICS_FORMAT: &str = "#format=aapl-metrics/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicMean {
    pub value: f64,
    /// Both inputs were zero; the value is defined as 0.
    pub degenerate: bool,
}

/// `2ab / (a + b)` for accuracies in percent.
pub fn harmonic_mean(base: f64, new: f64) -> Result<HarmonicMean> {
    for v in [base, new] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("accuracy {v} outside [0, 100]")));
        }
    }
    if base == 0.0 && new == 0.0 {
        return Ok(HarmonicMean {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(HarmonicMean {
        value: 2.0 * base * new / (base + new),
        degenerate: false,
    })
}

/// State after one training epoch, or of the untrained model (no losses).
/// Epochs are numbered from 0; epoch 0 trains under uniform sampler weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total_loss: Option<f64>,
    pub ce_loss: Option<f64>,
    pub adtriplet_loss: Option<f64>,
    /// Base and new test accuracy in percent.
    pub base_accuracy: f64,
    pub new_accuracy: f64,
    pub harmonic_mean: f64,
    pub silhouette: SilhouetteReport,
    /// Sampler distribution used for this epoch's episodes.
    pub sampler: [f64; NUM_AUGMENTATIONS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    /// The model before any gradient step.
    pub initial: EpochMetrics,
    pub epochs: Vec<EpochMetrics>,
    pub wall_clock_seconds: f64,
    /// Images from new-split classes consumed by gradient steps.
    pub new_class_accesses: usize,
    /// Probabilities clamped inside the cross-entropy log.
    pub clamp_events: usize,
    pub trainable_parameters: usize,
}

impl RunMetrics {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().unwrap_or(&self.initial)
    }

    pub fn base_accuracy(&self) -> f64 {
        self.last().base_accuracy
    }

    pub fn new_accuracy(&self) -> f64 {
        self.last().new_accuracy
    }

    pub fn harmonic_mean(&self) -> f64 {
        self.last().harmonic_mean
    }

    pub fn silhouette_at(&self, epoch: usize) -> Option<f64> {
        self.epochs.get(epoch).map(|e| e.silhouette.overall)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_header() -> String {
    let mut cols = vec![
        "epoch".to_string(),
        "total_loss".into(),
        "ce_loss".into(),
        "adtriplet_loss".into(),
        "base_acc".into(),
        "new_acc".into(),
        "hm".into(),
        "silhouette".into(),
    ];
    cols.extend(AugmentationType::ALL.iter().map(|a| format!("sil_{a}")));
    cols.extend(AugmentationType::ALL.iter().map(|a| format!("w_{a}")));
    cols.join(",")
}

/// Writes the versioned header and one row per training epoch. Types missing from a
/// silhouette report leave an empty cell.
pub fn write_metrics_csv<W: Write>(w: &mut W, metrics: &RunMetrics) -> Result<()> {
    writeln!(w, "{METRICS_FORMAT}")?;
    writeln!(w, "{}", metrics_header())?;
    for e in &metrics.epochs {
        let mut cells = vec![
            e.epoch.to_string(),
            opt(e.total_loss),
            opt(e.ce_loss),
            opt(e.adtriplet_loss),
            e.base_accuracy.to_string(),
            e.new_accuracy.to_string(),
            e.harmonic_mean.to_string(),
            e.silhouette.overall.to_string(),
        ];
        cells.extend(AugmentationType::ALL.iter().map(|&a| opt(e.silhouette.score(a))));
        cells.extend(e.sampler.iter().map(|p| p.to_string()));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub format: &'static str,
    pub seed: u64,
    pub epochs: usize,
    pub base_accuracy: f64,
    pub new_accuracy: f64,
    pub harmonic_mean: f64,
    pub harmonic_mean_degenerate: bool,
    pub initial_base_accuracy: f64,
    pub initial_new_accuracy: f64,
    pub initial_silhouette: f64,
    pub final_silhouette: f64,
    pub new_class_accesses: usize,
    pub clamp_events: usize,
    pub trainable_parameters: usize,
    pub wall_clock_seconds: f64,
    pub config: &'a super::ExperimentConfig,
}

pub fn write_summary_json<W: Write>(
    w: &mut W,
    metrics: &RunMetrics,
    config: &super::ExperimentConfig,
) -> Result<()> {
    let last = metrics.last();
    let hm = harmonic_mean(last.base_accuracy, last.new_accuracy)?;
    let summary = RunSummary {
        format: "aapl-summary/1",
        seed: metrics.seed,
        epochs: metrics.epochs.len(),
        base_accuracy: last.base_accuracy,
        new_accuracy: last.new_accuracy,
        harmonic_mean: hm.value,
        harmonic_mean_degenerate: hm.degenerate,
        initial_base_accuracy: metrics.initial.base_accuracy,
        initial_new_accuracy: metrics.initial.new_accuracy,
        initial_silhouette: metrics.initial.silhouette.overall,
        final_silhouette: last.silhouette.overall,
        new_class_accesses: metrics.new_class_accesses,
        clamp_events: metrics.clamp_events,
        trainable_parameters: metrics.trainable_parameters,
        wall_clock_seconds: metrics.wall_clock_seconds,
        config,
    };
    serde_json::to_writer_pretty(&mut *w, &summary).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}
