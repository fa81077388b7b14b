//! Structural-bias experiments: order permutation and interleave-density
//! sweeps, each built from fixed-topology baseline runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{accuracy, run_suite_with_root, yes_rate, DatasetManifest, EvalError, RunMode};
use crate::backend::ModelClient;
use crate::pipeline::PipelineConfig;
use crate::types::{ModalityKind, TopologyFormat};

pub const UNTAGGED: &str = "(untagged)";

/// Accuracy per task tag for one modality order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRow {
    pub order: Vec<ModalityKind>,
    pub per_tag: Vec<f64>,
    pub overall: f64,
}

impl PermutationRow {
    pub fn order_label(&self) -> String {
        self.order.iter().map(ModalityKind::as_str).collect::<Vec<_>>().join("->")
    }
}

/// Rows are orders, columns are task tags; the shape of an order-sensitivity
/// table. Identical rows mean the joint model ignores input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub tags: Vec<String>,
    pub rows: Vec<PermutationRow>,
}

fn tag_of(record: &super::ManifestRecord) -> String {
    record.tag.clone().unwrap_or_else(|| UNTAGGED.to_string())
}

fn per_tag_accuracy(
    predictions: &super::PredictionSet,
    manifest: &DatasetManifest,
    tags: &[String],
) -> Vec<f64> {
    let mut correct: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total: BTreeMap<&str, usize> = BTreeMap::new();
    for record in &manifest.records {
        let tag = tag_of(record);
        let tag = tags.iter().find(|t| **t == tag).expect("tags cover the manifest").as_str();
        *total.entry(tag).or_default() += 1;
        if predictions.get(&record.id).is_some_and(|p| p.is(&record.gold)) {
            *correct.entry(tag).or_default() += 1;
        }
    }
    tags.iter()
        .map(|tag| {
            let t = total.get(tag.as_str()).copied().unwrap_or(0);
            if t == 0 {
                0.0
            } else {
                correct.get(tag.as_str()).copied().unwrap_or(0) as f64 / t as f64
            }
        })
        .collect()
}

/// Run one fixed sequential baseline per order and tabulate accuracy per
/// task tag. Needs at least two orders to be a permutation experiment.
pub async fn permutation_report(
    manifest: &DatasetManifest,
    orders: &[Vec<ModalityKind>],
    cfg: &PipelineConfig,
    client: Arc<dyn ModelClient>,
    concurrency: usize,
    media_root: Option<&Path>,
) -> Result<PermutationReport, EvalError> {
    if orders.len() < 2 {
        return Err(EvalError::NeedTwoOrders);
    }
    let mut tags: Vec<String> = manifest.records.iter().map(tag_of).collect();
    tags.sort();
    tags.dedup();

    let mut rows = Vec::with_capacity(orders.len());
    for order in orders {
        let mode = RunMode::FixedBaseline { order: order.clone(), format: TopologyFormat::Sequential };
        let result = run_suite_with_root(manifest, &mode, cfg, Arc::clone(&client), concurrency, media_root).await;
        let overall = accuracy(&result.predictions, manifest)?;
        let per_tag = per_tag_accuracy(&result.predictions, manifest, &tags);
        rows.push(PermutationRow { order: order.clone(), per_tag, overall });
    }
    Ok(PermutationReport { tags, rows })
}

/// One point of a density sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub accuracy: f64,
    pub yes_rate: f64,
}

/// Paired accuracy / yes-rate series over interleave densities, against a
/// sequential audio-video baseline on the same records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySweep {
    pub baseline: SweepPoint,
    pub points: Vec<(u32, SweepPoint)>,
}

/// Run one interleaved fixed baseline per density plus one sequential
/// baseline. The task must be binary yes/no, since the sweep reports the
/// "yes" response rate alongside accuracy.
pub async fn density_sweep(
    manifest: &DatasetManifest,
    densities: &[u32],
    cfg: &PipelineConfig,
    client: Arc<dyn ModelClient>,
    concurrency: usize,
    media_root: Option<&Path>,
) -> Result<DensitySweep, EvalError> {
    let order = vec![ModalityKind::Audio, ModalityKind::Video];

    let sequential = RunMode::FixedBaseline { order: order.clone(), format: TopologyFormat::Sequential };
    let base = run_suite_with_root(manifest, &sequential, cfg, Arc::clone(&client), concurrency, media_root).await;
    let baseline =
        SweepPoint { accuracy: accuracy(&base.predictions, manifest)?, yes_rate: yes_rate(&base.predictions)? };

    let mut points = Vec::with_capacity(densities.len());
    for &k in densities {
        let mut cfg_k = cfg.clone();
        cfg_k.build.interleave_k = k;
        let mode = RunMode::FixedBaseline { order: order.clone(), format: TopologyFormat::Interleaved };
        let result = run_suite_with_root(manifest, &mode, &cfg_k, Arc::clone(&client), concurrency, media_root).await;
        points.push((
            k,
            SweepPoint {
                accuracy: accuracy(&result.predictions, manifest)?,
                yes_rate: yes_rate(&result.predictions)?,
            },
        ));
    }
    Ok(DensitySweep { baseline, points })
}
