//! Evaluation and diagnostics harness: batch runs over JSONL manifests,
//! accuracy and conflict metrics, order-permutation and interleave-density
//! sweeps, and latency reports.

mod latency;
mod metrics;
pub mod report;
mod sweeps;

pub use latency::{latency_report, LatencyOptions, LatencyReport, StageLatency, StatSummary};
pub use metrics::{accuracy, conflict_metrics, yes_rate, ConflictReport};
pub use sweeps::{density_sweep, permutation_report, DensitySweep, PermutationReport, PermutationRow, SweepPoint};

use std::collections::btree_map;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ModelClient;
use crate::pipeline::{self, PipelineConfig};
use crate::types::{
    AudioStream, Frame, ImageSet, ModalityKind, Pathway, PlanDirective, Provenance, Query, StreamSet,
    TaskCategory, TopologyFormat, Trace, TypeError, VideoStream,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest line {line}: {source}")]
    ManifestParse { line: usize, source: serde_json::Error },
    #[error("manifest line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("manifest record {id:?}: gold label {gold:?} is not among the options")]
    GoldNotAnOption { id: String, gold: String },
    #[error("manifest record {id:?}: no media references")]
    NoMedia { id: String },
    #[error("manifest record {id:?}: {source}")]
    BadRecord { id: String, source: TypeError },
    #[error("prediction keys do not match the manifest ({missing} missing, {extra} extra)")]
    KeyMismatch { missing: usize, extra: usize },
    #[error("yes-rate requires a binary yes/no task, found label {0:?}")]
    NonBinaryTask(String),
    #[error("yes-rate is undefined: no resolved predictions")]
    NoResolvedPredictions,
    #[error("a permutation experiment needs at least two orders")]
    NeedTwoOrders,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRef {
    pub path: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub path: String,
    pub duration_s: f64,
    pub frame_timestamps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagesRef {
    pub paths: Vec<String>,
}

/// One benchmark item: a question, its options and gold label, an optional
/// free-form task tag, and pre-indexed media references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub query: String,
    pub options: Vec<String>,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<VideoRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<ImagesRef>,
}

impl ManifestRecord {
    /// Materialize the query and stream set, resolving media paths against
    /// an optional root. Frame references derive from the video path.
    pub fn to_query_streams(&self, media_root: Option<&Path>) -> Result<(Query, StreamSet), EvalError> {
        let bad = |source: TypeError| EvalError::BadRecord { id: self.id.clone(), source };
        let resolve = |p: &str| match media_root {
            Some(root) => root.join(p).to_string_lossy().into_owned(),
            None => p.to_string(),
        };

        let query = Query::new(self.id.clone(), self.query.clone(), self.options.clone(), Some(self.gold.clone()))
            .map_err(bad)?;
        let mut streams = StreamSet::default();
        if let Some(a) = &self.audio {
            streams.audio = Some(AudioStream::new(format!("{}-audio", self.id), a.duration_s, resolve(&a.path)).map_err(bad)?);
        }
        if let Some(v) = &self.video {
            let path = resolve(&v.path);
            let frames = v
                .frame_timestamps
                .iter()
                .enumerate()
                .map(|(i, t)| Frame { timestamp_s: *t, image: format!("{path}#f{i}") })
                .collect();
            streams.video = Some(VideoStream::new(format!("{}-video", self.id), v.duration_s, frames).map_err(bad)?);
        }
        if let Some(i) = &self.images {
            streams.images =
                Some(ImageSet { id: format!("{}-images", self.id), frames: i.paths.iter().map(|p| resolve(p)).collect() });
        }
        if streams.is_empty() {
            return Err(EvalError::NoMedia { id: self.id.clone() });
        }
        Ok((query, streams))
    }

    /// Media paths referenced by this record, resolved against a root.
    pub fn media_paths(&self, media_root: Option<&Path>) -> Vec<std::path::PathBuf> {
        let resolve = |p: &str| match media_root {
            Some(root) => root.join(p),
            None => std::path::PathBuf::from(p),
        };
        let mut out = Vec::new();
        if let Some(a) = &self.audio {
            out.push(resolve(&a.path));
        }
        if let Some(v) = &self.video {
            out.push(resolve(&v.path));
        }
        if let Some(i) = &self.images {
            out.extend(i.paths.iter().map(|p| resolve(p)));
        }
        out
    }
}

/// An ordered, validated set of benchmark records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self, EvalError> {
        let manifest = DatasetManifest { records };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Parse JSONL, one record per line; blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, EvalError> {
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord =
                serde_json::from_str(line).map_err(|source| EvalError::ManifestParse { line: idx + 1, source })?;
            records.push(record);
        }
        DatasetManifest::new(records)
    }

    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        DatasetManifest::from_jsonl(&text)
    }

    fn validate(&self) -> Result<(), EvalError> {
        let mut ids = BTreeSet::new();
        for (idx, record) in self.records.iter().enumerate() {
            if !ids.insert(record.id.clone()) {
                return Err(EvalError::DuplicateId { line: idx + 1, id: record.id.clone() });
            }
            if !record.options.contains(&record.gold) {
                return Err(EvalError::GoldNotAnOption { id: record.id.clone(), gold: record.gold.clone() });
            }
            // Frame and duration rules are enforced by the stream constructors.
            record.to_query_streams(None)?;
        }
        Ok(())
    }

    /// Subsample every video's frame list to at most `n` frames.
    pub fn with_frame_budget(&self, n: usize) -> DatasetManifest {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(v) = &mut r.video {
                    if n > 0 && v.frame_timestamps.len() > n {
                        let total = v.frame_timestamps.len();
                        v.frame_timestamps = (0..n).map(|i| v.frame_timestamps[i * total / n]).collect();
                    }
                }
                r
            })
            .collect();
        DatasetManifest { records }
    }
}

// ---------------------------------------------------------------------------
// Predictions
// ---------------------------------------------------------------------------

/// A resolved option label, or the explicit unresolved outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Resolved(String),
    Unresolved,
}

impl Prediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Resolved(l) => Some(l),
            Prediction::Unresolved => None,
        }
    }

    pub fn is(&self, label: &str) -> bool {
        self.label() == Some(label)
    }
}

/// Predictions keyed by manifest id, aligned to one run mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    map: BTreeMap<String, Prediction>,
}

impl PredictionSet {
    pub fn insert(&mut self, id: impl Into<String>, prediction: Prediction) {
        self.map.insert(id.into(), prediction);
    }

    pub fn get(&self, id: &str) -> Option<&Prediction> {
        self.map.get(id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> btree_map::Iter<'_, String, Prediction> {
        self.map.iter()
    }

    /// Verify the set is keyed exactly by the manifest ids.
    pub fn check_aligned(&self, manifest: &DatasetManifest) -> Result<(), EvalError> {
        let manifest_ids: BTreeSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
        let prediction_ids: BTreeSet<&str> = self.map.keys().map(String::as_str).collect();
        let missing = manifest_ids.difference(&prediction_ids).count();
        let extra = prediction_ids.difference(&manifest_ids).count();
        if missing > 0 || extra > 0 {
            return Err(EvalError::KeyMismatch { missing, extra });
        }
        Ok(())
    }
}

impl FromIterator<(String, Prediction)> for PredictionSet {
    fn from_iter<T: IntoIterator<Item = (String, Prediction)>>(iter: T) -> Self {
        PredictionSet { map: iter.into_iter().collect() }
    }
}

// ---------------------------------------------------------------------------
// Suite runner
// ---------------------------------------------------------------------------

/// How a suite run drives the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum RunMode {
    /// Planner-driven routing: the full adaptive protocol.
    Adaptive,
    /// Fixed topology injected for every record.
    FixedBaseline { order: Vec<ModalityKind>, format: TopologyFormat },
    /// Audio-only ablation: single modality, sequential, intuitive.
    AudioOnly,
    /// Visual-only ablation: single modality, sequential, intuitive.
    VisualOnly,
}

impl RunMode {
    /// The forced directive for this mode, if any. The task category is the
    /// one whose canonical format matches, so lenient repair never fights
    /// the injected topology.
    pub fn override_directive(&self) -> Option<PlanDirective> {
        let (order, format, task) = match self {
            RunMode::Adaptive => return None,
            RunMode::AudioOnly => {
                (vec![ModalityKind::Audio], TopologyFormat::Sequential, TaskCategory::AudioCentric)
            }
            RunMode::VisualOnly => {
                (vec![ModalityKind::Video], TopologyFormat::Sequential, TaskCategory::VisualCentric)
            }
            RunMode::FixedBaseline { order, format } => {
                let task = match format {
                    TopologyFormat::Sequential => TaskCategory::CrossModal,
                    TopologyFormat::Parallel => TaskCategory::AudioCentric,
                    TopologyFormat::Interleaved => TaskCategory::TemporalCentric,
                };
                (order.clone(), *format, task)
            }
        };
        Some(PlanDirective { task, pathway: Pathway::Intuitive, order, format, provenance: Provenance::Planner })
    }
}

/// Predictions plus the full traces of one run.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub predictions: PredictionSet,
    pub traces: Vec<Trace>,
}

/// Run every manifest record through the pipeline in the given mode.
/// Records run concurrently up to `concurrency`, but traces come back in
/// manifest order and per-record failures surface as unresolved predictions
/// (with the failure recorded in the trace), never as an aborted run.
pub async fn run_suite(
    manifest: &DatasetManifest,
    mode: &RunMode,
    cfg: &PipelineConfig,
    client: Arc<dyn ModelClient>,
    concurrency: usize,
) -> SuiteResult {
    run_suite_with_root(manifest, mode, cfg, client, concurrency, None).await
}

/// `run_suite`, resolving media paths against a root directory.
pub async fn run_suite_with_root(
    manifest: &DatasetManifest,
    mode: &RunMode,
    cfg: &PipelineConfig,
    client: Arc<dyn ModelClient>,
    concurrency: usize,
    media_root: Option<&Path>,
) -> SuiteResult {
    let override_directive = mode.override_directive();
    let jobs = manifest.records.iter().map(|record| {
        let client = Arc::clone(&client);
        let mut cfg = cfg.clone();
        if let Some(d) = &override_directive {
            cfg.plan_override = Some(d.clone());
        }
        let prepared = record.to_query_streams(media_root);
        let id = record.id.clone();
        async move {
            match prepared {
                Ok((query, streams)) => pipeline::run(&query, &streams, &cfg, client.as_ref()).await,
                Err(e) => Trace {
                    id,
                    directive: None,
                    calls: vec![],
                    rationale: None,
                    answer: None,
                    error: Some(e.to_string()),
                    total_s: 0.0,
                },
            }
        }
    });

    let traces: Vec<Trace> = futures::stream::iter(jobs).buffered(concurrency.max(1)).collect().await;

    let mut predictions = PredictionSet::default();
    for trace in &traces {
        let prediction = trace
            .answer
            .as_ref()
            .and_then(|a| a.choice.clone())
            .map_or(Prediction::Unresolved, Prediction::Resolved);
        predictions.insert(trace.id.clone(), prediction);
    }
    SuiteResult { predictions, traces }
}

/// Serialize traces as JSONL, one per line.
pub fn traces_to_jsonl(traces: &[Trace]) -> String {
    let mut out = String::new();
    for trace in traces {
        out.push_str(&serde_json::to_string(trace).expect("traces always serialize"));
        out.push('\n');
    }
    out
}
