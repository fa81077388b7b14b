//! Domain types shared by every stage of the engine.
//!
//! All types here are immutable after construction and safe to share across
//! concurrent tasks. Constructors validate invariants; behavior beyond
//! construction, validation, and serialization lives in the other modules.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failures raised by type constructors.
#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("query text must be nonempty")]
    EmptyQueryText,
    #[error("duplicate option label: {0:?}")]
    DuplicateOption(String),
    #[error("stream duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("frame timestamps must be strictly increasing")]
    NonMonotonicFrames,
    #[error("frame timestamp {0} outside [0, {1}]")]
    FrameOutOfRange(f64, f64),
    #[error("composition must contain at least one part")]
    EmptyComposition,
    #[error("role prompt must be nonempty")]
    EmptyRolePrompt,
    #[error("answer choice {0:?} is not one of the query options")]
    ChoiceNotAnOption(String),
}

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

/// The kind of a media stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Audio,
    Video,
    Images,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 3] = [ModalityKind::Audio, ModalityKind::Video, ModalityKind::Images];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModalityKind::Audio => "audio",
            ModalityKind::Video => "video",
            ModalityKind::Images => "images",
        }
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityKind {
    type Err = String;

    /// Case-insensitive; accepts the common spelling variants seen in model
    /// output ("visual" for the video stream, "image"/"frames" for frame
    /// sets) and the single-letter shorthand used on the command line.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "audio" | "a" => Ok(ModalityKind::Audio),
            "video" | "visual" | "v" => Ok(ModalityKind::Video),
            "images" | "image" | "frames" | "i" => Ok(ModalityKind::Images),
            other => Err(format!("unknown modality kind: {other:?}")),
        }
    }
}

/// Task category assigned by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskCategory {
    #[serde(rename = "audio")]
    AudioCentric,
    #[serde(rename = "visual")]
    VisualCentric,
    #[serde(rename = "temporal")]
    TemporalCentric,
    #[serde(rename = "cross-modal")]
    CrossModal,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [
        TaskCategory::AudioCentric,
        TaskCategory::VisualCentric,
        TaskCategory::TemporalCentric,
        TaskCategory::CrossModal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskCategory::AudioCentric => "audio",
            TaskCategory::VisualCentric => "visual",
            TaskCategory::TemporalCentric => "temporal",
            TaskCategory::CrossModal => "cross-modal",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "audio" | "audio-centric" => Ok(TaskCategory::AudioCentric),
            "visual" | "visual-centric" | "vision" => Ok(TaskCategory::VisualCentric),
            "temporal" | "temporal-centric" => Ok(TaskCategory::TemporalCentric),
            "cross-modal" | "crossmodal" | "cross" => Ok(TaskCategory::CrossModal),
            other => Err(format!("unknown task category: {other:?}")),
        }
    }
}

/// Cognitive pathway: answer directly, or audit evidence first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Intuitive,
    Analytical,
}

impl fmt::Display for Pathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pathway::Intuitive => "intuitive",
            Pathway::Analytical => "analytical",
        })
    }
}

impl FromStr for Pathway {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "intuitive" => Ok(Pathway::Intuitive),
            "analytical" | "analytic" => Ok(Pathway::Analytical),
            other => Err(format!("unknown pathway: {other:?}")),
        }
    }
}

/// Physical arrangement of modality tokens in a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyFormat {
    Parallel,
    Sequential,
    Interleaved,
}

impl TopologyFormat {
    pub const ALL: [TopologyFormat; 3] = [
        TopologyFormat::Parallel,
        TopologyFormat::Sequential,
        TopologyFormat::Interleaved,
    ];
}

impl fmt::Display for TopologyFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyFormat::Parallel => "parallel",
            TopologyFormat::Sequential => "sequential",
            TopologyFormat::Interleaved => "interleaved",
        })
    }
}

impl FromStr for TopologyFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parallel" => Ok(TopologyFormat::Parallel),
            "sequential" | "seq" => Ok(TopologyFormat::Sequential),
            "interleaved" | "interleave" => Ok(TopologyFormat::Interleaved),
            other => Err(format!("unknown topology format: {other:?}")),
        }
    }
}

/// How a directive came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Emitted by the planning pass and accepted as-is.
    Planner,
    /// Planner output that needed repair before it was usable.
    Repaired,
    /// The robust default used when planner output was unusable.
    Fallback,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Planner => "planner",
            Provenance::Repaired => "repaired",
            Provenance::Fallback => "fallback",
        })
    }
}

/// Workflow stage a model call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Plan,
    Reason,
    Decide,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Plan => "plan",
            Stage::Reason => "reason",
            Stage::Decide => "decide",
        })
    }
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// A user question, optionally multiple-choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    /// Ordered answer options; empty for open-form questions.
    #[serde(default)]
    pub options: Vec<String>,
    /// Gold option label, carried for evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        options: Vec<String>,
        gold: Option<String>,
    ) -> Result<Self, TypeError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TypeError::EmptyQueryText);
        }
        let mut seen = BTreeSet::new();
        for opt in &options {
            if !seen.insert(opt.as_str()) {
                return Err(TypeError::DuplicateOption(opt.clone()));
            }
        }
        Ok(Query { id: id.into(), text, options, gold })
    }
}

/// An audio stream. The payload is an opaque reference (path or blob handle);
/// the engine never decodes media content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioStream {
    pub id: String,
    pub duration_s: f64,
    pub payload: String,
}

impl AudioStream {
    pub fn new(id: impl Into<String>, duration_s: f64, payload: impl Into<String>) -> Result<Self, TypeError> {
        if duration_s <= 0.0 || !duration_s.is_finite() {
            return Err(TypeError::NonPositiveDuration(duration_s));
        }
        Ok(AudioStream { id: id.into(), duration_s, payload: payload.into() })
    }
}

/// A timestamped frame reference inside a video stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestamp_s: f64,
    pub image: String,
}

/// A temporal video stream, pre-indexed into timestamped frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoStream {
    pub id: String,
    pub duration_s: f64,
    pub frames: Vec<Frame>,
}

impl VideoStream {
    pub fn new(id: impl Into<String>, duration_s: f64, frames: Vec<Frame>) -> Result<Self, TypeError> {
        if duration_s <= 0.0 || !duration_s.is_finite() {
            return Err(TypeError::NonPositiveDuration(duration_s));
        }
        let mut prev = f64::NEG_INFINITY;
        for f in &frames {
            if f.timestamp_s <= prev {
                return Err(TypeError::NonMonotonicFrames);
            }
            if f.timestamp_s < 0.0 || f.timestamp_s > duration_s {
                return Err(TypeError::FrameOutOfRange(f.timestamp_s, duration_s));
            }
            prev = f.timestamp_s;
        }
        Ok(VideoStream { id: id.into(), duration_s, frames })
    }

    /// Uniformly subsample the frame list down to at most `n` frames,
    /// preserving order. `n == 0` leaves the stream unchanged. Used by the
    /// frame-density sweep.
    pub fn sample_frames(&self, n: usize) -> VideoStream {
        if n == 0 || self.frames.len() <= n {
            return self.clone();
        }
        let total = self.frames.len();
        let frames = (0..n)
            .map(|i| self.frames[i * total / n].clone())
            .collect();
        VideoStream { id: self.id.clone(), duration_s: self.duration_s, frames }
    }
}

/// An unordered-in-time set of still frames for fine-grained recognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSet {
    pub id: String,
    pub frames: Vec<String>,
}

/// The media available for one query. Missing kinds are simply absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioStream>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<VideoStream>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<ImageSet>,
}

impl StreamSet {
    pub fn with_audio(mut self, a: AudioStream) -> Self {
        self.audio = Some(a);
        self
    }

    pub fn with_video(mut self, v: VideoStream) -> Self {
        self.video = Some(v);
        self
    }

    pub fn with_images(mut self, i: ImageSet) -> Self {
        self.images = Some(i);
        self
    }

    pub fn has(&self, kind: ModalityKind) -> bool {
        match kind {
            ModalityKind::Audio => self.audio.is_some(),
            ModalityKind::Video => self.video.is_some(),
            ModalityKind::Images => self.images.is_some(),
        }
    }

    pub fn available(&self) -> BTreeSet<ModalityKind> {
        ModalityKind::ALL.iter().copied().filter(|k| self.has(*k)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.available().is_empty()
    }
}

// ---------------------------------------------------------------------------
// Plan directive
// ---------------------------------------------------------------------------

/// The planner's output: what to look at, in what arrangement, and how deep
/// to reason. `order` doubles as the modality selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDirective {
    pub task: TaskCategory,
    pub pathway: Pathway,
    #[serde(rename = "modalities")]
    pub order: Vec<ModalityKind>,
    pub format: TopologyFormat,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
}

fn default_provenance() -> Provenance {
    Provenance::Planner
}

/// A violated directive invariant.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum DirectiveViolation {
    #[error("modality order must be nonempty")]
    EmptyOrder,
    #[error("modality {0} listed more than once")]
    DuplicateModality(ModalityKind),
    #[error("interleaved format requires exactly the audio and video modalities")]
    InterleavedNeedsAudioVideo,
    #[error("modality {0} is not available in the current input")]
    UnavailableModality(ModalityKind),
}

/// Check a directive against its own invariants and the available modality
/// set. Returns every violation; empty means the directive is executable.
pub fn validate_directive(d: &PlanDirective, available: &BTreeSet<ModalityKind>) -> Vec<DirectiveViolation> {
    let mut violations = Vec::new();
    if d.order.is_empty() {
        violations.push(DirectiveViolation::EmptyOrder);
    }
    let mut seen = BTreeSet::new();
    for kind in &d.order {
        if !seen.insert(*kind) {
            violations.push(DirectiveViolation::DuplicateModality(*kind));
        }
    }
    if d.format == TopologyFormat::Interleaved {
        let wanted: BTreeSet<_> = [ModalityKind::Audio, ModalityKind::Video].into_iter().collect();
        if seen != wanted {
            violations.push(DirectiveViolation::InterleavedNeedsAudioVideo);
        }
    }
    for kind in &seen {
        if !available.contains(kind) {
            violations.push(DirectiveViolation::UnavailableModality(*kind));
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// Compositions
// ---------------------------------------------------------------------------

/// A closed time window in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeSpan {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        TimeSpan { start_s, end_s }
    }

    pub fn width(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// A media segment inside a composition. `refs` lists the frame/image
/// references that fall inside the span; it is empty for audio segments and
/// for empty video buckets (which are kept as explicit markers to preserve
/// alternation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaPart {
    pub kind: ModalityKind,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<TimeSpan>,
    #[serde(default)]
    pub refs: Vec<String>,
}

/// One element of a model input: text, or a media segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessagePart {
    Text(String),
    Media(MediaPart),
}

impl MessagePart {
    pub fn is_media(&self) -> bool {
        matches!(self, MessagePart::Media(_))
    }

    pub fn media_kind(&self) -> Option<ModalityKind> {
        match self {
            MessagePart::Media(m) => Some(m.kind),
            MessagePart::Text(_) => None,
        }
    }

    /// Stable descriptor for fingerprints: media as `kind[start-end]` with
    /// spans rounded to milliseconds, text as an fnv-1a hash of its content.
    pub fn descriptor(&self) -> String {
        match self {
            MessagePart::Text(t) => format!("text:{:016x}", fnv1a64(t)),
            MessagePart::Media(m) => match m.span {
                Some(span) => format!("{}[{:.3}-{:.3}]", m.kind, span.start_s, span.end_s),
                None => format!("{}[*]", m.kind),
            },
        }
    }
}

fn fnv1a64(data: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in data.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Ordered part descriptors of a composition; the stable identity used by
/// call logs, traces, and tests.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub Vec<String>);

impl Fingerprint {
    pub fn joined(&self) -> String {
        self.0.join("|")
    }

    /// Kinds of the media descriptors, in order.
    pub fn media_kinds(&self) -> Vec<ModalityKind> {
        self.0
            .iter()
            .filter(|d| !d.starts_with("text:"))
            .filter_map(|d| d.split('[').next().and_then(|k| k.parse().ok()))
            .collect()
    }

    pub fn media_count(&self) -> usize {
        self.0.iter().filter(|d| !d.starts_with("text:")).count()
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

/// An ordered sequence of parts sent to the model under a role prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageComposition {
    pub stage: Stage,
    pub role_prompt: String,
    pub parts: Vec<MessagePart>,
}

impl MessageComposition {
    pub fn new(stage: Stage, role_prompt: impl Into<String>, parts: Vec<MessagePart>) -> Result<Self, TypeError> {
        let role_prompt = role_prompt.into();
        if role_prompt.trim().is_empty() {
            return Err(TypeError::EmptyRolePrompt);
        }
        if parts.is_empty() {
            return Err(TypeError::EmptyComposition);
        }
        Ok(MessageComposition { stage, role_prompt, parts })
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint(self.parts.iter().map(MessagePart::descriptor).collect())
    }

    pub fn media_part_count(&self) -> usize {
        self.parts.iter().filter(|p| p.is_media()).count()
    }

    /// Media kinds in first-appearance order.
    pub fn media_kind_order(&self) -> Vec<ModalityKind> {
        let mut out = Vec::new();
        for part in &self.parts {
            if let Some(kind) = part.media_kind() {
                if !out.contains(&kind) {
                    out.push(kind);
                }
            }
        }
        out
    }

    /// All text parts joined by newlines (used by mock rule matching).
    pub fn text_content(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                MessagePart::Text(t) => Some(t.as_str()),
                MessagePart::Media(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---------------------------------------------------------------------------
// Rationales, answers, traces
// ---------------------------------------------------------------------------

/// Where a rationale segment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceSource {
    Audio,
    Video,
    Images,
    /// Evidence produced over all planned modalities in one pass.
    Joint,
}

impl From<ModalityKind> for EvidenceSource {
    fn from(kind: ModalityKind) -> Self {
        match kind {
            ModalityKind::Audio => EvidenceSource::Audio,
            ModalityKind::Video => EvidenceSource::Video,
            ModalityKind::Images => EvidenceSource::Images,
        }
    }
}

impl EvidenceSource {
    /// Fixed header used when aggregating per-modality evidence; joint
    /// segments carry no header.
    pub fn header(&self) -> Option<&'static str> {
        match self {
            EvidenceSource::Audio => Some("[AUDIO EVIDENCE]"),
            EvidenceSource::Video => Some("[VISUAL EVIDENCE]"),
            EvidenceSource::Images => Some("[FRAME EVIDENCE]"),
            EvidenceSource::Joint => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleSegment {
    pub source: EvidenceSource,
    pub text: String,
}

impl RationaleSegment {
    pub fn rendered(&self) -> String {
        match self.source.header() {
            Some(h) => format!("{h} {}", self.text),
            None => self.text.clone(),
        }
    }
}

/// Textual evidence produced by the reasoning stage; the only input the
/// analytical decision sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub segments: Vec<RationaleSegment>,
}

impl Rationale {
    pub fn joint(text: impl Into<String>) -> Self {
        Rationale { segments: vec![RationaleSegment { source: EvidenceSource::Joint, text: text.into() }] }
    }

    pub fn aggregated_text(&self) -> String {
        self.segments.iter().map(RationaleSegment::rendered).collect::<Vec<_>>().join("\n")
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// The final model output for a query. `raw_text` is always retained so
/// option-resolution failures stay observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice: Option<String>,
}

impl Answer {
    pub fn raw(text: impl Into<String>) -> Self {
        Answer { raw_text: text.into(), choice: None }
    }

    pub fn with_choice(mut self, choice: Option<String>, options: &[String]) -> Result<Self, TypeError> {
        if let Some(c) = &choice {
            if !options.iter().any(|o| o == c) {
                return Err(TypeError::ChoiceNotAnOption(c.clone()));
            }
        }
        self.choice = choice;
        Ok(self)
    }
}

/// One model call: which stage, what was sent (by fingerprint), and the
/// reported timings. `prefill_s` is absent when the backend cannot measure
/// time-to-first-token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    pub fingerprint: Fingerprint,
    pub prefill_s: Option<f64>,
    pub gen_s_per_tok: f64,
    pub tokens: u64,
}

impl CallRecord {
    /// Total model time accounted to this call.
    pub fn accounted_s(&self) -> f64 {
        self.prefill_s.unwrap_or(0.0) + self.gen_s_per_tok * self.tokens as f64
    }
}

/// Full execution record of one query. Failed runs keep whatever was
/// produced before the failure and record the error instead of panicking,
/// so batch evaluation never aborts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directive: Option<PlanDirective>,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<Rationale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Sum of per-call accounted times. Derived from reported timings rather
    /// than a wall clock so identical runs serialize identically.
    pub total_s: f64,
}

impl Trace {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn accounted_total(calls: &[CallRecord]) -> f64 {
        calls.iter().map(CallRecord::accounted_s).sum()
    }
}
