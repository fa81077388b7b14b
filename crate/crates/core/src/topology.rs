//! Pure composition builders: sequential concatenation, parallel isolation,
//! and audio/video interleaving with exact-reconstruction segmentation.
//!
//! Everything here is a stateless function of its inputs; no backend calls
//! are ever issued from this module.

use thiserror::Error;

use crate::types::{
    AudioStream, Frame, ImageSet, MediaPart, MessagePart, ModalityKind, StreamSet, TimeSpan, VideoStream,
};

/// Default mismatch tolerance between audio and video durations.
pub const DEFAULT_DURATION_TOLERANCE_S: f64 = 0.050;
/// Default interleave density when a directive does not pin one.
pub const DEFAULT_INTERLEAVE_DENSITY: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("segment count must be >= 1")]
    ZeroSegments,
    #[error("stream duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("missing {0} stream for the planned order")]
    MissingStream(ModalityKind),
    #[error("image set {0:?} has no frames")]
    EmptyImageSet(String),
    #[error("audio/video duration mismatch: {0:.3}s vs {1:.3}s exceeds tolerance {2:.3}s")]
    DurationMismatch(f64, f64, f64),
    #[error("segment plan covers {0:.3}s but the stream lasts {1:.3}s (tolerance {2:.3}s)")]
    PlanDurationMismatch(f64, f64, f64),
}

/// Options shared by the composition builders.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub interleave_k: u32,
    pub duration_tolerance_s: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            interleave_k: DEFAULT_INTERLEAVE_DENSITY,
            duration_tolerance_s: DEFAULT_DURATION_TOLERANCE_S,
        }
    }
}

/// `k` contiguous windows that partition `[0, duration]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    windows: Vec<TimeSpan>,
}

impl SegmentPlan {
    /// Equal-duration windows; the last window absorbs any floating-point
    /// remainder so the union is always exactly `[0, duration]`.
    pub fn equal_windows(duration_s: f64, k: u32) -> Result<Self, TopologyError> {
        if k < 1 {
            return Err(TopologyError::ZeroSegments);
        }
        if duration_s <= 0.0 || !duration_s.is_finite() {
            return Err(TopologyError::BadDuration(duration_s));
        }
        let k_us = k as usize;
        let mut bounds = Vec::with_capacity(k_us + 1);
        for i in 0..=k_us {
            bounds.push(duration_s * i as f64 / f64::from(k));
        }
        bounds[0] = 0.0;
        bounds[k_us] = duration_s;
        let windows = (0..k_us).map(|i| TimeSpan::new(bounds[i], bounds[i + 1])).collect();
        Ok(SegmentPlan { windows })
    }

    pub fn k(&self) -> usize {
        self.windows.len()
    }

    pub fn windows(&self) -> &[TimeSpan] {
        &self.windows
    }

    pub fn duration_s(&self) -> f64 {
        self.windows.last().map(|w| w.end_s).unwrap_or(0.0)
    }
}

/// Split an audio stream into `k` contiguous segments whose concatenation
/// reproduces the original span exactly.
pub fn segment_audio(audio: &AudioStream, k: u32) -> Result<Vec<MediaPart>, TopologyError> {
    let plan = SegmentPlan::equal_windows(audio.duration_s, k)?;
    Ok(plan
        .windows()
        .iter()
        .map(|w| MediaPart { kind: ModalityKind::Audio, source: audio.id.clone(), span: Some(*w), refs: vec![] })
        .collect())
}

/// Assign every frame to exactly one window by its timestamp. Windows are
/// half-open; the last window is closed so the final boundary (and any
/// within-tolerance overhang) lands in the last bucket.
pub fn segment_video(
    video: &VideoStream,
    plan: &SegmentPlan,
    tolerance_s: f64,
) -> Result<Vec<Vec<Frame>>, TopologyError> {
    let plan_dur = plan.duration_s();
    if (plan_dur - video.duration_s).abs() > tolerance_s {
        return Err(TopologyError::PlanDurationMismatch(plan_dur, video.duration_s, tolerance_s));
    }
    let k = plan.k();
    let mut buckets: Vec<Vec<Frame>> = vec![Vec::new(); k];
    for frame in &video.frames {
        let idx = plan
            .windows()
            .partition_point(|w| w.end_s <= frame.timestamp_s)
            .min(k - 1);
        buckets[idx].push(frame.clone());
    }
    Ok(buckets)
}

/// Build the alternating segment list `(A_1, V_1, ..., A_k, V_k)`. Audio
/// segments reconstruct the original stream; video buckets partition the
/// frame list. Empty buckets are emitted as empty markers so the strict
/// alternation (and therefore position semantics) is preserved.
pub fn interleave(
    audio: &AudioStream,
    video: &VideoStream,
    k: u32,
    tolerance_s: f64,
) -> Result<Vec<MessagePart>, TopologyError> {
    if (audio.duration_s - video.duration_s).abs() > tolerance_s {
        return Err(TopologyError::DurationMismatch(audio.duration_s, video.duration_s, tolerance_s));
    }
    let audio_parts = segment_audio(audio, k)?;
    let plan = SegmentPlan::equal_windows(audio.duration_s, k)?;
    let buckets = segment_video(video, &plan, tolerance_s)?;

    let mut parts = Vec::with_capacity(2 * k as usize);
    for (audio_part, (window, bucket)) in audio_parts.into_iter().zip(plan.windows().iter().zip(buckets)) {
        parts.push(MessagePart::Media(audio_part));
        parts.push(MessagePart::Media(MediaPart {
            kind: ModalityKind::Video,
            source: video.id.clone(),
            span: Some(*window),
            refs: bucket.into_iter().map(|f| f.image).collect(),
        }));
    }
    Ok(parts)
}

fn full_media_part(kind: ModalityKind, streams: &StreamSet) -> Result<MediaPart, TopologyError> {
    match kind {
        ModalityKind::Audio => {
            let a = streams.audio.as_ref().ok_or(TopologyError::MissingStream(kind))?;
            Ok(MediaPart {
                kind,
                source: a.id.clone(),
                span: Some(TimeSpan::new(0.0, a.duration_s)),
                refs: vec![],
            })
        }
        ModalityKind::Video => {
            let v = streams.video.as_ref().ok_or(TopologyError::MissingStream(kind))?;
            Ok(MediaPart {
                kind,
                source: v.id.clone(),
                span: Some(TimeSpan::new(0.0, v.duration_s)),
                refs: v.frames.iter().map(|f| f.image.clone()).collect(),
            })
        }
        ModalityKind::Images => {
            let set = streams.images.as_ref().ok_or(TopologyError::MissingStream(kind))?;
            if set.frames.is_empty() {
                return Err(TopologyError::EmptyImageSet(set.id.clone()));
            }
            Ok(MediaPart { kind, source: set.id.clone(), span: None, refs: set.frames.clone() })
        }
    }
}

/// One composition body: every planned modality as a contiguous block, in
/// exactly the planned order, followed by the query text.
pub fn build_sequential(
    order: &[ModalityKind],
    streams: &StreamSet,
    query_text: &str,
) -> Result<Vec<MessagePart>, TopologyError> {
    let mut parts = Vec::with_capacity(order.len() + 1);
    for kind in order {
        parts.push(MessagePart::Media(full_media_part(*kind, streams)?));
    }
    parts.push(MessagePart::Text(query_text.to_string()));
    Ok(parts)
}

/// One single-modality composition body per planned modality, each paired
/// with the query text, listed in the planned order.
pub fn build_parallel(
    order: &[ModalityKind],
    streams: &StreamSet,
    query_text: &str,
) -> Result<Vec<Vec<MessagePart>>, TopologyError> {
    order
        .iter()
        .map(|kind| {
            Ok(vec![
                MessagePart::Media(full_media_part(*kind, streams)?),
                MessagePart::Text(query_text.to_string()),
            ])
        })
        .collect()
}

/// Convenience for the degenerate check used by builders of image sets.
pub fn image_set_part(set: &ImageSet) -> Result<MediaPart, TopologyError> {
    if set.frames.is_empty() {
        return Err(TopologyError::EmptyImageSet(set.id.clone()));
    }
    Ok(MediaPart {
        kind: ModalityKind::Images,
        source: set.id.clone(),
        span: None,
        refs: set.frames.clone(),
    })
}
