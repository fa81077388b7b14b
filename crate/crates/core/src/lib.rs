//! Adaptive modality-topology orchestration for omni-modal model inference.
//!
//! One backend model is reconfigured into three roles through role prompts:
//! a planner that selects, orders, and arranges modalities; a reasoner that
//! extracts evidence along the planned topology; and a decider that produces
//! the final answer either directly (intuitive pathway) or from the textual
//! evidence alone (analytical pathway). An evaluation harness measures the
//! structural biases this routing exists to control: order sensitivity,
//! adjacency-induced "yes" inflation, modality conflicts, and latency.

pub mod backend;
pub mod decider;
pub mod eval;
pub mod pipeline;
pub mod planner;
pub mod prompts;
pub mod reasoner;
pub mod topology;
pub mod types;

mod error;

pub use error::EngineError;
pub use types::{
    validate_directive, Answer, AudioStream, CallRecord, DirectiveViolation, EvidenceSource, Fingerprint,
    Frame, ImageSet, MediaPart, MessageComposition, MessagePart, ModalityKind, Pathway, PlanDirective,
    Provenance, Query, Rationale, RationaleSegment, Stage, StreamSet, TaskCategory, TimeSpan, TopologyFormat,
    Trace, TypeError, VideoStream,
};
