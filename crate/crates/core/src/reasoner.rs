//! Phase 1 of the analytical pathway: evidence extraction along the planned
//! topology. Sequential and interleaved plans make one conditioned pass;
//! parallel plans make one isolated pass per modality and aggregate the
//! rationales in plan order.

use std::sync::Arc;

use tokio::sync::Semaphore;

use crate::backend::{DecodingParams, ModelClient};
use crate::error::EngineError;
use crate::prompts::PromptSet;
use crate::topology::{self, BuildOptions, TopologyError};
use crate::types::{
    CallRecord, MessageComposition, MessagePart, ModalityKind, Pathway, PlanDirective, Query, Rationale,
    RationaleSegment, Stage, StreamSet, TopologyFormat,
};

#[derive(Debug)]
pub struct ReasonOutcome {
    pub rationale: Rationale,
    pub calls: Vec<CallRecord>,
}

fn record(composition: &MessageComposition, generated: &crate::backend::GenerateResult) -> CallRecord {
    CallRecord {
        stage: composition.stage,
        fingerprint: composition.fingerprint(),
        prefill_s: generated.prefill_s,
        gen_s_per_tok: generated.gen_s_per_tok,
        tokens: generated.tokens,
    }
}

/// Execute the reasoning stage for an analytical directive.
///
/// Parallel branches may run concurrently up to `max_in_flight`, but the
/// rationale segments are always assembled in the directive's order,
/// independent of branch completion timing. A failure on any branch fails
/// the whole operation; no partial rationale is ever returned.
#[allow(clippy::too_many_arguments)]
pub async fn reason(
    directive: &PlanDirective,
    streams: &StreamSet,
    query: &Query,
    client: &dyn ModelClient,
    prompts: &PromptSet,
    params: &DecodingParams,
    opts: &BuildOptions,
    max_in_flight: usize,
) -> Result<ReasonOutcome, EngineError> {
    if directive.pathway != Pathway::Analytical {
        return Err(EngineError::Precondition("reasoning runs only on the analytical pathway".into()));
    }

    match directive.format {
        TopologyFormat::Sequential => {
            let parts = topology::build_sequential(&directive.order, streams, &query.text)?;
            let composition = MessageComposition::new(Stage::Reason, prompts.reason.clone(), parts)?;
            let generated = client.generate(&composition, params).await?;
            Ok(ReasonOutcome {
                calls: vec![record(&composition, &generated)],
                rationale: Rationale::joint(generated.text),
            })
        }
        TopologyFormat::Interleaved => {
            let audio = streams.audio.as_ref().ok_or(TopologyError::MissingStream(ModalityKind::Audio))?;
            let video = streams.video.as_ref().ok_or(TopologyError::MissingStream(ModalityKind::Video))?;
            let mut parts = topology::interleave(audio, video, opts.interleave_k, opts.duration_tolerance_s)?;
            parts.push(MessagePart::Text(query.text.clone()));
            let composition = MessageComposition::new(Stage::Reason, prompts.reason.clone(), parts)?;
            let generated = client.generate(&composition, params).await?;
            Ok(ReasonOutcome {
                calls: vec![record(&composition, &generated)],
                rationale: Rationale::joint(generated.text),
            })
        }
        TopologyFormat::Parallel => {
            let part_sets = topology::build_parallel(&directive.order, streams, &query.text)?;
            let compositions = part_sets
                .into_iter()
                .map(|parts| MessageComposition::new(Stage::Reason, prompts.reason.clone(), parts))
                .collect::<Result<Vec<_>, _>>()?;

            let semaphore = Arc::new(Semaphore::new(max_in_flight.max(1)));
            let branches = compositions.iter().map(|composition| {
                let semaphore = Arc::clone(&semaphore);
                async move {
                    let _permit = semaphore.acquire().await.expect("semaphore never closes");
                    client.generate(composition, params).await
                }
            });
            let results = futures::future::try_join_all(branches).await?;

            let mut segments = Vec::with_capacity(results.len());
            let mut calls = Vec::with_capacity(results.len());
            for ((kind, composition), generated) in directive.order.iter().zip(&compositions).zip(&results) {
                segments.push(RationaleSegment { source: (*kind).into(), text: generated.text.clone() });
                calls.push(record(composition, generated));
            }
            Ok(ReasonOutcome { rationale: Rationale { segments }, calls })
        }
    }
}
