//! The end-to-end executor: plan, reason when the pathway is analytical,
//! decide, and capture the whole run as a trace. Failures become structured
//! failure traces rather than panics or errors so batch evaluation always
//! completes.

use serde::{Deserialize, Serialize};

use crate::backend::{DecodingParams, ModelClient};
use crate::decider::{self, extract_choice};
use crate::error::EngineError;
use crate::planner::{self, PlannerPolicy};
use crate::prompts::{DecideTemplate, PromptSet};
use crate::reasoner;
use crate::topology::BuildOptions;
use crate::types::{
    validate_directive, Answer, CallRecord, Pathway, PlanDirective, Query, Rationale, StreamSet, Trace,
};

/// Everything a run needs beyond the query, streams, and client.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub policy: PlannerPolicy,
    pub decoding: DecodingParams,
    pub template: DecideTemplate,
    pub build: BuildOptions,
    /// In-flight cap for parallel reasoning branches.
    pub max_in_flight: usize,
    /// Inject a directive and skip the planning call entirely. Used for
    /// fixed-topology ablations and unimodal baselines.
    pub plan_override: Option<PlanDirective>,
    pub prompts: PromptSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            policy: PlannerPolicy::default(),
            decoding: DecodingParams::default(),
            template: DecideTemplate::Open,
            build: BuildOptions::default(),
            max_in_flight: 4,
            plan_override: None,
            prompts: PromptSet::default(),
        }
    }
}

fn failed_trace(
    query: &Query,
    directive: Option<PlanDirective>,
    calls: Vec<CallRecord>,
    rationale: Option<Rationale>,
    err: EngineError,
) -> Trace {
    let total_s = Trace::accounted_total(&calls);
    Trace {
        id: query.id.clone(),
        directive,
        calls,
        rationale,
        answer: None,
        error: Some(err.to_string()),
        total_s,
    }
}

/// Run one query through the full chain. Never returns an error: anything
/// that goes wrong is recorded in the trace, so one query's failure cannot
/// affect another's result in a batch.
pub async fn run(query: &Query, streams: &StreamSet, cfg: &PipelineConfig, client: &dyn ModelClient) -> Trace {
    let mut calls: Vec<CallRecord> = Vec::new();

    // Plan, unless a validated override skips the call.
    let directive = match &cfg.plan_override {
        Some(overridden) => {
            let violations = validate_directive(overridden, &streams.available());
            if !violations.is_empty() {
                return failed_trace(query, None, calls, None, EngineError::InvalidOverride(violations));
            }
            overridden.clone()
        }
        None => {
            match planner::plan(query, streams, client, &cfg.policy, &cfg.prompts, &cfg.decoding).await {
                Ok(outcome) => {
                    calls.push(outcome.call);
                    outcome.directive
                }
                Err(e) => return failed_trace(query, None, calls, None, e.into()),
            }
        }
    };

    // Reason (analytical only), then decide.
    let mut rationale: Option<Rationale> = None;
    let answer_result: Result<Answer, EngineError> = match directive.pathway {
        Pathway::Intuitive => decider::decide_intuitive(
            &directive,
            streams,
            query,
            client,
            &cfg.prompts,
            cfg.template,
            &cfg.decoding,
            &cfg.build,
        )
        .await
        .map(|out| {
            calls.push(out.call);
            out.answer
        }),
        Pathway::Analytical => {
            match reasoner::reason(
                &directive,
                streams,
                query,
                client,
                &cfg.prompts,
                &cfg.decoding,
                &cfg.build,
                cfg.max_in_flight,
            )
            .await
            {
                Err(e) => Err(e),
                Ok(outcome) => {
                    calls.extend(outcome.calls);
                    rationale = Some(outcome.rationale.clone());
                    decider::decide_analytical(
                        &outcome.rationale,
                        query,
                        client,
                        &cfg.prompts,
                        cfg.template,
                        &cfg.decoding,
                    )
                    .await
                    .map(|out| {
                        calls.push(out.call);
                        out.answer
                    })
                }
            }
        }
    };

    match answer_result {
        Err(e) => failed_trace(query, Some(directive), calls, rationale, e),
        Ok(mut answer) => {
            if !query.options.is_empty() {
                answer.choice = extract_choice(&answer.raw_text, &query.options);
            }
            let total_s = Trace::accounted_total(&calls);
            Trace {
                id: query.id.clone(),
                directive: Some(directive),
                calls,
                rationale,
                answer: Some(answer),
                error: None,
                total_s,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory export
// ---------------------------------------------------------------------------

/// One stage-ordered training record in the JSONL hand-off format:
/// `{"id","plan":{...},"reason":"...","decide":"...","answer":"..."}`.
/// The reason section is present exactly when the pathway was analytical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub plan: PlanDirective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub decide: String,
    pub answer: String,
}

/// Export a successful trace as a trajectory record. The record mirrors
/// exactly what was exchanged at inference time; nothing is re-templated.
pub fn export_trajectory(trace: &Trace) -> Result<TrajectoryRecord, EngineError> {
    if let Some(err) = &trace.error {
        return Err(EngineError::Precondition(format!("cannot export a failed trace: {err}")));
    }
    let directive = trace
        .directive
        .clone()
        .ok_or_else(|| EngineError::Precondition("trace has no directive".into()))?;
    let answer = trace
        .answer
        .clone()
        .ok_or_else(|| EngineError::Precondition("trace has no answer".into()))?;
    Ok(TrajectoryRecord {
        id: trace.id.clone(),
        reason: trace.rationale.as_ref().map(Rationale::aggregated_text),
        decide: answer.raw_text.clone(),
        answer: answer.choice.unwrap_or(answer.raw_text),
        plan: directive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockClient, RuleMatcher};
    use crate::types::{AudioStream, Frame, ModalityKind, Provenance, Stage, TaskCategory, TopologyFormat, VideoStream};

    fn streams() -> StreamSet {
        StreamSet::default()
            .with_audio(AudioStream::new("a", 8.0, "a.wav").unwrap())
            .with_video(
                VideoStream::new(
                    "v",
                    8.0,
                    vec![
                        Frame { timestamp_s: 1.0, image: "f1".into() },
                        Frame { timestamp_s: 3.0, image: "f3".into() },
                    ],
                )
                .unwrap(),
            )
    }

    fn query() -> Query {
        Query::new("q1", "is a drum playing?", vec!["Yes".into(), "No".into()], Some("Yes".into())).unwrap()
    }

    fn plan_rule(json: &str) -> MockClient {
        MockClient::builder()
            .text_rule(RuleMatcher::stage(Stage::Plan), json)
            .text_rule(RuleMatcher::stage(Stage::Reason), "observed evidence")
            .text_rule(RuleMatcher::stage(Stage::Decide), "Yes")
            .default_response("?")
    }

    fn stages(trace: &Trace) -> Vec<Stage> {
        trace.calls.iter().map(|c| c.stage).collect()
    }

    #[tokio::test]
    async fn intuitive_run_is_plan_then_decide() {
        let mock =
            plan_rule(r#"{"task":"audio","pathway":"intuitive","modalities":["audio"],"format":"parallel"}"#);
        let trace = run(&query(), &streams(), &PipelineConfig::default(), &mock).await;
        assert!(trace.succeeded(), "{:?}", trace.error);
        assert_eq!(stages(&trace), vec![Stage::Plan, Stage::Decide]);
        assert!(trace.rationale.is_none());
        assert_eq!(trace.answer.as_ref().unwrap().choice.as_deref(), Some("Yes"));
    }

    #[tokio::test]
    async fn analytical_parallel_run_is_plan_reason2_decide() {
        let mock = plan_rule(
            r#"{"task":"cross-modal","pathway":"analytical","modalities":["audio","video"],"format":"sequential"}"#,
        );
        // Canonical format for cross-modal is sequential, so no repair: one
        // reason call. Use parallel to check the 1+2+1 law.
        let mock_parallel = plan_rule(
            r#"{"task":"audio","pathway":"analytical","modalities":["audio","video"],"format":"parallel"}"#,
        );
        let seq = run(&query(), &streams(), &PipelineConfig::default(), &mock).await;
        assert_eq!(stages(&seq), vec![Stage::Plan, Stage::Reason, Stage::Decide]);

        let par = run(&query(), &streams(), &PipelineConfig::default(), &mock_parallel).await;
        assert_eq!(stages(&par), vec![Stage::Plan, Stage::Reason, Stage::Reason, Stage::Decide]);
        assert!(par.rationale.is_some());
        // Analytical decide call carries no media.
        assert_eq!(par.calls.last().unwrap().fingerprint.media_count(), 0);
    }

    #[tokio::test]
    async fn plan_override_skips_the_plan_call_and_keeps_provenance() {
        let mock = MockClient::answering("No");
        let over = PlanDirective {
            task: TaskCategory::CrossModal,
            pathway: Pathway::Intuitive,
            order: vec![ModalityKind::Audio, ModalityKind::Video],
            format: TopologyFormat::Sequential,
            provenance: Provenance::Fallback,
        };
        let cfg = PipelineConfig { plan_override: Some(over), ..Default::default() };
        let trace = run(&query(), &streams(), &cfg, &mock).await;
        assert!(trace.succeeded());
        assert_eq!(stages(&trace), vec![Stage::Decide]);
        assert_eq!(trace.directive.as_ref().unwrap().provenance, Provenance::Fallback);
    }

    #[tokio::test]
    async fn invalid_override_fails_the_trace_without_calls() {
        let mock = MockClient::answering("x");
        let over = PlanDirective {
            task: TaskCategory::VisualCentric,
            pathway: Pathway::Intuitive,
            order: vec![ModalityKind::Images],
            format: TopologyFormat::Parallel,
            provenance: Provenance::Planner,
        };
        let cfg = PipelineConfig { plan_override: Some(over), ..Default::default() };
        let trace = run(&query(), &streams(), &cfg, &mock).await;
        assert!(!trace.succeeded());
        assert!(trace.calls.is_empty());
        assert!(trace.error.as_ref().unwrap().contains("not available"));
    }

    #[tokio::test]
    async fn backend_failure_yields_a_failed_trace_not_a_panic() {
        // Only the plan stage is scripted; the decide stage misses.
        let mock = MockClient::new(vec![crate::backend::MockRule::text(
            RuleMatcher::stage(Stage::Plan),
            r#"{"task":"audio","pathway":"intuitive","modalities":["audio"],"format":"parallel"}"#,
        )]);
        let trace = run(&query(), &streams(), &PipelineConfig::default(), &mock).await;
        assert!(!trace.succeeded());
        assert_eq!(stages(&trace), vec![Stage::Plan]);
        assert!(trace.error.as_ref().unwrap().contains("no mock rule matched"));
    }

    #[tokio::test]
    async fn pruned_modalities_never_appear_after_planning() {
        let mock =
            plan_rule(r#"{"task":"audio","pathway":"analytical","modalities":["audio"],"format":"parallel"}"#);
        let trace = run(&query(), &streams(), &PipelineConfig::default(), &mock).await;
        assert!(trace.succeeded());
        for call in trace.calls.iter().filter(|c| c.stage != Stage::Plan) {
            assert!(!call.fingerprint.media_kinds().contains(&ModalityKind::Video));
        }
    }

    #[tokio::test]
    async fn trajectory_export_roundtrips_and_tracks_pathway() {
        let analytical = plan_rule(
            r#"{"task":"audio","pathway":"analytical","modalities":["audio","video"],"format":"parallel"}"#,
        );
        let trace = run(&query(), &streams(), &PipelineConfig::default(), &analytical).await;
        let record = export_trajectory(&trace).unwrap();
        assert!(record.reason.is_some());
        assert_eq!(record.answer, "Yes");
        let line = serde_json::to_string(&record).unwrap();
        let parsed: TrajectoryRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed, record);
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        for key in ["id", "plan", "reason", "decide", "answer"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }

        let intuitive =
            plan_rule(r#"{"task":"audio","pathway":"intuitive","modalities":["audio"],"format":"parallel"}"#);
        let trace = run(&query(), &streams(), &PipelineConfig::default(), &intuitive).await;
        let record = export_trajectory(&trace).unwrap();
        assert!(record.reason.is_none());
        let line = serde_json::to_string(&record).unwrap();
        assert!(!line.contains("\"reason\""), "intuitive records omit the reason key");
    }

    #[tokio::test]
    async fn failed_traces_cannot_be_exported() {
        let mock = MockClient::new(vec![]);
        let trace = run(&query(), &streams(), &PipelineConfig::default(), &mock).await;
        assert!(!trace.succeeded());
        assert!(export_trajectory(&trace).is_err());
    }

    #[tokio::test]
    async fn trace_serializes_with_canonical_field_names() {
        let mock =
            plan_rule(r#"{"task":"audio","pathway":"intuitive","modalities":["audio"],"format":"parallel"}"#);
        let trace = run(&query(), &streams(), &PipelineConfig::default(), &mock).await;
        let value = serde_json::to_value(&trace).unwrap();
        assert!(value.get("id").is_some());
        assert!(value.get("total_s").is_some());
        let call = &value["calls"][0];
        for key in ["stage", "fingerprint", "prefill_s", "gen_s_per_tok", "tokens"] {
            assert!(call.get(key).is_some(), "missing calls[].{key}");
        }
        let directive = &value["directive"];
        for key in ["task", "pathway", "modalities", "format", "provenance"] {
            assert!(directive.get(key).is_some(), "missing directive.{key}");
        }
        // Round-trip.
        let parsed: Trace = serde_json::from_value(value).unwrap();
        assert_eq!(parsed, trace);
    }
}
