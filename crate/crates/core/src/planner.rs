//! The planning stage: build the text-only planning prompt, invoke the
//! backend, parse the structured directive out of whatever came back, and
//! repair or fall back so a run can always proceed.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendError, DecodingParams, ModelClient};
use crate::prompts::PromptSet;
use crate::types::{
    validate_directive, CallRecord, MessageComposition, MessagePart, ModalityKind, Pathway, PlanDirective,
    Provenance, Query, Stage, StreamSet, TaskCategory, TopologyFormat,
};

/// How strictly planner output is policed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerMode {
    /// Any violation discards the plan in favor of the fallback.
    Strict,
    /// Salvage what can be salvaged before falling back.
    #[default]
    Lenient,
}

impl FromStr for PlannerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(PlannerMode::Strict),
            "lenient" => Ok(PlannerMode::Lenient),
            other => Err(format!("unknown planner policy {other:?} (expected strict|lenient)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PlannerPolicy {
    pub mode: PlannerMode,
    /// In lenient mode, overwrite a format that contradicts the task's
    /// canonical format.
    pub repair_format_by_task: bool,
}

impl Default for PlannerPolicy {
    fn default() -> Self {
        PlannerPolicy { mode: PlannerMode::Lenient, repair_format_by_task: true }
    }
}

impl PlannerPolicy {
    pub fn strict() -> Self {
        PlannerPolicy { mode: PlannerMode::Strict, repair_format_by_task: false }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanParseError {
    #[error("no JSON object found in planner output")]
    NoJsonObject,
    #[error("planner output is missing the {0:?} field")]
    MissingField(&'static str),
    #[error("unknown value {value:?} for {field:?}")]
    UnknownValue { field: &'static str, value: String },
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no streams available to plan over")]
    NoStreams,
}

/// Build the planning composition. The planning pass is structurally
/// text-only: it sees the question, never the media.
pub fn build_plan_prompt(query: &Query, available: &BTreeSet<ModalityKind>, prompts: &PromptSet) -> MessageComposition {
    let role = prompts.plan_role(available);
    MessageComposition::new(Stage::Plan, role, vec![MessagePart::Text(query.text.clone())])
        .expect("plan prompt is nonempty by construction")
}

/// Find the first well-formed JSON object embedded anywhere in `text`.
fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (idx, ch) in text.char_indices() {
        if ch != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[idx..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

fn field<'a>(map: &'a serde_json::Map<String, Value>, name: &str) -> Option<&'a Value> {
    map.get(name)
        .or_else(|| map.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v))
}

fn parse_value<T: FromStr>(value: &Value, name: &'static str) -> Result<T, PlanParseError> {
    let s = value.as_str().ok_or_else(|| PlanParseError::UnknownValue { field: name, value: value.to_string() })?;
    s.parse().map_err(|_| PlanParseError::UnknownValue { field: name, value: s.to_string() })
}

/// Parse the canonical directive object
/// `{"task","pathway","modalities","format"}` out of free-form model text.
/// The first well-formed JSON object wins; field values are matched
/// case-insensitively against the enum spellings.
pub fn parse_plan(text: &str) -> Result<PlanDirective, PlanParseError> {
    let map = first_json_object(text).ok_or(PlanParseError::NoJsonObject)?;

    let task: TaskCategory = parse_value(field(&map, "task").ok_or(PlanParseError::MissingField("task"))?, "task")?;
    let pathway: Pathway =
        parse_value(field(&map, "pathway").ok_or(PlanParseError::MissingField("pathway"))?, "pathway")?;
    let format: TopologyFormat =
        parse_value(field(&map, "format").ok_or(PlanParseError::MissingField("format"))?, "format")?;

    let raw_order = field(&map, "modalities").ok_or(PlanParseError::MissingField("modalities"))?;
    let order = match raw_order {
        Value::Array(items) => items
            .iter()
            .map(|v| parse_value::<ModalityKind>(v, "modalities"))
            .collect::<Result<Vec<_>, _>>()?,
        // Tolerate a bare string for single-modality plans.
        Value::String(_) => vec![parse_value::<ModalityKind>(raw_order, "modalities")?],
        other => {
            return Err(PlanParseError::UnknownValue { field: "modalities", value: other.to_string() });
        }
    };

    Ok(PlanDirective { task, pathway, order, format, provenance: Provenance::Planner })
}

/// The canonical task-to-format mapping: temporal questions interleave,
/// single-modality questions isolate, cross-modal questions chain.
pub fn canonical_format(task: TaskCategory) -> TopologyFormat {
    match task {
        TaskCategory::TemporalCentric => TopologyFormat::Interleaved,
        TaskCategory::AudioCentric | TaskCategory::VisualCentric => TopologyFormat::Parallel,
        TaskCategory::CrossModal => TopologyFormat::Sequential,
    }
}

/// The robust default: audio then video, sequential, intuitive. Kinds are
/// intersected with what is actually available (fixed order); image-only
/// inputs degrade to an images-sequential plan.
pub fn fallback_directive(available: &BTreeSet<ModalityKind>) -> Result<PlanDirective, PlannerError> {
    if available.is_empty() {
        return Err(PlannerError::NoStreams);
    }
    let mut order: Vec<ModalityKind> = [ModalityKind::Audio, ModalityKind::Video]
        .into_iter()
        .filter(|k| available.contains(k))
        .collect();
    if order.is_empty() {
        order.push(ModalityKind::Images);
    }
    Ok(PlanDirective {
        task: TaskCategory::CrossModal,
        pathway: Pathway::Intuitive,
        order,
        format: TopologyFormat::Sequential,
        provenance: Provenance::Fallback,
    })
}

/// Make a directive executable, or fall back. Strict mode discards anything
/// invalid; lenient mode drops unavailable modalities, dedupes, optionally
/// re-aligns the format with the task canon, and only then gives up.
/// Applying this twice equals applying it once.
pub fn validate_and_repair(
    directive: PlanDirective,
    available: &BTreeSet<ModalityKind>,
    policy: &PlannerPolicy,
) -> Result<PlanDirective, PlannerError> {
    match policy.mode {
        PlannerMode::Strict => {
            if validate_directive(&directive, available).is_empty() {
                Ok(directive)
            } else {
                fallback_directive(available)
            }
        }
        PlannerMode::Lenient => {
            let mut repaired = directive.clone();
            let mut seen = BTreeSet::new();
            repaired.order.retain(|k| available.contains(k) && seen.insert(*k));
            let mut touched = repaired.order != directive.order;

            if policy.repair_format_by_task && repaired.format != canonical_format(repaired.task) {
                repaired.format = canonical_format(repaired.task);
                touched = true;
            }

            if validate_directive(&repaired, available).is_empty() {
                if touched {
                    repaired.provenance = Provenance::Repaired;
                }
                Ok(repaired)
            } else {
                fallback_directive(available)
            }
        }
    }
}

#[derive(Debug)]
pub struct PlanOutcome {
    pub directive: PlanDirective,
    pub call: CallRecord,
}

/// Run the planning stage end to end. Malformed model text never raises; it
/// resolves to the fallback directive. Only transport-level failures (and
/// the no-streams precondition) propagate.
pub async fn plan(
    query: &Query,
    streams: &StreamSet,
    client: &dyn ModelClient,
    policy: &PlannerPolicy,
    prompts: &PromptSet,
    params: &DecodingParams,
) -> Result<PlanOutcome, PlannerError> {
    let available = streams.available();
    if available.is_empty() {
        return Err(PlannerError::NoStreams);
    }
    let composition = build_plan_prompt(query, &available, prompts);
    let generated = client.generate(&composition, params).await?;
    let call = CallRecord {
        stage: Stage::Plan,
        fingerprint: composition.fingerprint(),
        prefill_s: generated.prefill_s,
        gen_s_per_tok: generated.gen_s_per_tok,
        tokens: generated.tokens,
    };
    let directive = match parse_plan(&generated.text) {
        Ok(parsed) => validate_and_repair(parsed, &available, policy)?,
        Err(_) => fallback_directive(&available)?,
    };
    Ok(PlanOutcome { directive, call })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockClient, RuleMatcher};
    use crate::types::{AudioStream, Frame, VideoStream};

    fn set(kinds: &[ModalityKind]) -> BTreeSet<ModalityKind> {
        kinds.iter().copied().collect()
    }

    fn av() -> BTreeSet<ModalityKind> {
        set(&[ModalityKind::Audio, ModalityKind::Video])
    }

    fn query() -> Query {
        Query::new("q1", "is the drum on beat?", vec![], None).unwrap()
    }

    fn av_streams() -> StreamSet {
        StreamSet::default()
            .with_audio(AudioStream::new("a", 8.0, "a.wav").unwrap())
            .with_video(
                VideoStream::new("v", 8.0, vec![Frame { timestamp_s: 1.0, image: "f1".into() }]).unwrap(),
            )
    }

    #[test]
    fn plan_prompt_is_text_only_and_schema_complete() {
        let comp = build_plan_prompt(&query(), &av(), &PromptSet::default());
        assert_eq!(comp.stage, Stage::Plan);
        assert_eq!(comp.media_part_count(), 0);
        let all_text = format!("{}\n{}", comp.role_prompt, comp.text_content());
        for token in ["\"audio\"", "\"visual\"", "\"temporal\"", "\"cross-modal\""] {
            assert!(all_text.contains(token));
        }
        for token in ["\"parallel\"", "\"sequential\"", "\"interleaved\""] {
            assert!(all_text.contains(token));
        }
        assert!(!all_text.contains("images"), "unavailable modalities must not be named");
    }

    #[test]
    fn parse_accepts_the_canonical_object() {
        let d = parse_plan(
            r#"{"task":"temporal","pathway":"intuitive","modalities":["audio","video"],"format":"interleaved"}"#,
        )
        .unwrap();
        assert_eq!(d.task, TaskCategory::TemporalCentric);
        assert_eq!(d.pathway, Pathway::Intuitive);
        assert_eq!(d.order, vec![ModalityKind::Audio, ModalityKind::Video]);
        assert_eq!(d.format, TopologyFormat::Interleaved);
        assert_eq!(d.provenance, Provenance::Planner);
    }

    #[test]
    fn parse_tolerates_prose_prefix_and_case() {
        let d = parse_plan(
            "Sure! Here is my plan: {\"TASK\":\"Audio\",\"pathway\":\"Intuitive\",\"modalities\":[\"AUDIO\"],\"format\":\"Parallel\"} hope that helps",
        )
        .unwrap();
        assert_eq!(d.task, TaskCategory::AudioCentric);
        assert_eq!(d.order, vec![ModalityKind::Audio]);
    }

    #[test]
    fn parse_rejects_unknown_enums_and_missing_fields() {
        let err = parse_plan(r#"{"task":"musical","pathway":"intuitive","modalities":["audio"],"format":"parallel"}"#)
            .unwrap_err();
        assert_eq!(err, PlanParseError::UnknownValue { field: "task", value: "musical".into() });
        assert_eq!(parse_plan("no braces at all"), Err(PlanParseError::NoJsonObject));
        assert_eq!(
            parse_plan(r#"{"task":"audio"}"#),
            Err(PlanParseError::MissingField("pathway"))
        );
        // A broken object followed by a well-formed one: the well-formed one wins.
        let d = parse_plan(
            r#"{oops} then {"task":"visual","pathway":"analytical","modalities":["video"],"format":"parallel"}"#,
        )
        .unwrap();
        assert_eq!(d.task, TaskCategory::VisualCentric);
    }

    #[test]
    fn canonical_format_table() {
        assert_eq!(canonical_format(TaskCategory::TemporalCentric), TopologyFormat::Interleaved);
        assert_eq!(canonical_format(TaskCategory::AudioCentric), TopologyFormat::Parallel);
        assert_eq!(canonical_format(TaskCategory::VisualCentric), TopologyFormat::Parallel);
        assert_eq!(canonical_format(TaskCategory::CrossModal), TopologyFormat::Sequential);
    }

    #[test]
    fn fallback_is_audio_then_video_sequential_intuitive() {
        let d = fallback_directive(&av()).unwrap();
        assert_eq!(d.order, vec![ModalityKind::Audio, ModalityKind::Video]);
        assert_eq!(d.format, TopologyFormat::Sequential);
        assert_eq!(d.pathway, Pathway::Intuitive);
        assert_eq!(d.provenance, Provenance::Fallback);
        // Fixpoint: the fallback always validates.
        assert!(validate_directive(&d, &av()).is_empty());
    }

    #[test]
    fn fallback_intersects_with_available() {
        let d = fallback_directive(&set(&[ModalityKind::Video])).unwrap();
        assert_eq!(d.order, vec![ModalityKind::Video]);
        let d = fallback_directive(&set(&[ModalityKind::Images])).unwrap();
        assert_eq!(d.order, vec![ModalityKind::Images]);
        assert!(matches!(fallback_directive(&BTreeSet::new()), Err(PlannerError::NoStreams)));
    }

    fn lenient() -> PlannerPolicy {
        PlannerPolicy::default()
    }

    #[test]
    fn unrepairable_interleave_falls_back() {
        let d = PlanDirective {
            task: TaskCategory::TemporalCentric,
            pathway: Pathway::Intuitive,
            order: vec![ModalityKind::Audio],
            format: TopologyFormat::Interleaved,
            provenance: Provenance::Planner,
        };
        let repaired = validate_and_repair(d, &av(), &lenient()).unwrap();
        assert_eq!(repaired.provenance, Provenance::Fallback);
        assert_eq!(repaired.order, vec![ModalityKind::Audio, ModalityKind::Video]);
    }

    #[test]
    fn format_canon_repair_marks_provenance() {
        let d = PlanDirective {
            task: TaskCategory::AudioCentric,
            pathway: Pathway::Intuitive,
            order: vec![ModalityKind::Audio, ModalityKind::Video],
            format: TopologyFormat::Sequential,
            provenance: Provenance::Planner,
        };
        let repaired = validate_and_repair(d, &av(), &lenient()).unwrap();
        assert_eq!(repaired.format, TopologyFormat::Parallel);
        assert_eq!(repaired.provenance, Provenance::Repaired);
        assert_eq!(repaired.order, vec![ModalityKind::Audio, ModalityKind::Video]);
    }

    #[test]
    fn valid_directive_is_untouched_in_strict_mode() {
        let d = PlanDirective {
            task: TaskCategory::CrossModal,
            pathway: Pathway::Analytical,
            order: vec![ModalityKind::Audio, ModalityKind::Video],
            format: TopologyFormat::Sequential,
            provenance: Provenance::Planner,
        };
        let out = validate_and_repair(d.clone(), &av(), &PlannerPolicy::strict()).unwrap();
        assert_eq!(out, d);
        assert_eq!(out.provenance, Provenance::Planner);
    }

    #[test]
    fn strict_mode_discards_any_violation() {
        let d = PlanDirective {
            task: TaskCategory::VisualCentric,
            pathway: Pathway::Intuitive,
            order: vec![ModalityKind::Images],
            format: TopologyFormat::Parallel,
            provenance: Provenance::Planner,
        };
        let out = validate_and_repair(d, &av(), &PlannerPolicy::strict()).unwrap();
        assert_eq!(out.provenance, Provenance::Fallback);
    }

    #[test]
    fn lenient_drops_unavailable_modality() {
        let d = PlanDirective {
            task: TaskCategory::VisualCentric,
            pathway: Pathway::Intuitive,
            order: vec![ModalityKind::Video, ModalityKind::Images],
            format: TopologyFormat::Parallel,
            provenance: Provenance::Planner,
        };
        let out = validate_and_repair(d, &av(), &lenient()).unwrap();
        assert_eq!(out.order, vec![ModalityKind::Video]);
        assert_eq!(out.provenance, Provenance::Repaired);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_kinds(max: usize) -> impl Strategy<Value = Vec<ModalityKind>> {
            proptest::collection::vec(
                prop_oneof![Just(ModalityKind::Audio), Just(ModalityKind::Video), Just(ModalityKind::Images)],
                0..max,
            )
        }

        fn arb_directive() -> impl Strategy<Value = PlanDirective> {
            (
                prop_oneof![
                    Just(TaskCategory::AudioCentric),
                    Just(TaskCategory::VisualCentric),
                    Just(TaskCategory::TemporalCentric),
                    Just(TaskCategory::CrossModal)
                ],
                prop_oneof![Just(Pathway::Intuitive), Just(Pathway::Analytical)],
                arb_kinds(5),
                prop_oneof![
                    Just(TopologyFormat::Parallel),
                    Just(TopologyFormat::Sequential),
                    Just(TopologyFormat::Interleaved)
                ],
            )
                .prop_map(|(task, pathway, order, format)| PlanDirective {
                    task,
                    pathway,
                    order,
                    format,
                    provenance: Provenance::Planner,
                })
        }

        fn arb_policy() -> impl Strategy<Value = PlannerPolicy> {
            (prop_oneof![Just(PlannerMode::Strict), Just(PlannerMode::Lenient)], proptest::bool::ANY)
                .prop_map(|(mode, repair)| PlannerPolicy { mode, repair_format_by_task: repair })
        }

        proptest! {
            // Applying repair twice equals applying it once, and the result
            // always validates against the available set.
            #[test]
            fn repair_is_idempotent_and_sound(
                directive in arb_directive(),
                policy in arb_policy(),
                available_kinds in arb_kinds(4),
            ) {
                let mut available: BTreeSet<ModalityKind> = available_kinds.into_iter().collect();
                available.insert(ModalityKind::Audio); // keep the fallback satisfiable
                let once = validate_and_repair(directive, &available, &policy).unwrap();
                prop_assert!(validate_directive(&once, &available).is_empty());
                let twice = validate_and_repair(once.clone(), &available, &policy).unwrap();
                prop_assert_eq!(once, twice);
            }

            // The fallback always validates, for every nonempty availability.
            #[test]
            fn fallback_is_a_fixpoint(available_kinds in arb_kinds(4)) {
                let available: BTreeSet<ModalityKind> = available_kinds.into_iter().collect();
                prop_assume!(!available.is_empty());
                let fallback = fallback_directive(&available).unwrap();
                prop_assert!(validate_directive(&fallback, &available).is_empty());
                prop_assert_eq!(fallback.provenance, Provenance::Fallback);
                prop_assert_eq!(fallback.format, TopologyFormat::Sequential);
            }
        }
    }

    #[tokio::test]
    async fn plan_accepts_scripted_valid_output() {
        let mock = MockClient::builder()
            .text_rule(
                RuleMatcher::stage(Stage::Plan),
                r#"{"task":"temporal","pathway":"analytical","modalities":["audio","video"],"format":"interleaved"}"#,
            )
            .default_response("x");
        let out = plan(&query(), &av_streams(), &mock, &lenient(), &PromptSet::default(), &DecodingParams::default())
            .await
            .unwrap();
        assert_eq!(out.directive.task, TaskCategory::TemporalCentric);
        assert_eq!(out.directive.format, TopologyFormat::Interleaved);
        assert_eq!(out.call.stage, Stage::Plan);
        // Plan-stage media isolation, observed on the wire.
        let log = mock.call_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].fingerprint.media_count(), 0);
    }

    #[tokio::test]
    async fn plan_falls_back_on_prose() {
        let mock = MockClient::answering("I don't know");
        let out = plan(&query(), &av_streams(), &mock, &lenient(), &PromptSet::default(), &DecodingParams::default())
            .await
            .unwrap();
        assert_eq!(out.directive.provenance, Provenance::Fallback);
        assert_eq!(out.directive.order, vec![ModalityKind::Audio, ModalityKind::Video]);
    }

    #[tokio::test]
    async fn plan_repairs_unavailable_modalities_in_lenient_mode() {
        let mock = MockClient::builder()
            .text_rule(
                RuleMatcher::stage(Stage::Plan),
                r#"{"task":"visual","pathway":"intuitive","modalities":["video","images"],"format":"parallel"}"#,
            )
            .default_response("x");
        let out = plan(&query(), &av_streams(), &mock, &lenient(), &PromptSet::default(), &DecodingParams::default())
            .await
            .unwrap();
        assert_eq!(out.directive.order, vec![ModalityKind::Video]);
        assert_eq!(out.directive.provenance, Provenance::Repaired);
    }
}
