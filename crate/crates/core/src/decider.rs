//! Phase 2: final arbitration. The intuitive path maps the structured
//! modalities straight to an answer in one call; the analytical path decides
//! over the textual rationales alone, physically isolated from raw media.
//! Answer-to-option resolution lives here too.

use crate::backend::{DecodingParams, GenerateResult, ModelClient};
use crate::error::EngineError;
use crate::prompts::{DecideTemplate, PromptSet};
use crate::topology::{self, BuildOptions, TopologyError};
use crate::types::{
    Answer, CallRecord, MessageComposition, MessagePart, ModalityKind, Pathway, PlanDirective, Query,
    Rationale, Stage, StreamSet, TopologyFormat,
};

/// Sentinel inserted between modality blocks when an intuitive plan asks for
/// the parallel format: the single decision call still renders each modality
/// as an independent, delimited block.
pub const PARALLEL_BLOCK_DELIMITER: &str = "----- independent modality block -----";

#[derive(Debug)]
pub struct DecideOutcome {
    pub answer: Answer,
    pub call: CallRecord,
}

fn record(composition: &MessageComposition, generated: &GenerateResult) -> CallRecord {
    CallRecord {
        stage: composition.stage,
        fingerprint: composition.fingerprint(),
        prefill_s: generated.prefill_s,
        gen_s_per_tok: generated.gen_s_per_tok,
        tokens: generated.tokens,
    }
}

/// Render the query block the decider sees. The multiple-choice template
/// enumerates the options as lettered lines; the open template passes the
/// question through untouched.
pub fn render_query_block(query: &Query, template: DecideTemplate) -> String {
    match template {
        DecideTemplate::Open => query.text.clone(),
        DecideTemplate::MultipleChoice if query.options.is_empty() => query.text.clone(),
        DecideTemplate::MultipleChoice => {
            let mut block = format!("{}\nOptions:", query.text);
            for (i, option) in query.options.iter().enumerate() {
                if i < 26 {
                    block.push_str(&format!("\n{}. {}", (b'A' + i as u8) as char, option));
                } else {
                    block.push_str(&format!("\n{}. {}", i + 1, option));
                }
            }
            block
        }
    }
}

/// Fast mapping over the structured modalities: exactly one decision call
/// whose composition follows the directive's format.
#[allow(clippy::too_many_arguments)]
pub async fn decide_intuitive(
    directive: &PlanDirective,
    streams: &StreamSet,
    query: &Query,
    client: &dyn ModelClient,
    prompts: &PromptSet,
    template: DecideTemplate,
    params: &DecodingParams,
    opts: &BuildOptions,
) -> Result<DecideOutcome, EngineError> {
    if directive.pathway != Pathway::Intuitive {
        return Err(EngineError::Precondition("intuitive decision requires the intuitive pathway".into()));
    }
    let query_block = render_query_block(query, template);

    let parts = match directive.format {
        TopologyFormat::Sequential => topology::build_sequential(&directive.order, streams, &query_block)?,
        TopologyFormat::Interleaved => {
            let audio = streams.audio.as_ref().ok_or(TopologyError::MissingStream(ModalityKind::Audio))?;
            let video = streams.video.as_ref().ok_or(TopologyError::MissingStream(ModalityKind::Video))?;
            let mut parts = topology::interleave(audio, video, opts.interleave_k, opts.duration_tolerance_s)?;
            parts.push(MessagePart::Text(query_block));
            parts
        }
        TopologyFormat::Parallel => {
            let isolated = topology::build_parallel(&directive.order, streams, &query_block)?;
            let mut parts = Vec::new();
            for (i, mut set) in isolated.into_iter().enumerate() {
                if i > 0 {
                    parts.push(MessagePart::Text(PARALLEL_BLOCK_DELIMITER.to_string()));
                }
                // Keep only the media part of each isolated set; the query
                // block follows once, after all blocks.
                parts.push(set.remove(0));
            }
            parts.push(MessagePart::Text(query_block));
            parts
        }
    };

    let composition = MessageComposition::new(Stage::Decide, prompts.decide(template), parts)?;
    let generated = client.generate(&composition, params).await?;
    Ok(DecideOutcome { call: record(&composition, &generated), answer: Answer::raw(generated.text) })
}

/// Evidence-anchored decision: one text-only call over the aggregated
/// rationales and the query. The composition carries zero media parts, so
/// the arbiter is structurally isolated from raw sensory input.
pub async fn decide_analytical(
    rationale: &Rationale,
    query: &Query,
    client: &dyn ModelClient,
    prompts: &PromptSet,
    template: DecideTemplate,
    params: &DecodingParams,
) -> Result<DecideOutcome, EngineError> {
    if rationale.is_empty() {
        return Err(EngineError::Precondition("analytical decision requires a nonempty rationale".into()));
    }
    let mut parts: Vec<MessagePart> =
        rationale.segments.iter().map(|s| MessagePart::Text(s.rendered())).collect();
    parts.push(MessagePart::Text(render_query_block(query, template)));

    let composition = MessageComposition::new(Stage::Decide, prompts.decide(template), parts)?;
    debug_assert_eq!(composition.media_part_count(), 0);
    let generated = client.generate(&composition, params).await?;
    Ok(DecideOutcome { call: record(&composition, &generated), answer: Answer::raw(generated.text) })
}

// ---------------------------------------------------------------------------
// Answer-to-option resolution
// ---------------------------------------------------------------------------

/// Case-fold and strip punctuation, collapsing runs of whitespace.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(s: &str) -> Vec<String> {
    normalize_text(s).split_whitespace().map(str::to_string).collect()
}

/// Letter/number matcher over the raw answer text. A token counts as an
/// option letter only when it is a single letter that is either uppercase or
/// visibly marked with punctuation ("(b)", "b)", "b."), which keeps the
/// English article "a" from resolving to the first option.
fn letter_or_number_match(raw: &str, options: &[String]) -> Option<String> {
    for token in raw.split_whitespace() {
        let stripped: String = token.chars().filter(|c| c.is_alphanumeric()).collect();
        if stripped.is_empty() {
            continue;
        }
        let had_punctuation = stripped.chars().count() != token.chars().count();
        if stripped.chars().count() == 1 {
            let ch = stripped.chars().next().unwrap();
            if ch.is_ascii_alphabetic() && (ch.is_ascii_uppercase() || had_punctuation) {
                let idx = (ch.to_ascii_uppercase() as u8 - b'A') as usize;
                if idx < options.len() {
                    return Some(options[idx].clone());
                }
            }
        }
        if stripped.chars().all(|c| c.is_ascii_digit()) {
            if let Ok(n) = stripped.parse::<usize>() {
                if (1..=options.len()).contains(&n) {
                    return Some(options[n - 1].clone());
                }
            }
        }
    }
    None
}

/// Does `needle`'s token sequence appear contiguously inside `haystack`?
fn contains_token_seq(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// Resolve a raw answer to one of the query's option labels.
///
/// Matchers fire in priority order: exact option text (after normalization),
/// option letter/number, then unique token-level substring. Ties inside a
/// matcher resolve to the first option in presentation order. `None` is the
/// explicit unresolved outcome; evaluation counts it as incorrect.
pub fn extract_choice(raw: &str, options: &[String]) -> Option<String> {
    if options.is_empty() {
        return None;
    }
    let normalized = normalize_text(raw);

    // Exact text match.
    for option in options {
        if normalize_text(option) == normalized {
            return Some(option.clone());
        }
    }

    // Option letter/number.
    if let Some(label) = letter_or_number_match(raw, options) {
        return Some(label);
    }

    // Unique token-subsequence containment.
    let answer_tokens = tokens(raw);
    let mut hits = options.iter().filter(|o| contains_token_seq(&answer_tokens, &tokens(o)));
    match (hits.next(), hits.next()) {
        (Some(only), None) => Some(only.clone()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockClient, RuleMatcher};
    use crate::types::{AudioStream, Frame, Provenance, RationaleSegment, TaskCategory, VideoStream};
    use proptest::prelude::*;

    fn streams() -> StreamSet {
        StreamSet::default()
            .with_audio(AudioStream::new("a", 8.0, "a.wav").unwrap())
            .with_video(
                VideoStream::new("v", 8.0, vec![Frame { timestamp_s: 2.0, image: "f2".into() }]).unwrap(),
            )
    }

    fn query() -> Query {
        Query::new("q", "what do you hear?", vec![], None).unwrap()
    }

    fn directive(order: &[ModalityKind], format: TopologyFormat) -> PlanDirective {
        PlanDirective {
            task: TaskCategory::AudioCentric,
            pathway: Pathway::Intuitive,
            order: order.to_vec(),
            format,
            provenance: Provenance::Planner,
        }
    }

    #[tokio::test]
    async fn intuitive_sequential_is_one_media_then_text_call() {
        let mock = MockClient::answering("an answer");
        let d = directive(&[ModalityKind::Audio, ModalityKind::Video], TopologyFormat::Sequential);
        let out = decide_intuitive(
            &d,
            &streams(),
            &query(),
            &mock,
            &PromptSet::default(),
            DecideTemplate::Open,
            &DecodingParams::default(),
            &BuildOptions::default(),
        )
        .await
        .unwrap();
        assert_eq!(mock.call_log().len(), 1);
        assert_eq!(out.call.stage, Stage::Decide);
        assert_eq!(
            out.call.fingerprint.media_kinds(),
            vec![ModalityKind::Audio, ModalityKind::Video]
        );
    }

    #[tokio::test]
    async fn intuitive_parallel_singleton_prunes_to_one_modality() {
        let mock = MockClient::builder()
            .text_rule(RuleMatcher::any().with_kinds(&[ModalityKind::Audio]), "Yes")
            .default_response("No");
        let d = directive(&[ModalityKind::Audio], TopologyFormat::Parallel);
        let out = decide_intuitive(
            &d,
            &streams(),
            &query(),
            &mock,
            &PromptSet::default(),
            DecideTemplate::Open,
            &DecodingParams::default(),
            &BuildOptions::default(),
        )
        .await
        .unwrap();
        assert_eq!(out.answer.raw_text, "Yes");
        assert_eq!(out.call.fingerprint.media_kinds(), vec![ModalityKind::Audio]);
        assert_eq!(out.call.fingerprint.media_count(), 1);
    }

    #[tokio::test]
    async fn intuitive_parallel_renders_delimited_blocks_in_order() {
        let mock = MockClient::answering("ok");
        let d = directive(&[ModalityKind::Audio, ModalityKind::Video], TopologyFormat::Parallel);
        let out = decide_intuitive(
            &d,
            &streams(),
            &query(),
            &mock,
            &PromptSet::default(),
            DecideTemplate::Open,
            &DecodingParams::default(),
            &BuildOptions::default(),
        )
        .await
        .unwrap();
        // media, delimiter, media, query: one call, both kinds, one delimiter.
        assert_eq!(out.call.fingerprint.media_kinds(), vec![ModalityKind::Audio, ModalityKind::Video]);
        assert_eq!(out.call.fingerprint.0.len(), 4);
        assert_eq!(mock.call_log().len(), 1);
    }

    #[tokio::test]
    async fn analytical_decision_is_text_only() {
        let mock = MockClient::builder()
            .text_rule(RuleMatcher::stage(Stage::Decide).contains("two beeps"), "two")
            .default_response("?");
        let rationale = Rationale {
            segments: vec![RationaleSegment { source: ModalityKind::Audio.into(), text: "two beeps".into() }],
        };
        let q = Query::new("q", "How many beeps?", vec![], None).unwrap();
        let out = decide_analytical(
            &rationale,
            &q,
            &mock,
            &PromptSet::default(),
            DecideTemplate::Open,
            &DecodingParams::default(),
        )
        .await
        .unwrap();
        assert_eq!(out.answer.raw_text, "two");
        assert_eq!(out.call.fingerprint.media_count(), 0);
        assert_eq!(mock.call_log()[0].fingerprint.media_count(), 0);
    }

    #[tokio::test]
    async fn empty_rationale_is_a_precondition_error() {
        let mock = MockClient::answering("x");
        let err = decide_analytical(
            &Rationale { segments: vec![] },
            &query(),
            &mock,
            &PromptSet::default(),
            DecideTemplate::Open,
            &DecodingParams::default(),
        )
        .await
        .unwrap_err();
        assert!(matches!(err, EngineError::Precondition(_)));
        assert!(mock.call_log().is_empty(), "no call may be issued");
    }

    #[test]
    fn mc_template_renders_lettered_options() {
        let q = Query::new("q", "which instrument?", vec!["guitar".into(), "ukulele".into()], None).unwrap();
        let block = render_query_block(&q, DecideTemplate::MultipleChoice);
        assert!(block.contains("A. guitar"));
        assert!(block.contains("B. ukulele"));
        assert_eq!(render_query_block(&q, DecideTemplate::Open), "which instrument?");
    }

    fn opts(labels: &[&str]) -> Vec<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn choice_letter_match() {
        let options = opts(&["A", "B", "C", "D"]);
        assert_eq!(extract_choice("The answer is (B).", &options), Some("B".into()));
        assert_eq!(extract_choice("b)", &options), Some("B".into()));
    }

    #[test]
    fn choice_exact_after_normalization() {
        let options = opts(&["guitar", "ukulele"]);
        assert_eq!(extract_choice("ukulele", &options), Some("ukulele".into()));
        assert_eq!(extract_choice("  Ukulele! ", &options), Some("ukulele".into()));
    }

    #[test]
    fn choice_unresolved_when_no_matcher_fires() {
        let options = opts(&["Yes", "No"]);
        assert_eq!(extract_choice("both sound plausible", &options), None);
    }

    #[test]
    fn choice_letter_index_maps_to_option_text() {
        let options = opts(&["guitar", "ukulele"]);
        assert_eq!(extract_choice("B", &options), Some("ukulele".into()));
        assert_eq!(extract_choice("option (a)", &options), Some("guitar".into()));
        assert_eq!(extract_choice("2", &options), Some("ukulele".into()));
    }

    #[test]
    fn choice_article_a_does_not_alias_the_first_option() {
        let options = opts(&["piano", "trumpet"]);
        assert_eq!(extract_choice("It is a trumpet", &options), Some("trumpet".into()));
    }

    #[test]
    fn choice_substring_requires_uniqueness_and_token_boundaries() {
        let options = opts(&["Yes", "No"]);
        // "No" must not fire inside "None".
        assert_eq!(extract_choice("None of these are playing", &options), None);
        assert_eq!(extract_choice("I would say yes, clearly", &options), Some("Yes".into()));
        // Two matching options: ambiguous, unresolved.
        let options = opts(&["left drum", "right drum"]);
        assert_eq!(extract_choice("the left drum and right drum", &options), None);
    }

    proptest! {
        // Total and deterministic: never panics, same result on repeat,
        // and any resolved label is a real option.
        #[test]
        fn choice_extraction_is_total_and_closed(raw in ".{0,80}", opt_count in 1usize..5) {
            let options: Vec<String> = (0..opt_count).map(|i| format!("option {i}")).collect();
            let first = extract_choice(&raw, &options);
            let second = extract_choice(&raw, &options);
            prop_assert_eq!(first.clone(), second);
            if let Some(label) = first {
                prop_assert!(options.contains(&label));
            }
        }
    }
}
