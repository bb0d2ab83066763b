//! Trigger-based isolation of field-bearing agent utterances.
//!
//! A trigger phrase found in an utterance arms collection; while armed,
//! agent utterances are collected and the next AI-model utterance disarms.
//! An utterance that disarms is not itself checked for a trigger, so
//! re-arming needs a later trigger.

use serde::{Deserialize, Serialize};

use crate::model::{CallTranscript, FieldId, FieldSpec, Speaker};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationResult {
    pub call_id: String,
    pub field_id: FieldId,
    pub utterance_indices: Vec<usize>,
}

/// Which speakers may arm collection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IsolationMode {
    /// Any utterance containing a trigger arms.
    #[default]
    AnySpeaker,
    /// Only AI-model utterances arm.
    AiModelOnly,
}

/// Lowercases and replaces punctuation with spaces, collapsing whitespace.
fn normalize_for_match(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '\'' || c.is_whitespace() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn contains_trigger(text: &str, triggers: &[String]) -> bool {
    let hay = format!(" {} ", normalize_for_match(text));
    triggers.iter().any(|t| {
        let needle = normalize_for_match(t);
        !needle.is_empty() && hay.contains(&format!(" {needle} "))
    })
}

pub fn isolate_field_utterances(
    call: &CallTranscript,
    spec: &FieldSpec,
    mode: IsolationMode,
) -> IsolationResult {
    let mut indices = Vec::new();
    let mut collecting = false;
    for u in &call.utterances {
        let may_arm = match mode {
            IsolationMode::AnySpeaker => true,
            IsolationMode::AiModelOnly => u.speaker == Speaker::AiModel,
        };
        if !collecting && may_arm && contains_trigger(u.best(), &spec.triggers) {
            collecting = true;
        } else if collecting {
            match u.speaker {
                Speaker::Agent => indices.push(u.index),
                Speaker::AiModel => collecting = false,
            }
        }
    }
    IsolationResult {
        call_id: call.call_id.clone(),
        field_id: spec.field_id.clone(),
        utterance_indices: indices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Utterance;
    use proptest::prelude::*;

    fn spec() -> FieldSpec {
        let mut s = FieldSpec::agent_name();
        s.triggers = vec!["may i have your name".into()];
        s
    }

    fn call(turns: &[(Speaker, &str)]) -> CallTranscript {
        CallTranscript::new(
            "c",
            turns
                .iter()
                .enumerate()
                .map(|(i, (s, t))| Utterance::new(i, *s, vec![t.to_string()]))
                .collect(),
        )
    }

    fn isolate(turns: &[(Speaker, &str)]) -> Vec<usize> {
        isolate_field_utterances(&call(turns), &spec(), IsolationMode::AnySpeaker).utterance_indices
    }

    #[test]
    fn collects_answer_after_trigger() {
        let got = isolate(&[
            (Speaker::AiModel, "may i have your name"),
            (Speaker::Agent, "this is jane"),
            (Speaker::AiModel, "thank you"),
        ]);
        assert_eq!(got, vec![1]);
    }

    #[test]
    fn no_trigger_no_result() {
        let got = isolate(&[(Speaker::AiModel, "hello"), (Speaker::Agent, "hi")]);
        assert!(got.is_empty());
    }

    #[test]
    fn ai_model_disarms_and_rearming_needs_a_trigger() {
        let got = isolate(&[
            (Speaker::AiModel, "may i have your name"),
            (Speaker::Agent, "it's"),
            (Speaker::Agent, "jane t"),
            (Speaker::AiModel, "thanks"),
            (Speaker::Agent, "anything else"),
        ]);
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn matching_ignores_case_and_punctuation() {
        let got = isolate(&[
            (Speaker::AiModel, "Great. May I have your NAME, please?"),
            (Speaker::Agent, "jane t"),
        ]);
        assert_eq!(got, vec![1]);
    }

    #[test]
    fn trigger_inside_a_longer_word_does_not_fire() {
        let got = isolate(&[
            (Speaker::AiModel, "may i have your names list"),
            (Speaker::Agent, "jane t"),
        ]);
        assert!(got.is_empty());
    }

    #[test]
    fn strict_mode_ignores_agent_triggers() {
        let c = call(&[
            (Speaker::Agent, "may i have your name"),
            (Speaker::Agent, "jane t"),
        ]);
        assert_eq!(
            isolate_field_utterances(&c, &spec(), IsolationMode::AnySpeaker).utterance_indices,
            vec![1]
        );
        assert!(isolate_field_utterances(&c, &spec(), IsolationMode::AiModelOnly)
            .utterance_indices
            .is_empty());
    }

    fn turn_strategy() -> impl Strategy<Value = (Speaker, &'static str)> {
        prop_oneof![
            Just((Speaker::AiModel, "may i have your name")),
            Just((Speaker::AiModel, "okay thanks")),
            Just((Speaker::Agent, "jane t")),
            Just((Speaker::Agent, "one moment")),
        ]
    }

    proptest! {
        #[test]
        fn indices_are_increasing_agent_and_after_a_trigger(turns in proptest::collection::vec(turn_strategy(), 0..24)) {
            let c = call(&turns);
            let got = isolate_field_utterances(&c, &spec(), IsolationMode::AnySpeaker).utterance_indices;
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
            for &i in &got {
                prop_assert_eq!(c.utterances[i].speaker, Speaker::Agent);
                prop_assert!(turns[..i].iter().any(|(_, t)| t.contains("your name")));
            }
        }

        #[test]
        fn appending_a_second_window_yields_the_union(
            a in proptest::collection::vec(turn_strategy(), 0..12),
            b in proptest::collection::vec(turn_strategy(), 0..12),
        ) {
            // End the first part with an AI turn so the windows are independent.
            let mut first = a.clone();
            first.push((Speaker::AiModel, "okay thanks"));
            let mut second = vec![(Speaker::AiModel, "may i have your name")];
            second.extend(b.iter().cloned());
            let mut both = first.clone();
            both.extend(second.iter().cloned());

            let got_first = isolate(&first);
            let got_second: Vec<usize> = isolate(&second).into_iter().map(|i| i + first.len()).collect();
            let got_both = isolate(&both);
            let mut union = got_first.clone();
            union.extend(got_second);
            prop_assert_eq!(got_both, union);
        }
    }
}
