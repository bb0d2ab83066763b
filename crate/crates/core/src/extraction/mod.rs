//! Spoken-form decoding, value normalization and field extraction.

mod normalize;
pub mod parse;
pub mod remote;

use serde::{Deserialize, Serialize};

pub use normalize::{canonicalize, normalize_field_value};
pub use parse::{Candidate, CharSource, ParseOptions, Part, PartRole, ValueChar};
pub use remote::{
    parse_envelope, CompletionClient, HttpCompletionClient, PromptTemplates, RemoteConfig,
    RemoteExtractor, RemoteModel, Reply, TokenBucket,
};

pub use crate::spoken::{decode_spoken_form, SpokenKind, SpokenToken};

use crate::error::Result;
use crate::isolation::{isolate_field_utterances, IsolationMode};
use crate::model::{CallTranscript, FieldSpec, NOT_PROVIDED};
use crate::spoken::{classify, tokenize};

/// Produces a canonical field value from the field-bearing utterance texts
/// (in call order), or the not-provided sentinel.
pub trait ExtractionBackend: Send + Sync {
    fn extract(&self, utterances: &[&str], spec: &FieldSpec) -> Result<String>;

    fn name(&self) -> &str;
}

/// Deterministic rule-based extraction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltinExtractor {
    /// The conversational AI's own name(s); never extracted as an agent name.
    #[serde(default)]
    pub ai_model_names: Vec<String>,
}

impl BuiltinExtractor {
    pub fn new(ai_model_names: Vec<String>) -> Self {
        BuiltinExtractor { ai_model_names }
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            excluded_names: self.ai_model_names.clone(),
        }
    }

    /// Candidates in spoken order, one per segment that yields a value.
    pub fn candidates(&self, text: &str, spec: &FieldSpec) -> Vec<Candidate> {
        let items = classify(&tokenize(text));
        let opts = self.parse_options();
        parse::segments(&items)
            .into_iter()
            .filter_map(|seg| {
                let mut c = parse::parse_segment(&items[seg.clone()], spec.kind, &opts)?;
                for part in &mut c.parts {
                    for ch in &mut part.chars {
                        ch.src = shift(ch.src, seg.start);
                    }
                }
                Some(c)
            })
            .collect()
    }

    /// Extraction over a single utterance text; the last format-valid
    /// candidate wins, else the last candidate.
    pub fn extract_text(&self, text: &str, spec: &FieldSpec) -> String {
        self.extract_texts(&[text], spec)
    }

    pub fn extract_texts(&self, texts: &[&str], spec: &FieldSpec) -> String {
        // A value may be split across consecutive utterances, so the joined
        // text is tried first; repeated full mentions usually make the joined
        // parse invalid, and then each utterance is read on its own.
        if texts.len() > 1 {
            let joined = texts.join(" ");
            if let Some(v) = self.last_valid(&joined, spec) {
                return v;
            }
        }
        let mut last_any: Option<String> = None;
        let mut last_valid: Option<String> = None;
        for text in texts {
            for c in self.candidates(text, spec) {
                let value = canonicalize(&c.text(), spec);
                if spec.matches_format(&value) {
                    last_valid = Some(value.clone());
                }
                last_any = Some(value);
            }
        }
        last_valid
            .or(last_any)
            .unwrap_or_else(|| NOT_PROVIDED.to_string())
    }

    fn last_valid(&self, text: &str, spec: &FieldSpec) -> Option<String> {
        self.candidates(text, spec)
            .iter()
            .rev()
            .map(|c| canonicalize(&c.text(), spec))
            .find(|v| spec.matches_format(v))
    }
}

fn shift(src: CharSource, by: usize) -> CharSource {
    match src {
        CharSource::Item(i) => CharSource::Item(i + by),
        CharSource::Word(i) => CharSource::Word(i + by),
        CharSource::InItem { item, offset } => CharSource::InItem {
            item: item + by,
            offset,
        },
    }
}

impl ExtractionBackend for BuiltinExtractor {
    fn extract(&self, utterances: &[&str], spec: &FieldSpec) -> Result<String> {
        Ok(self.extract_texts(utterances, spec))
    }

    fn name(&self) -> &str {
        "builtin"
    }
}

/// A post-call value with the utterances it was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedField {
    pub value: String,
    pub evidence: Vec<usize>,
}

/// Isolates the field's utterances and extracts the value from their best
/// hypotheses.
pub fn extract_field(
    call: &CallTranscript,
    spec: &FieldSpec,
    backend: &dyn ExtractionBackend,
    mode: IsolationMode,
) -> Result<ExtractedField> {
    let iso = isolate_field_utterances(call, spec, mode);
    if iso.utterance_indices.is_empty() {
        return Ok(ExtractedField {
            value: NOT_PROVIDED.to_string(),
            evidence: Vec::new(),
        });
    }
    let texts: Vec<&str> = iso
        .utterance_indices
        .iter()
        .map(|&i| call.utterances[i].best())
        .collect();
    let value = backend.extract(&texts, spec)?;
    Ok(ExtractedField {
        value,
        evidence: iso.utterance_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Speaker, Utterance};

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

    fn extract(turns: &[(Speaker, &str)], spec: &FieldSpec) -> String {
        extract_field(&call(turns), spec, &BuiltinExtractor::default(), IsolationMode::AnySpeaker)
            .unwrap()
            .value
    }

    #[test]
    fn spelling_wins_over_stated_name() {
        let v = extract(
            &[
                (Speaker::AiModel, "may i have your name please"),
                (Speaker::Agent, "my name is jasmine j a s m i n"),
                (Speaker::AiModel, "thank you"),
            ],
            &FieldSpec::agent_name(),
        );
        assert_eq!(v, "Jasmin");
    }

    #[test]
    fn spelled_cluster_joins_the_run() {
        let ex = BuiltinExtractor::default();
        assert_eq!(
            ex.extract_text("my name is j a qu a i d i a last initial k", &FieldSpec::agent_name()),
            "Jaquaidia K"
        );
    }

    #[test]
    fn last_mention_wins() {
        let v = extract(
            &[
                (Speaker::AiModel, "what is the group number"),
                (Speaker::Agent, "it's a d 0 1 5 6"),
                (Speaker::Agent, "sorry it's a d 0 1 5 7"),
                (Speaker::AiModel, "got it"),
            ],
            &FieldSpec::group_number(),
        );
        assert_eq!(v, "AD0157");
        let v = extract(
            &[
                (Speaker::AiModel, "what is the group number"),
                (Speaker::Agent, "it's a d 0 1 5 6 sorry a d 0 1 5 7"),
            ],
            &FieldSpec::group_number(),
        );
        assert_eq!(v, "AD0157");
    }

    #[test]
    fn absent_field_is_not_provided() {
        let v = extract(
            &[(Speaker::AiModel, "hello"), (Speaker::Agent, "hi there")],
            &FieldSpec::group_number(),
        );
        assert_eq!(v, NOT_PROVIDED);
    }

    #[test]
    fn value_split_across_utterances() {
        let v = extract(
            &[
                (Speaker::AiModel, "may i have your name"),
                (Speaker::Agent, "it's jane"),
                (Speaker::Agent, "t as in tango"),
                (Speaker::AiModel, "thanks"),
            ],
            &FieldSpec::agent_name(),
        );
        assert_eq!(v, "Jane T");
    }

    #[test]
    fn ai_model_name_is_ignored() {
        let spec = FieldSpec::agent_name();
        let ex = BuiltinExtractor::new(vec!["ava".into()]);
        assert_eq!(ex.extract_text("hi ava this is jane t", &spec), "Jane T");
        assert_eq!(ex.extract_text("hi ava", &spec), NOT_PROVIDED);
    }

    #[test]
    fn nato_spelling_examples() {
        let ex = BuiltinExtractor::default();
        let spec = FieldSpec::agent_name();
        assert_eq!(ex.extract_text("jane c like tango", &spec), "Jane T");
        assert_eq!(ex.extract_text("t i a b for boy", &spec), "Tia B");
        assert_eq!(ex.extract_text("d a r a for alpha my initial", &spec), "Dar A");
        assert_eq!(
            ex.extract_text("p as in paul n as in nancy o t t r i c last initial is d", &spec),
            "Pnottric D"
        );
    }
}
