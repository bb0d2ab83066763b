//! Shared data types for calls, field configuration, records and decisions,
//! plus the corpus file format (JSON Lines).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Canonical value recorded when the agent did not provide a field.
pub const NOT_PROVIDED: &str = "__NOT_PROVIDED__";

/// Default upper bound on the number of n-best alternatives per utterance.
pub const DEFAULT_N_MAX: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    Agent,
    AiModel,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Agent => "Agent",
            Speaker::AiModel => "AI",
        })
    }
}

/// One speaker turn with its ranked ASR hypotheses. `alternatives[0]` is the
/// ASR best hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Speaker,
    pub alternatives: Vec<String>,
}

impl Utterance {
    pub fn new(index: usize, speaker: Speaker, alternatives: Vec<String>) -> Self {
        Utterance {
            index,
            speaker,
            alternatives,
        }
    }

    /// The ASR best hypothesis, or an empty string for a malformed utterance.
    pub fn best(&self) -> &str {
        self.alternatives.first().map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTranscript {
    pub call_id: String,
    pub utterances: Vec<Utterance>,
    pub word_count: usize,
}

impl CallTranscript {
    /// Builds a call and caches its word count.
    pub fn new(call_id: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        let word_count = count_words(&utterances);
        CallTranscript {
            call_id: call_id.into(),
            utterances,
            word_count,
        }
    }

    pub fn recompute_word_count(&mut self) {
        self.word_count = count_words(&self.utterances);
    }

    /// Copy of the call with every utterance truncated to its first `n`
    /// alternatives.
    pub fn truncated(&self, n: usize) -> CallTranscript {
        let mut out = self.clone();
        for u in &mut out.utterances {
            u.alternatives.truncate(n.max(1));
        }
        out
    }
}

fn count_words(utterances: &[Utterance]) -> usize {
    utterances
        .iter()
        .map(|u| u.best().split_whitespace().count())
        .sum()
}

/// Field identifier. The three built-in fields have dedicated parsers; any
/// other name is carried as `Custom`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldId {
    AgentName,
    ReferenceNumber,
    GroupNumber,
    Custom(String),
}

impl FieldId {
    pub fn as_str(&self) -> &str {
        match self {
            FieldId::AgentName => "AgentName",
            FieldId::ReferenceNumber => "ReferenceNumber",
            FieldId::GroupNumber => "GroupNumber",
            FieldId::Custom(s) => s,
        }
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldId {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "AgentName" => FieldId::AgentName,
            "ReferenceNumber" => FieldId::ReferenceNumber,
            "GroupNumber" => FieldId::GroupNumber,
            other => FieldId::Custom(other.to_string()),
        })
    }
}

impl Serialize for FieldId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FieldId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|never: std::convert::Infallible| match never {}))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criticality {
    Critical,
    NonCritical,
}

/// Shape of the value a field carries; selects the built-in parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// "Firstname L"
    PersonName,
    /// "Firstname L MMDDYYYY"
    NameAndDate,
    /// Letters and digits with no separators.
    Alphanumeric,
}

/// Normalization rule identifiers, applied in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormRule {
    /// Decode spoken letters, digit words and NATO phrases; drop filler.
    DecodeSpoken,
    Uppercase,
    StripSpaces,
    StripHyphens,
    CollapseWhitespace,
    /// Words of two or more letters become "Title" case.
    TitleCaseWords,
    /// Single-letter words become uppercase.
    UppercaseInitials,
}

/// A compiled format pattern that serializes as its source text.
#[derive(Debug, Clone)]
pub struct FormatPattern(Regex);

impl FormatPattern {
    pub fn new(pattern: &str) -> Result<Self> {
        Regex::new(pattern)
            .map(FormatPattern)
            .map_err(|e| Error::Config(format!("format pattern {pattern:?} does not compile: {e}")))
    }

    pub fn is_match(&self, value: &str) -> bool {
        self.0.is_match(value)
    }

    pub fn as_str(&self) -> &str {
        self.0.as_str()
    }
}

impl PartialEq for FormatPattern {
    fn eq(&self, other: &Self) -> bool {
        self.as_str() == other.as_str()
    }
}

impl Serialize for FormatPattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FormatPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FormatPattern::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-field configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub field_id: FieldId,
    pub triggers: Vec<String>,
    pub format_pattern: FormatPattern,
    pub criticality: Criticality,
    pub normalization: Vec<NormRule>,
    pub kind: ValueKind,
}

impl FieldSpec {
    pub fn agent_name() -> Self {
        FieldSpec {
            field_id: FieldId::AgentName,
            triggers: vec![
                "may i have your name".into(),
                "can i get your name".into(),
                "who am i speaking with".into(),
            ],
            format_pattern: FormatPattern::new(r"^[A-Z][a-z]+( [A-Z])?$").expect("static pattern"),
            criticality: Criticality::NonCritical,
            normalization: vec![
                NormRule::CollapseWhitespace,
                NormRule::TitleCaseWords,
                NormRule::UppercaseInitials,
            ],
            kind: ValueKind::PersonName,
        }
    }

    pub fn reference_number() -> Self {
        FieldSpec {
            field_id: FieldId::ReferenceNumber,
            triggers: vec![
                "reference number for this call".into(),
                "can i get a reference number".into(),
                "may i have a reference number".into(),
            ],
            format_pattern: FormatPattern::new(r"^[A-Z][a-z]+ [A-Z] [0-9]{8}$")
                .expect("static pattern"),
            criticality: Criticality::Critical,
            normalization: vec![
                NormRule::CollapseWhitespace,
                NormRule::TitleCaseWords,
                NormRule::UppercaseInitials,
            ],
            kind: ValueKind::NameAndDate,
        }
    }

    pub fn group_number() -> Self {
        FieldSpec {
            field_id: FieldId::GroupNumber,
            triggers: vec![
                "what is the group number".into(),
                "can you give me the group number".into(),
                "may i have the group number".into(),
            ],
            format_pattern: FormatPattern::new(r"^[A-Z0-9]{6,10}$").expect("static pattern"),
            criticality: Criticality::Critical,
            normalization: vec![
                NormRule::DecodeSpoken,
                NormRule::Uppercase,
                NormRule::StripSpaces,
                NormRule::StripHyphens,
            ],
            kind: ValueKind::Alphanumeric,
        }
    }

    /// The three built-in fields, in a stable order.
    pub fn defaults() -> Vec<FieldSpec> {
        vec![
            FieldSpec::agent_name(),
            FieldSpec::reference_number(),
            FieldSpec::group_number(),
        ]
    }

    pub fn matches_format(&self, value: &str) -> bool {
        self.format_pattern.is_match(value)
    }

    /// Lists invariant violations; empty when the spec is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.triggers.is_empty() || self.triggers.iter().any(|t| t.trim().is_empty()) {
            out.push(format!("{}: triggers must be non-empty", self.field_id));
        }
        if self.normalization.is_empty() {
            out.push(format!("{}: normalization list must be non-empty", self.field_id));
        }
        out
    }
}

/// Live-call, gold and post-call values for one field of one call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub call_id: String,
    pub field_id: FieldId,
    pub live_call_value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_call_value: Option<String>,
}

impl FieldRecord {
    pub fn key(&self) -> (String, FieldId) {
        (self.call_id.clone(), self.field_id.clone())
    }

    /// True when a gold value exists and the live value equals it.
    pub fn live_is_correct(&self) -> Option<bool> {
        self.gold_value.as_ref().map(|g| *g == self.live_call_value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    AutoApprove,
    FlagForHuman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    DirectVerification,
    DirectExtraction,
    Hybrid,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verify" | "DirectVerification" => Ok(Strategy::DirectVerification),
            "extract" | "DirectExtraction" => Ok(Strategy::DirectExtraction),
            "hybrid" | "Hybrid" => Ok(Strategy::Hybrid),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub call_id: String,
    pub field_id: FieldId,
    pub verdict: Verdict,
    /// The strategy that actually produced the verdict (never `Hybrid`).
    pub strategy: Strategy,
    pub score: f64,
    pub threshold: f64,
    /// Utterance indices consulted.
    pub evidence: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_call_value: Option<String>,
}

impl ReviewDecision {
    pub fn key(&self) -> (String, FieldId) {
        (self.call_id.clone(), self.field_id.clone())
    }

    pub fn approved(&self) -> bool {
        self.verdict == Verdict::AutoApprove
    }
}

/// Checks the call invariants. Returns one description per violation.
pub fn validate_call(call: &CallTranscript, n_max: usize) -> Vec<String> {
    let mut out = Vec::new();
    for (pos, u) in call.utterances.iter().enumerate() {
        if u.index != pos {
            out.push(format!(
                "utterance at position {pos} has index {} (expected {pos})",
                u.index
            ));
        }
        if u.alternatives.is_empty() {
            out.push(format!("utterance {} has no alternatives", u.index));
        } else if u.alternatives.len() > n_max {
            out.push(format!(
                "utterance {} has {} alternatives (limit {n_max})",
                u.index,
                u.alternatives.len()
            ));
        }
    }
    let words = count_words(&call.utterances);
    if words != call.word_count {
        out.push(format!(
            "word_count is {} but best hypotheses hold {words} words",
            call.word_count
        ));
    }
    out
}

/// Levenshtein distance over Unicode scalar values after NFC normalization.
pub fn levenshtein(a: &str, b: &str) -> usize {
    use unicode_normalization::UnicodeNormalization;
    let a: Vec<char> = a.nfc().collect();
    let b: Vec<char> = b.nfc().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer length; 0 when both are empty.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    use unicode_normalization::UnicodeNormalization;
    let a: Vec<char> = a.nfc().collect();
    let b: Vec<char> = b.nfc().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein_chars(&a, &b) as f64 / longest as f64
}

/// The noise-free text of one utterance. Only simulated corpora have these;
/// they are used to measure correction quality, never by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanUtterance {
    pub call_id: String,
    pub index: usize,
    pub text: String,
}

/// Calls plus their field records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub calls: Vec<CallTranscript>,
    pub records: Vec<FieldRecord>,
    pub references: Vec<CleanUtterance>,
}

impl Corpus {
    pub const CALLS_FILE: &'static str = "calls.jsonl";
    pub const RECORDS_FILE: &'static str = "records.jsonl";
    pub const REFERENCES_FILE: &'static str = "references.jsonl";

    /// Loads `calls.jsonl` and `records.jsonl`; `references.jsonl` is
    /// optional.
    pub fn load(dir: &Path) -> Result<Corpus> {
        let refs = dir.join(Self::REFERENCES_FILE);
        Ok(Corpus {
            calls: read_jsonl(&dir.join(Self::CALLS_FILE))?,
            records: read_jsonl(&dir.join(Self::RECORDS_FILE))?,
            references: if refs.exists() {
                read_jsonl(&refs)?
            } else {
                Vec::new()
            },
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(Self::CALLS_FILE), &self.calls)?;
        write_jsonl(&dir.join(Self::RECORDS_FILE), &self.records)?;
        if !self.references.is_empty() {
            write_jsonl(&dir.join(Self::REFERENCES_FILE), &self.references)?;
        }
        Ok(())
    }

    pub fn truncated(&self, n: usize) -> Corpus {
        Corpus {
            calls: self.calls.iter().map(|c| c.truncated(n)).collect(),
            records: self.records.clone(),
            references: self.references.clone(),
        }
    }

    /// Records without gold values, as a live system would see them.
    pub fn without_gold(&self) -> Corpus {
        let mut c = self.clone();
        for r in &mut c.records {
            r.gold_value = None;
        }
        c
    }

    /// Checks every call and that records refer to known calls.
    pub fn validate(&self, n_max: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = std::collections::BTreeSet::new();
        for c in &self.calls {
            if !ids.insert(c.call_id.as_str()) {
                out.push(format!("duplicate call_id {}", c.call_id));
            }
            out.extend(
                validate_call(c, n_max)
                    .into_iter()
                    .map(|v| format!("{}: {v}", c.call_id)),
            );
        }
        let mut keys = std::collections::BTreeSet::new();
        for r in &self.records {
            if !ids.contains(r.call_id.as_str()) {
                out.push(format!("record for unknown call {}", r.call_id));
            }
            if !keys.insert((r.call_id.as_str(), r.field_id.clone())) {
                out.push(format!("duplicate record {}/{}", r.call_id, r.field_id));
            }
            if r.live_call_value.trim().is_empty() {
                out.push(format!(
                    "{}/{}: empty live_call_value (use {NOT_PROVIDED})",
                    r.call_id, r.field_id
                ));
            }
        }
        out
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(alts: Vec<Vec<&str>>) -> CallTranscript {
        let utterances = alts
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let speaker = if i % 2 == 0 { Speaker::AiModel } else { Speaker::Agent };
                Utterance::new(i, speaker, a.into_iter().map(String::from).collect())
            })
            .collect();
        CallTranscript::new("c1", utterances)
    }

    #[test]
    fn well_formed_call_has_no_violations() {
        let c = call(vec![
            vec!["may i have your name"],
            vec!["this is jane", "this is jan"],
            vec!["thank you"],
        ]);
        assert!(validate_call(&c, DEFAULT_N_MAX).is_empty());
        assert_eq!(c.word_count, 10);
    }

    #[test]
    fn empty_alternatives_is_reported_once() {
        let mut c = call(vec![vec!["hello"], vec!["hi"], vec!["bye"]]);
        c.utterances[1].alternatives.clear();
        c.recompute_word_count();
        let v = validate_call(&c, DEFAULT_N_MAX);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("utterance 1"), "{v:?}");
    }

    #[test]
    fn too_many_alternatives_is_reported() {
        let alts: Vec<&str> = vec!["x"; 11];
        let c = call(vec![vec!["hello"], alts]);
        let v = validate_call(&c, 10);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(validate_call(&c, 11).is_empty());
    }

    #[test]
    fn stale_word_count_and_bad_index_are_reported() {
        let mut c = call(vec![vec!["a b c"], vec!["d"]]);
        c.word_count = 7;
        c.utterances[1].index = 5;
        assert_eq!(validate_call(&c, 10).len(), 2);
    }

    #[test]
    fn ned_examples() {
        assert_eq!(normalized_edit_distance("AD0156", "AD0156"), 0.0);
        assert_eq!(normalized_edit_distance("10001234", "1001234"), 0.125);
        assert_eq!(normalized_edit_distance("", "abc"), 1.0);
        assert_eq!(normalized_edit_distance("", ""), 0.0);
    }

    #[test]
    fn ned_uses_nfc() {
        // "e" + combining acute vs precomposed "é"
        assert_eq!(normalized_edit_distance("e\u{301}", "\u{e9}"), 0.0);
    }

    #[test]
    fn field_id_round_trips_through_json() {
        for id in [
            FieldId::AgentName,
            FieldId::GroupNumber,
            FieldId::Custom("PlanType".into()),
        ] {
            let s = serde_json::to_string(&id).unwrap();
            assert_eq!(serde_json::from_str::<FieldId>(&s).unwrap(), id);
        }
    }

    #[test]
    fn default_specs_are_valid() {
        for spec in FieldSpec::defaults() {
            assert!(spec.validate().is_empty());
        }
        assert!(FieldSpec::group_number().matches_format("AD0156"));
        assert!(FieldSpec::agent_name().matches_format("Jane T"));
        assert!(FieldSpec::reference_number().matches_format("Jane O 06242024"));
        assert!(FormatPattern::new("(").is_err());
    }
}
