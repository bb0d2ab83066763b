//! Pseudo-labels for the corrector and the noise detector: for each
//! field-bearing utterance, pick the hypothesis closest to the verified value
//! and repair it so that it yields that value.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{canonicalize, BuiltinExtractor, Candidate, CharSource, PartRole, RemoteModel, Reply};
use crate::isolation::{isolate_field_utterances, IsolationMode};
use crate::lexicon;
use crate::model::{
    levenshtein, normalized_edit_distance, Corpus, FieldId, FieldSpec, ValueKind, NOT_PROVIDED,
};
use crate::spoken::{classify, tokenize, RawToken, SpokenKind, SpokenToken};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelExample {
    pub call_id: String,
    pub field_id: FieldId,
    pub utterance_index: usize,
    pub alternatives: Vec<String>,
    pub gold: String,
    pub chosen_index: usize,
    pub corrected_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AedExample {
    pub alternatives: Vec<String>,
    pub label: bool,
}

/// Which hypothesis the noise label compares with the corrected text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AedReference {
    /// `alternatives[0]`, the ASR best.
    #[default]
    AsrBest,
    /// The hypothesis chosen during pseudo-labeling.
    Chosen,
}

/// Selection and repair steps of pseudo-labeling.
pub trait PseudoLabeler: Send + Sync {
    fn select(&self, alternatives: &[String], gold: &str, spec: &FieldSpec) -> Result<usize>;

    fn correct(&self, text: &str, gold: &str, spec: &FieldSpec) -> Result<String>;
}

#[derive(Debug, Clone, Default)]
pub struct BuiltinPseudoLabeler {
    pub extractor: BuiltinExtractor,
}

impl BuiltinPseudoLabeler {
    pub fn new(extractor: BuiltinExtractor) -> Self {
        BuiltinPseudoLabeler { extractor }
    }
}

impl PseudoLabeler for BuiltinPseudoLabeler {
    fn select(&self, alternatives: &[String], gold: &str, spec: &FieldSpec) -> Result<usize> {
        Ok(select_with(&self.extractor, alternatives, gold, spec))
    }

    fn correct(&self, text: &str, gold: &str, spec: &FieldSpec) -> Result<String> {
        correct_with(&self.extractor, text, gold, spec)
    }
}

/// Two remote calls: one to choose a hypothesis, one to repair it. Malformed
/// replies fall back to the builtin steps.
pub struct RemotePseudoLabeler {
    pub model: Arc<RemoteModel>,
    pub fallback: BuiltinPseudoLabeler,
}

impl PseudoLabeler for RemotePseudoLabeler {
    fn select(&self, alternatives: &[String], gold: &str, spec: &FieldSpec) -> Result<usize> {
        match self.model.request(&self.model.render_select(alternatives, gold), "Output")? {
            Reply::Parsed(text) => Ok(closest_index(alternatives, &text)),
            Reply::Malformed(_) => self.fallback.select(alternatives, gold, spec),
        }
    }

    fn correct(&self, text: &str, gold: &str, spec: &FieldSpec) -> Result<String> {
        match self.model.request(&self.model.render_correct(text, gold), "Output")? {
            Reply::Parsed(out) => Ok(out),
            Reply::Malformed(_) => self.fallback.correct(text, gold, spec),
        }
    }
}

/// Index of the exact match, else of the nearest hypothesis.
fn closest_index(alternatives: &[String], text: &str) -> usize {
    let text = text.trim();
    alternatives
        .iter()
        .position(|a| a.trim() == text)
        .unwrap_or_else(|| {
            alternatives
                .iter()
                .enumerate()
                .min_by_key(|(i, a)| (levenshtein(a, text), *i))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
}

/// Index of the hypothesis whose extracted value is nearest to `gold`
/// (normalized edit distance); ties go to the lowest index.
pub fn select_best_alternative(alternatives: &[String], gold: &str, spec: &FieldSpec) -> usize {
    select_with(&BuiltinExtractor::default(), alternatives, gold, spec)
}

fn select_with(ex: &BuiltinExtractor, alternatives: &[String], gold: &str, spec: &FieldSpec) -> usize {
    let gold = canonicalize(gold, spec);
    let mut best = (f64::INFINITY, 0);
    for (i, alt) in alternatives.iter().enumerate() {
        let d = normalized_edit_distance(&ex.extract_text(alt, spec), &gold);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Repairs the value span of `text` so that it yields `gold`, keeping every
/// other word as it was.
pub fn correct_transcript(text: &str, gold: &str, spec: &FieldSpec) -> Result<String> {
    correct_with(&BuiltinExtractor::default(), text, gold, spec)
}

fn correct_with(ex: &BuiltinExtractor, text: &str, gold: &str, spec: &FieldSpec) -> Result<String> {
    let gold = canonicalize(gold, spec);
    if ex.extract_text(text, spec) == gold {
        return Ok(text.to_string());
    }
    let tokens = tokenize(text);
    let items = classify(&tokens);
    let Some(cand) = chosen_candidate(ex, text, spec) else {
        return Err(Error::Correction(format!(
            "no {} value found in {text:?}",
            spec.field_id
        )));
    };
    let mirrored = splice_mirrored(&tokens, &items, &cand, &gold, spec);
    if let Some(out) = mirrored.filter(|o| ex.extract_text(o, spec) == gold) {
        return Ok(out);
    }
    // Fall back to generic renderings of gold, nearest to the span first.
    let (lo, hi) = cand.item_span().expect("candidate has characters");
    let (t0, t1) = (items[lo].first_token(), items[hi].last_token());
    let span: Vec<&str> = tokens[t0..=t1].iter().map(|t| t.raw.as_str()).collect();
    let span = span.join(" ");
    let mut options = generic_renderings(&gold, spec.kind);
    options.sort_by_key(|r| levenshtein(r, &span));
    for r in options {
        let out = join_spliced(&tokens, &[(t0..t1 + 1, r)]);
        if ex.extract_text(&out, spec) == gold {
            return Ok(out);
        }
    }
    Err(Error::Correction(format!(
        "could not repair {text:?} to yield {gold:?}"
    )))
}

/// The candidate extraction would take: the last format-valid one, else the
/// last one.
fn chosen_candidate(ex: &BuiltinExtractor, text: &str, spec: &FieldSpec) -> Option<Candidate> {
    let cands = ex.candidates(text, spec);
    let valid = cands
        .iter()
        .rposition(|c| spec.matches_format(&canonicalize(&c.text(), spec)));
    match valid {
        Some(i) => Some(cands[i].clone()),
        None => cands.last().cloned(),
    }
}

/// Gold split into the parts a candidate of `kind` carries.
fn gold_parts(gold: &str, kind: ValueKind) -> Vec<(PartRole, String)> {
    match kind {
        ValueKind::Alphanumeric => vec![(PartRole::Code, gold.to_string())],
        _ => {
            let mut out = Vec::new();
            for w in gold.split_whitespace() {
                let role = if w.chars().all(|c| c.is_ascii_digit()) {
                    PartRole::Digits
                } else if w.chars().count() == 1 {
                    PartRole::Initial
                } else {
                    PartRole::FirstName
                };
                out.push((role, w.to_string()));
            }
            out
        }
    }
}

/// Character edit script from `a` to `b`: for each output character, the
/// index of the aligned source character (None when inserted), plus the
/// source characters that were deleted.
fn align(a: &[char], b: &[char]) -> Vec<(Option<usize>, Option<char>)> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    // Walk back; each step is (source index, output char).
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            ops.push((Some(i - 1), Some(b[j - 1])));
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.push((Some(i - 1), None));
            i -= 1;
        } else {
            ops.push((None, Some(b[j - 1])));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn render_char_like(item: &SpokenToken, tokens: &[RawToken], ch: char) -> String {
    let lower = ch.to_ascii_lowercase();
    match item.kind {
        SpokenKind::NatoCoded { .. } if ch.is_ascii_alphabetic() => {
            let conn: Vec<&str> = tokens[item.first_token() + 1..item.last_token()]
                .iter()
                .map(|t| t.raw.as_str())
                .collect();
            format!("{lower} {} {}", conn.join(" "), lexicon::nato_word(lower))
        }
        SpokenKind::DigitWord if ch.is_ascii_digit() => lexicon::digit_word(ch).to_string(),
        SpokenKind::Word if ch.is_ascii_alphabetic() && lexicon::nato_letter(&item.surface.to_lowercase()).is_some() => {
            lexicon::nato_word(lower).to_string()
        }
        _ => lower.to_string(),
    }
}

fn cased_like(original: &str, word: &str) -> String {
    if original.chars().next().is_some_and(|c| c.is_uppercase()) {
        let mut cs = word.chars();
        match cs.next() {
            Some(f) => f.to_uppercase().chain(cs.flat_map(|c| c.to_lowercase())).collect(),
            None => String::new(),
        }
    } else {
        word.to_lowercase()
    }
}

/// Rewrites each source item in its own spoken style.
fn splice_mirrored(
    tokens: &[RawToken],
    items: &[SpokenToken],
    cand: &Candidate,
    gold: &str,
    spec: &FieldSpec,
) -> Option<String> {
    let parts = gold_parts(gold, spec.kind);
    // Per item: the output characters it now carries, in order.
    let mut per_item: BTreeMap<usize, Vec<char>> = BTreeMap::new();
    let mut word_items: BTreeMap<usize, String> = BTreeMap::new();
    // Text to insert after a token, for parts the candidate lacks.
    let mut inserts: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut last_token_so_far: Option<usize> = None;
    let mut pending_front: Vec<String> = Vec::new();

    for (role, gold_text) in &parts {
        let Some(part) = cand.parts.iter().find(|p| p.role == *role) else {
            let text = match role {
                PartRole::FirstName => gold_text.to_lowercase(),
                PartRole::Initial => gold_text.to_lowercase(),
                _ => gold_text.clone(),
            };
            match last_token_so_far {
                Some(t) => inserts.entry(t).or_default().push(text),
                None => pending_front.push(text),
            }
            continue;
        };
        if let Some(w) = part.word_item() {
            if part.chars.iter().all(|c| matches!(c.src, CharSource::Word(_))) {
                word_items.insert(w, cased_like(&items[w].surface, gold_text));
                last_token_so_far = Some(items[w].last_token());
                continue;
            }
        }
        let src: Vec<char> = part.chars.iter().map(|c| c.ch.to_ascii_uppercase()).collect();
        let dst: Vec<char> = gold_text.chars().map(|c| c.to_ascii_uppercase()).collect();
        let mut cur_item = part.chars.first()?.src.item();
        for item in part.chars.iter().map(|c| c.src.item()) {
            per_item.entry(item).or_default();
        }
        for (s, out) in align(&src, &dst) {
            if let Some(s) = s {
                cur_item = part.chars[s].src.item();
            }
            if let Some(ch) = out {
                per_item.entry(cur_item).or_default().push(ch);
            }
        }
        last_token_so_far = part.chars.iter().map(|c| items[c.src.item()].last_token()).max();
    }

    // Parts the gold lacks: remove their items.
    let gold_roles: Vec<PartRole> = parts.iter().map(|(r, _)| *r).collect();
    for part in &cand.parts {
        if !gold_roles.contains(&part.role) {
            for c in &part.chars {
                per_item.insert(c.src.item(), Vec::new());
            }
        }
    }

    let mut edits: Vec<(std::ops::Range<usize>, String)> = Vec::new();
    for (&i, chars) in &per_item {
        let item = &items[i];
        let original: Vec<char> = cand
            .parts
            .iter()
            .flat_map(|p| p.chars.iter())
            .filter(|c| c.src.item() == i)
            .map(|c| c.ch.to_ascii_uppercase())
            .collect();
        if *chars == original && gold_roles.len() == cand.parts.len() {
            continue;
        }
        let text = match item.kind {
            SpokenKind::Digit | SpokenKind::Letter => {
                let upper = item.surface.chars().any(|c| c.is_ascii_uppercase());
                chars
                    .iter()
                    .map(|c| if upper { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
                    .collect()
            }
            SpokenKind::Word if lexicon::nato_letter(&item.surface.to_lowercase()).is_none() => {
                let upper = item.surface.chars().any(|c| c.is_ascii_uppercase());
                chars
                    .iter()
                    .map(|c| if upper { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
                    .collect()
            }
            _ => chars
                .iter()
                .map(|&c| render_char_like(item, tokens, c))
                .collect::<Vec<_>>()
                .join(" "),
        };
        edits.push((item.first_token()..item.last_token() + 1, text));
    }
    for (&i, word) in &word_items {
        edits.push((items[i].first_token()..items[i].last_token() + 1, word.clone()));
    }
    for (&t, texts) in &inserts {
        // Attach to the token itself so the range stays unique.
        let existing = edits.iter_mut().find(|(r, _)| r.end == t + 1);
        let extra = texts.join(" ");
        match existing {
            Some((_, s)) => {
                if s.is_empty() {
                    *s = extra;
                } else {
                    s.push(' ');
                    s.push_str(&extra);
                }
            }
            None => edits.push((t..t + 1, format!("{} {extra}", tokens[t].raw))),
        }
    }
    if !pending_front.is_empty() {
        let first = edits.iter().map(|(r, _)| r.start).min()?;
        let extra = pending_front.join(" ");
        match edits.iter_mut().find(|(r, _)| r.start == first) {
            Some((_, s)) => *s = format!("{extra} {s}").trim().to_string(),
            None => return None,
        }
    }
    edits.sort_by_key(|(r, _)| r.start);
    if edits.windows(2).any(|w| w[0].0.end > w[1].0.start) {
        return None;
    }
    Some(join_spliced(tokens, &edits))
}

/// Replaces each token range by its text (an empty text removes it).
fn join_spliced(tokens: &[RawToken], edits: &[(std::ops::Range<usize>, String)]) -> String {
    let mut out: Vec<&str> = Vec::new();
    let mut t = 0;
    let mut e = 0;
    while t < tokens.len() {
        if e < edits.len() && edits[e].0.start == t {
            if !edits[e].1.is_empty() {
                out.push(&edits[e].1);
            }
            t = edits[e].0.end;
            e += 1;
        } else {
            out.push(&tokens[t].raw);
            t += 1;
        }
    }
    out.join(" ")
}

fn generic_renderings(gold: &str, kind: ValueKind) -> Vec<String> {
    let spaced = |s: &str| {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_ascii_lowercase().to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    match kind {
        ValueKind::Alphanumeric => vec![gold.to_string(), spaced(gold)],
        _ => {
            let words: Vec<String> = gold.split_whitespace().map(str::to_lowercase).collect();
            let mut plain = words.join(" ");
            let mut spelled = words
                .iter()
                .map(|w| if w.chars().count() > 1 && !w.chars().any(|c| c.is_ascii_digit()) { spaced(w) } else { w.clone() })
                .collect::<Vec<_>>()
                .join(" ");
            let digits_spaced = words
                .iter()
                .map(|w| if w.chars().all(|c| c.is_ascii_digit()) { spaced(w) } else { w.clone() })
                .collect::<Vec<_>>()
                .join(" ");
            if kind == ValueKind::NameAndDate && plain.is_empty() {
                plain = NOT_PROVIDED.into();
                spelled = NOT_PROVIDED.into();
            }
            vec![plain, digits_spaced, spelled]
        }
    }
}

/// Human-verified values keyed by (call, field), from records that carry one.
pub fn golds_from_records(corpus: &Corpus) -> BTreeMap<(String, FieldId), String> {
    corpus
        .records
        .iter()
        .filter_map(|r| r.gold_value.clone().map(|g| (r.key(), g)))
        .filter(|(_, g)| g != NOT_PROVIDED && !g.trim().is_empty())
        .collect()
}

/// Why an utterance produced no example.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    /// Part of a multi-utterance answer that cannot carry the whole value.
    pub partial: usize,
    /// The value span could not be located or repaired.
    pub correction_failed: usize,
    /// The repaired text did not re-extract to gold.
    pub audit_failed: usize,
}

impl SkipCounts {
    /// Utterances that should have produced an example but did not.
    /// Partial mentions are not counted: they carry no complete value.
    pub fn skipped(&self) -> usize {
        self.correction_failed + self.audit_failed
    }

    fn add(&mut self, o: SkipCounts) {
        self.partial += o.partial;
        self.correction_failed += o.correction_failed;
        self.audit_failed += o.audit_failed;
    }
}

/// One example per field-bearing utterance of every (call, field) with a
/// gold value. Every returned example re-extracts to its gold with the
/// builtin parser; everything else is counted in the skip totals.
///
/// In a window of several utterances, a turn whose reading alone is further
/// from gold than the whole window's reading is a partial mention (a value
/// split over turns); it is skipped rather than padded with words never
/// spoken.
pub fn generate_pseudo_labels(
    corpus: &Corpus,
    golds: &BTreeMap<(String, FieldId), String>,
    specs: &[FieldSpec],
    labeler: &dyn PseudoLabeler,
    audit: &BuiltinExtractor,
) -> (Vec<PseudoLabelExample>, SkipCounts) {
    let per_call: Vec<(Vec<PseudoLabelExample>, SkipCounts)> = corpus
        .calls
        .par_iter()
        .map(|call| {
            let mut out = Vec::new();
            let mut skipped = SkipCounts::default();
            for spec in specs {
                let Some(gold) = golds.get(&(call.call_id.clone(), spec.field_id.clone())) else {
                    continue;
                };
                let gold = canonicalize(gold, spec);
                let iso = isolate_field_utterances(call, spec, IsolationMode::AnySpeaker);
                let mut picks = Vec::new();
                for &idx in &iso.utterance_indices {
                    let alts = &call.utterances[idx].alternatives;
                    if alts.is_empty() {
                        continue;
                    }
                    match labeler.select(alts, &gold, spec) {
                        Ok(i) if i < alts.len() => picks.push((idx, i)),
                        _ => skipped.correction_failed += 1,
                    }
                }
                // Distance of the whole window's reading, for spotting turns
                // that only carry part of the value.
                let joined_ned = (picks.len() > 1).then(|| {
                    let texts: Vec<&str> = picks
                        .iter()
                        .map(|&(idx, i)| call.utterances[idx].alternatives[i].as_str())
                        .collect();
                    normalized_edit_distance(&audit.extract_texts(&texts, spec), &gold)
                });
                for (idx, chosen) in picks {
                    let alts = &call.utterances[idx].alternatives;
                    if let Some(joined) = joined_ned {
                        let alone = normalized_edit_distance(&audit.extract_text(&alts[chosen], spec), &gold);
                        if joined < alone {
                            skipped.partial += 1;
                            continue;
                        }
                    }
                    let corrected = match labeler.correct(&alts[chosen], &gold, spec) {
                        Ok(t) => t,
                        Err(_) => {
                            skipped.correction_failed += 1;
                            continue;
                        }
                    };
                    if audit.extract_text(&corrected, spec) != gold {
                        skipped.audit_failed += 1;
                        continue;
                    }
                    out.push(PseudoLabelExample {
                        call_id: call.call_id.clone(),
                        field_id: spec.field_id.clone(),
                        utterance_index: idx,
                        alternatives: alts.clone(),
                        gold: gold.clone(),
                        chosen_index: chosen,
                        corrected_text: corrected,
                    });
                }
            }
            (out, skipped)
        })
        .collect();
    let mut examples = Vec::new();
    let mut skipped = SkipCounts::default();
    for (ex, sk) in per_call {
        examples.extend(ex);
        skipped.add(sk);
    }
    (examples, skipped)
}

/// Noise labels: true when the reference hypothesis differs from the
/// corrected text.
pub fn derive_aed_labels(examples: &[PseudoLabelExample], reference: AedReference) -> Vec<AedExample> {
    examples
        .iter()
        .map(|e| {
            let idx = match reference {
                AedReference::AsrBest => 0,
                AedReference::Chosen => e.chosen_index,
            };
            let hyp = e.alternatives.get(idx).map(String::as_str).unwrap_or("");
            AedExample {
                alternatives: e.alternatives.clone(),
                label: hyp != e.corrected_text,
            }
        })
        .collect()
}
