//! Tokenization of transcript text into spoken-form items: digits, digit
//! words, spelled letters, NATO phrases, words and filler.

use std::ops::Range;

use crate::lexicon;

/// A whitespace-delimited token with its lowercase, punctuation-trimmed form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    pub raw: String,
    pub norm: String,
}

pub fn tokenize(text: &str) -> Vec<RawToken> {
    text.split_whitespace()
        .map(|raw| RawToken {
            raw: raw.to_string(),
            norm: norm_token(raw),
        })
        .collect()
}

pub(crate) fn norm_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
        .trim_matches('\'')
        .to_lowercase()
}

pub fn join_tokens(tokens: &[RawToken]) -> String {
    tokens
        .iter()
        .map(|t| t.raw.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpokenKind {
    /// A run of digits, possibly grouped ("0156").
    Digit,
    /// "five", or a homophone such as "for" resolved by digit context.
    DigitWord,
    /// Code string holding letters, e.g. "AD0156" or "AD".
    Letter,
    /// "c as in charlie": the code word's initial wins over the claimed letter.
    NatoCoded { claimed: char, code: char },
    /// A single letter token.
    SpelledLetter,
    Word,
    /// Filler or punctuation; dropped when decoding.
    Noise,
}

/// One spoken item, covering one or more raw tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpokenToken {
    pub surface: String,
    pub kind: SpokenKind,
    /// Raw token indices covered.
    pub tokens: Range<usize>,
}

/// One decoded character and the raw-text offset (in chars) it came from,
/// when it was read out of a code string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedChar {
    pub ch: char,
    pub offset: Option<usize>,
}

impl SpokenToken {
    /// Decoded characters, uppercase. Words and noise decode to nothing.
    pub fn chars(&self) -> Vec<DecodedChar> {
        match self.kind {
            SpokenKind::Digit | SpokenKind::Letter => self
                .surface
                .chars()
                .enumerate()
                .filter(|(_, c)| c.is_ascii_alphanumeric())
                .map(|(i, c)| DecodedChar {
                    ch: c.to_ascii_uppercase(),
                    offset: Some(i),
                })
                .collect(),
            SpokenKind::DigitWord => {
                let n = norm_token(&self.surface);
                lexicon::digit_of_word(&n)
                    .or_else(|| lexicon::digit_of_homophone(&n))
                    .map(|ch| vec![DecodedChar { ch, offset: None }])
                    .unwrap_or_default()
            }
            SpokenKind::NatoCoded { code, .. } => vec![DecodedChar {
                ch: code,
                offset: None,
            }],
            SpokenKind::SpelledLetter => {
                let norm = norm_token(&self.surface);
                let multi = norm.chars().count() > 1;
                norm.chars()
                    .enumerate()
                    .map(|(i, c)| DecodedChar {
                        ch: c.to_ascii_uppercase(),
                        offset: multi.then_some(i),
                    })
                    .collect()
            }
            SpokenKind::Word | SpokenKind::Noise => Vec::new(),
        }
    }

    pub fn is_letter_item(&self) -> bool {
        matches!(
            self.kind,
            SpokenKind::SpelledLetter | SpokenKind::NatoCoded { .. }
        )
    }

    pub fn is_digit_item(&self) -> bool {
        matches!(self.kind, SpokenKind::Digit | SpokenKind::DigitWord)
    }

    pub fn first_token(&self) -> usize {
        self.tokens.start
    }

    pub fn last_token(&self) -> usize {
        self.tokens.end - 1
    }
}

fn single_letter(norm: &str) -> Option<char> {
    let mut it = norm.chars();
    match (it.next(), it.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c),
        _ => None,
    }
}

fn is_code_word(norm: &str) -> bool {
    norm.len() >= 2
        && norm.chars().all(|c| c.is_ascii_alphabetic())
        && lexicon::digit_of_word(norm).is_none()
        && !lexicon::is_filler(norm)
}

/// Tries to read "L <connector> W" starting at `i`; returns the index of the
/// code word.
fn match_code_phrase(tokens: &[RawToken], i: usize) -> Option<usize> {
    single_letter(&tokens[i].norm)?;
    for conn in lexicon::CODE_CONNECTORS {
        let code_idx = i + 1 + conn.len();
        if code_idx >= tokens.len() {
            continue;
        }
        let matches = conn
            .iter()
            .enumerate()
            .all(|(k, w)| tokens[i + 1 + k].norm == *w);
        if matches && is_code_word(&tokens[code_idx].norm) {
            return Some(code_idx);
        }
    }
    None
}

/// Classifies raw tokens into spoken items.
pub fn classify(tokens: &[RawToken]) -> Vec<SpokenToken> {
    let mut out: Vec<SpokenToken> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        let norm = t.norm.as_str();
        if let Some(code_idx) = match_code_phrase(tokens, i) {
            let claimed = single_letter(norm).unwrap_or('?').to_ascii_uppercase();
            let code = tokens[code_idx]
                .norm
                .chars()
                .next()
                .unwrap_or('?')
                .to_ascii_uppercase();
            let surface = tokens[i..=code_idx]
                .iter()
                .map(|t| t.raw.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            out.push(SpokenToken {
                surface,
                kind: SpokenKind::NatoCoded { claimed, code },
                tokens: i..code_idx + 1,
            });
            i = code_idx + 1;
            continue;
        }
        let kind = classify_single(t);
        out.push(SpokenToken {
            surface: t.raw.clone(),
            kind,
            tokens: i..i + 1,
        });
        i += 1;
    }
    resolve_digit_homophones(&mut out);
    merge_spelled_digraphs(&mut out);
    out
}

/// "j a qu a ...": a letter cluster spoken as one unit inside a spelled run
/// is spelled too.
fn merge_spelled_digraphs(items: &mut [SpokenToken]) {
    for i in 1..items.len().saturating_sub(1) {
        if items[i].kind == SpokenKind::Word
            && lexicon::SPELLED_CLUSTERS.contains(&norm_token(&items[i].surface).as_str())
            && items[i - 1].kind == SpokenKind::SpelledLetter
            && items[i + 1].kind == SpokenKind::SpelledLetter
        {
            items[i].kind = SpokenKind::SpelledLetter;
        }
    }
}

fn classify_single(t: &RawToken) -> SpokenKind {
    let norm = t.norm.as_str();
    if norm.is_empty() {
        return SpokenKind::Noise;
    }
    let alnum: String = t.raw.chars().filter(|c| c.is_alphanumeric()).collect();
    if !alnum.is_empty() && alnum.chars().all(|c| c.is_ascii_digit()) {
        return SpokenKind::Digit;
    }
    if alnum.chars().all(|c| c.is_ascii_alphanumeric()) && alnum.chars().any(|c| c.is_ascii_digit())
    {
        return SpokenKind::Letter;
    }
    if single_letter(norm).is_some() {
        return SpokenKind::SpelledLetter;
    }
    if alnum.len() >= 2 && alnum.chars().all(|c| c.is_ascii_uppercase()) {
        return SpokenKind::Letter;
    }
    if lexicon::digit_of_word(norm).is_some() {
        return SpokenKind::DigitWord;
    }
    if lexicon::is_filler(norm) {
        return SpokenKind::Noise;
    }
    SpokenKind::Word
}

/// "for", "to", "oh", ... count as digits only when a neighbouring item is a
/// digit.
fn resolve_digit_homophones(items: &mut [SpokenToken]) {
    let candidates: Vec<usize> = items
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            s.kind == SpokenKind::Noise
                && lexicon::digit_of_homophone(&norm_token(&s.surface)).is_some()
        })
        .map(|(i, _)| i)
        .collect();
    // Resolve left to right so chains like "for to five" settle.
    for _ in 0..2 {
        for &i in &candidates {
            if items[i].kind != SpokenKind::Noise {
                continue;
            }
            let near_digit = |j: Option<usize>| {
                j.and_then(|j| items.get(j))
                    .map(|s| s.is_digit_item())
                    .unwrap_or(false)
            };
            if near_digit(i.checked_sub(1)) || near_digit(Some(i + 1)) {
                items[i].kind = SpokenKind::DigitWord;
            }
        }
    }
}

/// Decodes a spoken alphanumeric value: resolves NATO phrases (code word
/// wins), maps digit words to digits, uppercases spelled letters and drops
/// filler. Unrecognised words pass through uppercased.
pub fn decode_spoken_form(text: &str) -> String {
    let tokens = tokenize(text);
    let items = classify(&tokens);
    decode_items(&items).into_iter().map(|(c, _)| c).collect()
}

/// Decoded characters with the index of the spoken item each came from.
pub(crate) fn decode_items(items: &[SpokenToken]) -> Vec<(char, usize)> {
    let mut out = Vec::new();
    for (idx, item) in items.iter().enumerate() {
        match item.kind {
            SpokenKind::Word => {
                let norm = norm_token(&item.surface);
                if let Some(c) = lexicon::nato_letter(&norm) {
                    out.push((c, idx));
                } else {
                    out.extend(
                        norm.chars()
                            .filter(|c| c.is_alphanumeric())
                            .map(|c| (c.to_ascii_uppercase(), idx)),
                    );
                }
            }
            _ => out.extend(item.chars().into_iter().map(|d| (d.ch, idx))),
        }
    }
    out
}
