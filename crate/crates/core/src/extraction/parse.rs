//! Field parsers over spoken items. Every parsed character keeps a pointer
//! to the item it came from so that a repair can be spliced back into the
//! original text.

use crate::lexicon;
use crate::model::{normalized_edit_distance, ValueKind};
use crate::spoken::{decode_items, norm_token, SpokenKind, SpokenToken};

/// Where a value character came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharSource {
    /// The whole spoken item (a spelled letter, digit word or NATO phrase).
    Item(usize),
    /// One character of a code string item ("0156"), by char offset.
    InItem { item: usize, offset: usize },
    /// A name word; the whole word is one source.
    Word(usize),
}

impl CharSource {
    pub fn item(&self) -> usize {
        match *self {
            CharSource::Item(i) | CharSource::Word(i) => i,
            CharSource::InItem { item, .. } => item,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueChar {
    pub ch: char,
    pub src: CharSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartRole {
    FirstName,
    Initial,
    Digits,
    Code,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    pub role: PartRole,
    pub chars: Vec<ValueChar>,
}

impl Part {
    pub fn text(&self) -> String {
        self.chars.iter().map(|c| c.ch).collect()
    }

    /// The name word this part was read from, when it is a single word.
    pub fn word_item(&self) -> Option<usize> {
        match self.chars.first()?.src {
            CharSource::Word(i) => Some(i),
            _ => None,
        }
    }
}

/// A parsed value with provenance. `text()` is the raw (pre-normalization)
/// value: parts joined by single spaces, except code values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub kind: ValueKind,
    pub parts: Vec<Part>,
}

impl Candidate {
    pub fn text(&self) -> String {
        let sep = if self.kind == ValueKind::Alphanumeric { "" } else { " " };
        self.parts
            .iter()
            .map(Part::text)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(sep)
    }

    pub fn part(&self, role: PartRole) -> Option<&Part> {
        self.parts.iter().find(|p| p.role == role)
    }

    /// Spoken item range covered by the value.
    pub fn item_span(&self) -> Option<(usize, usize)> {
        let items = self.parts.iter().flat_map(|p| p.chars.iter().map(|c| c.src.item()));
        let (mut lo, mut hi) = (usize::MAX, 0);
        let mut any = false;
        for i in items {
            lo = lo.min(i);
            hi = hi.max(i);
            any = true;
        }
        any.then_some((lo, hi))
    }
}

/// Options that affect parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Names spoken by the conversational AI itself; never taken as a value.
    pub excluded_names: Vec<String>,
}

/// Parses one segment of spoken items (already split at correction markers).
pub fn parse_segment(items: &[SpokenToken], kind: ValueKind, opts: &ParseOptions) -> Option<Candidate> {
    match kind {
        ValueKind::Alphanumeric => parse_code(items),
        ValueKind::PersonName => parse_name(items, 0..items.len(), opts).map(|parts| Candidate {
            kind,
            parts,
        }),
        ValueKind::NameAndDate => parse_name_and_date(items, opts),
    }
}

/// Splits item indices into segments at correction markers.
pub fn segments(items: &[SpokenToken]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, item) in items.iter().enumerate() {
        if item.kind == SpokenKind::Noise
            && lexicon::CORRECTION_MARKERS.contains(&norm_token(&item.surface).as_str())
        {
            if i > start {
                out.push(start..i);
            }
            start = i + 1;
        }
    }
    if start < items.len() {
        out.push(start..items.len());
    }
    out
}

fn parse_code(items: &[SpokenToken]) -> Option<Candidate> {
    let mut chars = Vec::new();
    for (idx, item) in items.iter().enumerate() {
        match item.kind {
            SpokenKind::Digit | SpokenKind::Letter => {
                chars.extend(item.chars().into_iter().map(|d| ValueChar {
                    ch: d.ch,
                    src: CharSource::InItem {
                        item: idx,
                        offset: d.offset.unwrap_or(0),
                    },
                }));
            }
            SpokenKind::Word => {
                // Standalone NATO words and unknown words pass through.
                for (ch, _) in decode_items(std::slice::from_ref(item)) {
                    chars.push(ValueChar {
                        ch,
                        src: CharSource::Item(idx),
                    });
                }
            }
            _ => chars.extend(item.chars().into_iter().map(|d| ValueChar {
                ch: d.ch,
                src: CharSource::Item(idx),
            })),
        }
    }
    if chars.is_empty() {
        return None;
    }
    Some(Candidate {
        kind: ValueKind::Alphanumeric,
        parts: vec![Part {
            role: PartRole::Code,
            chars,
        }],
    })
}

fn is_marker(item: &SpokenToken) -> bool {
    item.kind == SpokenKind::Noise && norm_token(&item.surface) == "initial"
}

fn name_word(item: &SpokenToken, opts: &ParseOptions) -> bool {
    if item.kind != SpokenKind::Word {
        return false;
    }
    let n = norm_token(&item.surface);
    n.chars().count() >= 2
        && n.chars().all(|c| c.is_alphabetic() || c == '\'' || c == '-')
        && !opts.excluded_names.iter().any(|x| x.eq_ignore_ascii_case(&n))
}

fn letter_char(items: &[SpokenToken], idx: usize) -> Option<ValueChar> {
    let item = &items[idx];
    if !item.is_letter_item() {
        return None;
    }
    item.chars().first().map(|d| ValueChar {
        ch: d.ch,
        src: CharSource::Item(idx),
    })
}

fn word_chars(items: &[SpokenToken], idx: usize) -> Vec<ValueChar> {
    norm_token(&items[idx].surface)
        .chars()
        .map(|ch| ValueChar {
            ch,
            src: CharSource::Word(idx),
        })
        .collect()
}

/// Maximal runs of letter items (noise between letters is skipped).
fn letter_runs(items: &[SpokenToken], range: std::ops::Range<usize>) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for i in range {
        let item = &items[i];
        if item.is_letter_item() {
            cur.push(i);
        } else if item.kind == SpokenKind::Noise && !is_marker(item) {
            continue;
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

fn run_text(items: &[SpokenToken], run: &[usize]) -> String {
    run_chars(items, run)
        .iter()
        .map(|c| c.ch.to_ascii_lowercase())
        .collect()
}

/// Every letter of the run; a spelled cluster ("qu") gives one char per
/// letter.
fn run_chars(items: &[SpokenToken], run: &[usize]) -> Vec<ValueChar> {
    run.iter()
        .flat_map(|&i| {
            let chars = items[i].chars();
            if chars.len() <= 1 || !items[i].is_letter_item() {
                letter_char(items, i).into_iter().collect::<Vec<_>>()
            } else {
                chars
                    .iter()
                    .enumerate()
                    .map(|(k, d)| ValueChar {
                        ch: d.ch,
                        src: CharSource::InItem { item: i, offset: k },
                    })
                    .collect()
            }
        })
        .collect()
}

/// Parses "Firstname L" out of `range`.
fn parse_name(
    items: &[SpokenToken],
    range: std::ops::Range<usize>,
    opts: &ParseOptions,
) -> Option<Vec<Part>> {
    let marker = range.clone().rev().find(|&i| is_marker(&items[i]));
    let (first, initial) = match marker {
        Some(m) => {
            let after = (m + 1..range.end).find(|&i| items[i].is_letter_item());
            let (left_end, initial) = match after {
                Some(i) => (m, letter_char(items, i)),
                None => {
                    // "d a r a for alpha my initial": the initial precedes the marker.
                    let before = (range.start..m).rev().find(|&i| items[i].is_letter_item());
                    match before {
                        Some(i) => (i, letter_char(items, i)),
                        None => (m, None),
                    }
                }
            };
            (first_name(items, range.start..left_end, opts), initial)
        }
        None => split_name_and_initial(items, range, opts),
    };
    if first.is_none() && initial.is_none() {
        return None;
    }
    let mut parts = Vec::new();
    if let Some(chars) = first {
        parts.push(Part {
            role: PartRole::FirstName,
            chars,
        });
    }
    if let Some(c) = initial {
        parts.push(Part {
            role: PartRole::Initial,
            chars: vec![c],
        });
    }
    Some(parts)
}

/// First name from the part before a marker: the last spelled run of two or
/// more letters, else the last name word.
fn first_name(
    items: &[SpokenToken],
    range: std::ops::Range<usize>,
    opts: &ParseOptions,
) -> Option<Vec<ValueChar>> {
    let run = letter_runs(items, range.clone())
        .into_iter()
        .rev()
        .find(|r| r.len() >= 2);
    if let Some(run) = run {
        return Some(run_chars(items, &run));
    }
    range
        .rev()
        .find(|&i| name_word(&items[i], opts))
        .map(|i| word_chars(items, i))
}

fn split_name_and_initial(
    items: &[SpokenToken],
    range: std::ops::Range<usize>,
    opts: &ParseOptions,
) -> (Option<Vec<ValueChar>>, Option<ValueChar>) {
    let runs = letter_runs(items, range.clone());
    let Some(run) = runs.last() else {
        let word = range.rev().find(|&i| name_word(&items[i], opts));
        return (word.map(|i| word_chars(items, i)), None);
    };
    let run_start = run[0];
    let word = (range.start..run_start)
        .rev()
        .find(|&i| name_word(&items[i], opts));
    match word {
        Some(w) if run.len() >= 2 => {
            // A spelled run after a name word is the spelling of that name
            // (spelling wins), possibly followed by the initial.
            let word_text = norm_token(&items[w].surface);
            let full = run_text(items, run);
            let head = &full[..full.len() - 1];
            if normalized_edit_distance(&word_text, &full)
                <= normalized_edit_distance(&word_text, head)
                && normalized_edit_distance(&word_text, &full) <= 0.4
            {
                (Some(run_chars(items, run)), None)
            } else if normalized_edit_distance(&word_text, head) <= 0.4 {
                let chars = run_chars(items, run);
                let (init, name) = chars.split_last().expect("run has two letters");
                (Some(name.to_vec()), Some(*init))
            } else {
                let chars = run_chars(items, run);
                (Some(word_chars(items, w)), chars.last().copied())
            }
        }
        Some(w) => (Some(word_chars(items, w)), letter_char(items, run[0])),
        None if run.len() >= 2 => {
            let chars = run_chars(items, run);
            let (init, name) = chars.split_last().expect("run has two letters");
            (Some(name.to_vec()), Some(*init))
        }
        None => (None, letter_char(items, run[0])),
    }
}

fn parse_name_and_date(items: &[SpokenToken], opts: &ParseOptions) -> Option<Candidate> {
    let first_digit = items.iter().position(|s| s.is_digit_item());
    let name_end = first_digit.unwrap_or(items.len());
    let mut parts = parse_name(items, 0..name_end, opts).unwrap_or_default();
    if let Some(start) = first_digit {
        let mut chars = Vec::new();
        for (idx, item) in items.iter().enumerate().skip(start) {
            match item.kind {
                SpokenKind::Digit => chars.extend(item.chars().into_iter().map(|d| ValueChar {
                    ch: d.ch,
                    src: CharSource::InItem {
                        item: idx,
                        offset: d.offset.unwrap_or(0),
                    },
                })),
                SpokenKind::DigitWord => chars.extend(item.chars().into_iter().map(|d| ValueChar {
                    ch: d.ch,
                    src: CharSource::Item(idx),
                })),
                _ => {}
            }
        }
        if !chars.is_empty() {
            parts.push(Part {
                role: PartRole::Digits,
                chars,
            });
        }
    }
    if parts.is_empty() {
        return None;
    }
    Some(Candidate {
        kind: ValueKind::NameAndDate,
        parts,
    })
}
