//! N-best fusion: align every hypothesis to the ASR best, score each aligned
//! column under the channel model, and prefer fused texts whose extracted
//! value fits the field format.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::channel::ChannelModel;
use crate::extraction::BuiltinExtractor;
use crate::model::FieldSpec;
use crate::spoken::{classify, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuseOptions {
    /// Score penalty (nats) for a fused text whose value breaks the format.
    pub format_penalty: f64,
    /// Least-certain decisions reconsidered when the best text breaks the
    /// format.
    pub max_ambiguous: usize,
    /// Channel rewrite candidates per character inside the value span.
    pub rewrite_candidates: usize,
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions {
            format_penalty: 3.0,
            max_ambiguous: 4,
            rewrite_candidates: 2,
        }
    }
}

/// A word, or one character of a code-like token.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Unit {
    text: String,
    key: String,
    /// Written without a space after the previous character unit.
    glue: bool,
    is_char: bool,
    token: usize,
}

fn code_like(tok: &str) -> bool {
    let alnum = tok.chars().all(|c| c.is_ascii_alphanumeric());
    tok.chars().any(|c| c.is_ascii_digit())
        || (alnum && tok.chars().count() >= 2 && tok.chars().all(|c| c.is_ascii_uppercase()))
}

fn unitize(text: &str) -> Vec<Unit> {
    let mut out = Vec::new();
    for (ti, tok) in text.split_whitespace().enumerate() {
        if code_like(tok) {
            for (k, ch) in tok.chars().enumerate() {
                out.push(Unit {
                    text: ch.to_string(),
                    key: ch.to_lowercase().collect(),
                    glue: k > 0,
                    is_char: true,
                    token: ti,
                });
            }
        } else {
            out.push(Unit {
                text: tok.to_string(),
                key: tok.to_lowercase(),
                glue: false,
                is_char: false,
                token: ti,
            });
        }
    }
    out
}

/// Alignment of one hypothesis to the anchor: per anchor unit the aligned
/// unit (if any), and per gap (before each anchor unit, plus the end) the
/// units inserted there.
struct Aligned {
    cols: Vec<Option<usize>>,
    slots: Vec<Vec<usize>>,
}

fn align_to_anchor(anchor: &[Unit], other: &[Unit]) -> Aligned {
    let (n, m) = (anchor.len(), other.len());
    let sub_cost = |a: &Unit, b: &Unit| -> f64 {
        if a.key == b.key {
            0.0
        } else if a.is_char == b.is_char {
            1.0
        } else {
            1.6
        }
    };
    let mut dp = vec![vec![0.0f64; m + 1]; n + 1];
    for i in 0..=n {
        dp[i][0] = i as f64;
    }
    for j in 0..=m {
        dp[0][j] = j as f64;
    }
    for i in 1..=n {
        for j in 1..=m {
            dp[i][j] = (dp[i - 1][j - 1] + sub_cost(&anchor[i - 1], &other[j - 1]))
                .min(dp[i - 1][j] + 1.0)
                .min(dp[i][j - 1] + 1.0);
        }
    }
    let mut cols = vec![None; n];
    let mut slots = vec![Vec::new(); n + 1];
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + sub_cost(&anchor[i - 1], &other[j - 1]) {
            cols[i - 1] = Some(j - 1);
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1.0 {
            i -= 1;
        } else {
            slots[i].push(j - 1);
            j -= 1;
        }
    }
    for s in &mut slots {
        s.reverse();
    }
    Aligned { cols, slots }
}

/// One decision: a column (one anchor unit) or an insertion slot.
struct Decision {
    /// Candidate outputs, best first: (units, score).
    options: Vec<(Vec<Unit>, f64)>,
    /// Every hypothesis agrees and the position is outside the value span.
    fixed: bool,
}

struct Scorer<'a> {
    model: &'a ChannelModel,
    memo: HashMap<(String, String), f64>,
}

impl Scorer<'_> {
    fn log_p(&mut self, observed: &[Unit], truth: &[Unit]) -> f64 {
        let o = join_keys(observed);
        let t = join_keys(truth);
        if o.is_empty() && t.is_empty() {
            return self.model.log_no_ins();
        }
        if let Some(v) = self.memo.get(&(o.clone(), t.clone())) {
            return *v;
        }
        let single_words = observed.len() == 1 && truth.len() == 1 && !observed[0].is_char && !truth[0].is_char;
        let v = if single_words {
            self.model.word_log_prob(&o, &t)
        } else {
            self.model.string_log_prob(&o, &t)
        };
        self.memo.insert((o, t), v);
        v
    }
}

fn join_keys(units: &[Unit]) -> String {
    units.iter().map(|u| u.key.as_str()).collect::<Vec<_>>().join(" ")
}

fn render(units: &[&Unit]) -> String {
    let mut out = String::new();
    let mut prev_char = false;
    for u in units {
        if !out.is_empty() && !(u.glue && u.is_char && prev_char) {
            out.push(' ');
        }
        out.push_str(&u.text);
        prev_char = u.is_char;
    }
    out
}

/// Token range of the value the extractor reads from `text`.
fn value_token_span(ex: &BuiltinExtractor, text: &str, spec: &FieldSpec) -> Option<(usize, usize)> {
    let items = classify(&tokenize(text));
    let cand = ex.candidates(text, spec).pop()?;
    let (lo, hi) = cand.item_span()?;
    Some((items[lo].first_token(), items[hi].last_token()))
}

/// Fuses the n-best list into one utterance text. With a single hypothesis
/// the text is only rescored under the channel, so a format-valid input is
/// returned unchanged.
pub fn fuse_and_correct(alternatives: &[String], model: &ChannelModel, spec: &FieldSpec) -> String {
    fuse_with(alternatives, model, spec, &BuiltinExtractor::default(), &FuseOptions::default())
}

pub fn fuse_with(
    alternatives: &[String],
    model: &ChannelModel,
    spec: &FieldSpec,
    ex: &BuiltinExtractor,
    opts: &FuseOptions,
) -> String {
    let Some(first) = alternatives.first() else {
        return String::new();
    };
    let hyps: Vec<Vec<Unit>> = alternatives.iter().map(|a| unitize(a)).collect();
    let anchor = &hyps[0];
    let aligned: Vec<Aligned> = hyps.iter().map(|h| align_to_anchor(anchor, h)).collect();
    let span = value_token_span(ex, first, spec);
    let in_span = |u: &Unit| span.is_some_and(|(a, b)| u.token >= a && u.token <= b);
    let mut scorer = Scorer {
        model,
        memo: HashMap::new(),
    };

    let mut decisions: Vec<Decision> = Vec::new();
    for pos in 0..=anchor.len() {
        // Insertion slot before anchor unit `pos`.
        let observed: Vec<Vec<Unit>> = hyps
            .iter()
            .zip(&aligned)
            .map(|(h, a)| a.slots[pos].iter().map(|&k| h[k].clone()).collect())
            .collect();
        decisions.push(decide(&mut scorer, observed, Vec::new(), false));
        if pos == anchor.len() {
            break;
        }
        let observed: Vec<Vec<Unit>> = hyps
            .iter()
            .zip(&aligned)
            .map(|(h, a)| a.cols[pos].map(|k| vec![h[k].clone()]).unwrap_or_default())
            .collect();
        let mut extra = Vec::new();
        let a = &anchor[pos];
        if a.is_char && in_span(a) {
            for t in model.likely_truths(a.key.chars().next().unwrap_or(' '), opts.rewrite_candidates) {
                let text = if a.text.chars().all(|c| c.is_uppercase()) {
                    t.to_uppercase().collect()
                } else {
                    t.to_string()
                };
                extra.push(vec![Unit {
                    key: t.to_string(),
                    text,
                    ..a.clone()
                }]);
            }
        }
        decisions.push(decide(&mut scorer, observed, extra, !in_span(a)));
    }

    let choice: Vec<usize> = vec![0; decisions.len()];
    let assemble = |choice: &[usize]| -> String {
        let units: Vec<&Unit> = decisions
            .iter()
            .zip(choice)
            .flat_map(|(d, &k)| d.options[k].0.iter())
            .collect();
        render(&units)
    };
    let total = |choice: &[usize]| -> f64 {
        decisions.iter().zip(choice).map(|(d, &k)| d.options[k].1).sum()
    };
    let valid = |text: &str| spec.matches_format(&ex.extract_text(text, spec));

    let greedy = assemble(&choice);
    let result = if valid(&greedy) {
        greedy
    } else {
        // Reconsider the closest calls, swapping in each runner-up.
        let mut ambiguous: Vec<(f64, usize)> = decisions
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.fixed && d.options.len() > 1)
            .map(|(i, d)| (d.options[0].1 - d.options[1].1, i))
            .collect();
        ambiguous.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ambiguous.truncate(opts.max_ambiguous);
        let mut best = (total(&choice) - opts.format_penalty, greedy);
        for mask in 1u32..(1 << ambiguous.len()) {
            let mut c = choice.clone();
            for (bit, &(_, i)) in ambiguous.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    c[i] = 1;
                }
            }
            let text = assemble(&c);
            let score = total(&c) - if valid(&text) { 0.0 } else { opts.format_penalty };
            if score > best.0 {
                best = (score, text);
            }
        }
        best.1
    };
    // Keep the original spelling of whitespace when nothing changed.
    if unitize(&result).iter().map(|u| &u.text).eq(anchor.iter().map(|u| &u.text)) {
        first.clone()
    } else {
        result
    }
}

fn decide(scorer: &mut Scorer, observed: Vec<Vec<Unit>>, extra: Vec<Vec<Unit>>, outside_span: bool) -> Decision {
    // Candidates: what the hypotheses show (first occurrence keeps its
    // surface form), the empty output, and any channel rewrites.
    let mut cands: Vec<Vec<Unit>> = Vec::new();
    for o in &observed {
        if !cands.iter().any(|c| join_keys(c) == join_keys(o)) {
            cands.push(o.clone());
        }
    }
    let unanimous = cands.len() == 1;
    if unanimous && outside_span {
        return Decision {
            options: vec![(cands.remove(0), 0.0)],
            fixed: true,
        };
    }
    if !cands.iter().any(|c| c.is_empty()) {
        cands.push(Vec::new());
    }
    for e in extra {
        if !cands.iter().any(|c| join_keys(c) == join_keys(&e)) {
            cands.push(e);
        }
    }
    let mut options: Vec<(Vec<Unit>, f64)> = cands
        .into_iter()
        .map(|c| {
            let s: f64 = observed.iter().map(|o| scorer.log_p(o, &c)).sum();
            (c, s)
        })
        .collect();
    // Stable: ties keep first-seen order, which starts with the anchor.
    options.sort_by(|a, b| b.1.total_cmp(&a.1));
    Decision {
        options,
        fixed: false,
    }
}
