//! Character and word confusion counts learned from pseudo-labels, read as a
//! noisy channel P(observed | true).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudolabel::PseudoLabelExample;

pub const CHANNEL_VERSION: u32 = 1;

/// Which hypotheses are aligned with the corrected text during training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSource {
    /// Only the hypothesis chosen during pseudo-labeling.
    #[default]
    Chosen,
    /// Every hypothesis of the n-best list.
    AllAlternatives,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChannelModel {
    pub version: u32,
    /// Additive smoothing per outcome.
    pub smoothing: f64,
    /// Extra pseudo-counts on keeping a character unchanged.
    pub keep_prior: f64,
    /// true char -> times it was observed unchanged.
    pub keep: BTreeMap<char, f64>,
    /// true char -> observed char -> count.
    pub sub: BTreeMap<char, BTreeMap<char, f64>>,
    /// true char -> times it was dropped.
    pub del: BTreeMap<char, f64>,
    /// observed char -> times it was inserted.
    pub ins: BTreeMap<char, f64>,
    /// true word -> observed word -> count (whole-token rewrites such as
    /// homophones).
    pub word_sub: BTreeMap<String, BTreeMap<String, f64>>,
    /// true word -> times it was aligned to any word.
    pub word_total: BTreeMap<String, f64>,
    #[serde(skip)]
    cache: OnceLock<Cache>,
}

impl PartialEq for ChannelModel {
    fn eq(&self, o: &Self) -> bool {
        self.version == o.version
            && self.smoothing == o.smoothing
            && self.keep_prior == o.keep_prior
            && self.keep == o.keep
            && self.sub == o.sub
            && self.del == o.del
            && self.ins == o.ins
            && self.word_sub == o.word_sub
            && self.word_total == o.word_total
    }
}

#[derive(Debug, Clone)]
struct Cache {
    alphabet: f64,
    denom: BTreeMap<char, f64>,
    default_denom: f64,
    ins_denom: f64,
    log_no_ins: f64,
}

const BASE_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 ";

impl ChannelModel {
    /// A model with no counts: every character is kept with the prior.
    pub fn empty() -> Self {
        ChannelModel {
            version: CHANNEL_VERSION,
            smoothing: 0.5,
            keep_prior: 10.0,
            ..Default::default()
        }
    }

    fn cache(&self) -> &Cache {
        self.cache.get_or_init(|| {
            let mut chars: std::collections::BTreeSet<char> = BASE_ALPHABET.chars().collect();
            chars.extend(self.keep.keys());
            chars.extend(self.del.keys());
            chars.extend(self.ins.keys());
            for (c, m) in &self.sub {
                chars.insert(*c);
                chars.extend(m.keys());
            }
            let alphabet = chars.len() as f64;
            let a = self.smoothing;
            let mut denom = BTreeMap::new();
            let mut total = 0.0;
            for &c in &chars {
                let n = self.keep.get(&c).copied().unwrap_or(0.0)
                    + self.del.get(&c).copied().unwrap_or(0.0)
                    + self.sub.get(&c).map(|m| m.values().sum()).unwrap_or(0.0);
                total += n;
                denom.insert(c, n + self.keep_prior + a * (alphabet + 1.0));
            }
            let ins_total: f64 = self.ins.values().sum();
            let ins_denom = total + self.keep_prior + a * alphabet + ins_total;
            let log_no_ins = (1.0 - (ins_total + a * alphabet) / ins_denom).max(1e-9).ln();
            Cache {
                alphabet,
                denom,
                default_denom: self.keep_prior + a * (alphabet + 1.0),
                ins_denom,
                log_no_ins,
            }
        })
    }

    fn denom(&self, c: char) -> f64 {
        let cache = self.cache();
        cache.denom.get(&c).copied().unwrap_or(cache.default_denom)
    }

    pub fn log_keep(&self, c: char) -> f64 {
        ((self.keep.get(&c).copied().unwrap_or(0.0) + self.keep_prior + self.smoothing) / self.denom(c)).ln()
    }

    /// log P(observed | true) for a substitution (`observed != truth`).
    pub fn log_sub(&self, observed: char, truth: char) -> f64 {
        let n = self
            .sub
            .get(&truth)
            .and_then(|m| m.get(&observed))
            .copied()
            .unwrap_or(0.0);
        ((n + self.smoothing) / self.denom(truth)).ln()
    }

    pub fn log_del(&self, truth: char) -> f64 {
        ((self.del.get(&truth).copied().unwrap_or(0.0) + self.smoothing) / self.denom(truth)).ln()
    }

    pub fn log_ins(&self, observed: char) -> f64 {
        ((self.ins.get(&observed).copied().unwrap_or(0.0) + self.smoothing) / self.cache().ins_denom).ln()
    }

    /// log probability that no character is inserted at a position.
    pub fn log_no_ins(&self) -> f64 {
        self.cache().log_no_ins
    }

    /// Substitution weight (log probability) for observing `observed` when
    /// `truth` was said; the keep probability when they are equal.
    pub fn sub_weight(&self, observed: char, truth: char) -> f64 {
        if observed == truth {
            self.log_keep(truth)
        } else {
            self.log_sub(observed, truth)
        }
    }

    /// Best-path log P(observed | truth) over character edit scripts,
    /// case-insensitive.
    pub fn string_log_prob(&self, observed: &str, truth: &str) -> f64 {
        let o: Vec<char> = observed.chars().flat_map(char::to_lowercase).collect();
        let t: Vec<char> = truth.chars().flat_map(char::to_lowercase).collect();
        let mut prev: Vec<f64> = Vec::with_capacity(o.len() + 1);
        prev.push(0.0);
        for j in 0..o.len() {
            prev.push(prev[j] + self.log_ins(o[j]));
        }
        let mut cur = vec![0.0; o.len() + 1];
        for &tc in &t {
            cur[0] = prev[0] + self.log_del(tc);
            for j in 1..=o.len() {
                let diag = prev[j - 1] + self.sub_weight(o[j - 1], tc);
                let up = prev[j] + self.log_del(tc);
                let left = cur[j - 1] + self.log_ins(o[j - 1]);
                cur[j] = diag.max(up).max(left);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        prev[o.len()]
    }

    /// Word-level log P(observed | truth): the learned rewrite table where it
    /// has evidence, else the character channel.
    pub fn word_log_prob(&self, observed: &str, truth: &str) -> f64 {
        let chars = self.string_log_prob(observed, truth);
        let (o, t) = (observed.to_lowercase(), truth.to_lowercase());
        if o == t {
            return chars;
        }
        match self.word_sub.get(&t).and_then(|m| m.get(&o)) {
            Some(&n) => {
                let total = self.word_total.get(&t).copied().unwrap_or(0.0);
                let learned = ((n + self.smoothing) / (total + self.keep_prior + 2.0 * self.smoothing)).ln();
                learned.max(chars)
            }
            None => chars,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.cache().alphabet as usize
    }

    /// True characters seen producing `observed`, most frequent first,
    /// excluding `observed` itself.
    pub fn likely_truths(&self, observed: char, k: usize) -> Vec<char> {
        let o = observed.to_ascii_lowercase();
        let mut scored: Vec<(f64, char)> = self
            .sub
            .iter()
            .filter_map(|(t, m)| m.get(&o).map(|n| (*n, *t)))
            .filter(|(_, t)| *t != o)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, t)| t).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHANNEL_VERSION {
            return Err(Error::Config(format!(
                "channel model version {} (expected {CHANNEL_VERSION})",
                self.version
            )));
        }
        if !(self.smoothing > 0.0) || !(self.keep_prior >= 0.0) {
            return Err(Error::Config("channel smoothing must be positive".into()));
        }
        let counts = self
            .keep
            .values()
            .chain(self.del.values())
            .chain(self.ins.values())
            .chain(self.sub.values().flat_map(|m| m.values()))
            .chain(self.word_total.values())
            .chain(self.word_sub.values().flat_map(|m| m.values()));
        if counts.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("channel counts must be finite and non-negative".into()));
        }
        Ok(())
    }
}

enum Op<T> {
    Keep(T),
    Sub { observed: T, truth: T },
    Del(T),
    Ins(T),
}

/// Minimal edit script turning `truth` into `observed`.
fn edit_script<T: PartialEq + Clone>(observed: &[T], truth: &[T]) -> Vec<Op<T>> {
    let (n, m) = (truth.len(), observed.len());
    let mut dp = vec![vec![0u32; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i as u32;
    }
    for j in 0..=m {
        dp[0][j] = j as u32;
    }
    for i in 1..=n {
        for j in 1..=m {
            let s = dp[i - 1][j - 1] + u32::from(truth[i - 1] != observed[j - 1]);
            dp[i][j] = s.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + u32::from(truth[i - 1] != observed[j - 1]) {
            ops.push(if truth[i - 1] == observed[j - 1] {
                Op::Keep(truth[i - 1].clone())
            } else {
                Op::Sub {
                    observed: observed[j - 1].clone(),
                    truth: truth[i - 1].clone(),
                }
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.push(Op::Del(truth[i - 1].clone()));
            i -= 1;
        } else {
            ops.push(Op::Ins(observed[j - 1].clone()));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn add<K: Ord>(m: &mut BTreeMap<K, f64>, k: K) {
    *m.entry(k).or_insert(0.0) += 1.0;
}

/// Counts character and word edits between hypotheses and corrected texts.
/// Counts are sums, so the result does not depend on example order.
pub fn train_channel_model(examples: &[PseudoLabelExample]) -> Result<ChannelModel> {
    train_channel_model_with(examples, ChannelSource::Chosen)
}

pub fn train_channel_model_with(
    examples: &[PseudoLabelExample],
    source: ChannelSource,
) -> Result<ChannelModel> {
    if examples.is_empty() {
        return Err(Error::Training("channel training needs at least one example".into()));
    }
    let mut m = ChannelModel::empty();
    for ex in examples {
        let hyps: Vec<&String> = match source {
            ChannelSource::Chosen => ex.alternatives.get(ex.chosen_index).into_iter().collect(),
            ChannelSource::AllAlternatives => ex.alternatives.iter().collect(),
        };
        let truth: Vec<char> = ex.corrected_text.to_lowercase().chars().collect();
        let truth_words: Vec<String> = ex
            .corrected_text
            .to_lowercase()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        for h in hyps {
            let obs: Vec<char> = h.to_lowercase().chars().collect();
            for op in edit_script(&obs, &truth) {
                match op {
                    Op::Keep(c) => add(&mut m.keep, c),
                    Op::Sub { observed, truth } => {
                        add(m.sub.entry(truth).or_default(), observed);
                    }
                    Op::Del(c) => add(&mut m.del, c),
                    Op::Ins(c) => add(&mut m.ins, c),
                }
            }
            let obs_words: Vec<String> = h.to_lowercase().split_whitespace().map(str::to_string).collect();
            for op in edit_script(&obs_words, &truth_words) {
                match op {
                    Op::Keep(w) => add(&mut m.word_total, w),
                    Op::Sub { observed, truth } => {
                        add(&mut m.word_total, truth.clone());
                        add(m.word_sub.entry(truth).or_default(), observed);
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FieldId;

    fn ex(alts: &[&str], chosen: usize, corrected: &str) -> PseudoLabelExample {
        PseudoLabelExample {
            call_id: "c".into(),
            field_id: FieldId::GroupNumber,
            utterance_index: 0,
            alternatives: alts.iter().map(|s| s.to_string()).collect(),
            gold: String::new(),
            chosen_index: chosen,
            corrected_text: corrected.into(),
        }
    }

    #[test]
    fn eight_for_h_is_the_strongest_substitution() {
        let exs = vec![
            ex(&["8D0156"], 0, "HD0156"),
            ex(&["it's 8 2"], 0, "it's h 2"),
            ex(&["8 8 1"], 0, "h h 1"),
        ];
        let m = train_channel_model(&exs).unwrap();
        let best = m
            .sub
            .iter()
            .flat_map(|(t, obs)| obs.keys().map(move |o| (*o, *t)))
            .max_by(|a, b| m.log_sub(a.0, a.1).total_cmp(&m.log_sub(b.0, b.1)))
            .unwrap();
        assert_eq!(best, ('8', 'h'));
        assert!(m.log_sub('8', 'h') > m.log_sub('h', '8'));
    }

    #[test]
    fn extra_zero_deletions_dominate() {
        let exs = vec![
            ex(&["1001234"], 0, "10001234"),
            ex(&["reference 501"], 0, "reference 5001"),
            ex(&["ab12"], 0, "ab102"),
            ex(&["xy"], 0, "xyz"),
        ];
        let m = train_channel_model(&exs).unwrap();
        for c in "123456789abcdefghijklmnopqrstuvwxyz".chars() {
            assert!(m.log_del('0') > m.log_del(c), "{c}");
        }
    }

    #[test]
    fn identity_example_is_near_uniform() {
        let m = train_channel_model(&[ex(&["abc"], 0, "abc")]).unwrap();
        assert!(m.sub.is_empty() && m.del.is_empty() && m.ins.is_empty());
        assert!((m.log_sub('x', 'a') - m.log_sub('y', 'a')).abs() < 1e-12);
        assert!((m.log_del('q') - m.log_del('z')).abs() < 1e-12);
        assert!(m.log_keep('a') > m.log_sub('b', 'a'));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(train_channel_model(&[]), Err(Error::Training(_))));
    }

    #[test]
    fn training_is_order_independent_and_round_trips() {
        let a = ex(&["rina a", "sabrina a"], 1, "sabrina a");
        let b = ex(&["8 d", "a d"], 0, "a d");
        let m1 = train_channel_model_with(&[a.clone(), b.clone()], ChannelSource::AllAlternatives).unwrap();
        let m2 = train_channel_model_with(&[b, a], ChannelSource::AllAlternatives).unwrap();
        assert_eq!(m1, m2);
        let json = serde_json::to_string(&m1).unwrap();
        let back: ChannelModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m1);
        assert_eq!(back.string_log_prob("rina", "sabrina"), m1.string_log_prob("rina", "sabrina"));
        assert!(m1.word_sub["sabrina"].contains_key("rina"));
    }

    #[test]
    fn string_probability_prefers_fewer_edits() {
        let m = ChannelModel::empty();
        assert!(m.string_log_prob("abc", "abc") > m.string_log_prob("abd", "abc"));
        assert!(m.string_log_prob("abd", "abc") > m.string_log_prob("xyz", "abc"));
        assert_eq!(m.string_log_prob("", ""), 0.0);
    }
}
