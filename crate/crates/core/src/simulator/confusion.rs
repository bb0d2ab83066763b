//! ASR confusion model and correlated n-best noise.
//!
//! Each token of a clean utterance may be "hard". A hard token gets one
//! error variant that is shared across hypotheses: the ASR best shows it
//! with probability `p_best` and every other hypothesis with a per-token
//! probability drawn from `q_range`, so the alternatives carry a common
//! corruption core but disagree often enough for voting to help. On top of
//! that, each hypothesis receives independent light filler swaps.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon;

/// Per-token-class probabilities that a token is hard at severity 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseRates {
    /// Per character of a digit or code string.
    pub digit: f64,
    pub letter: f64,
    pub code_word: f64,
    pub digit_word: f64,
    pub name: f64,
    pub filler: f64,
    pub word: f64,
    /// Independent per-hypothesis filler swap rate.
    pub light: f64,
    /// Probability that the ASR best shows a hard token's error.
    pub p_best: f64,
    /// Range of the per-token probability that another hypothesis shows it.
    pub q_range: (f64, f64),
    /// Probability that a hypothesis showing the error uses a fresh variant.
    pub variant_mix: f64,
}

impl Default for NoiseRates {
    fn default() -> Self {
        NoiseRates {
            digit: 0.03,
            letter: 0.05,
            code_word: 0.06,
            digit_word: 0.03,
            name: 0.14,
            filler: 0.02,
            word: 0.03,
            light: 0.02,
            p_best: 0.75,
            q_range: (0.15, 0.6),
            variant_mix: 0.15,
        }
    }
}

/// Character and token confusions. Keys are (true, observed); characters are
/// upper case.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    pub char_sub: BTreeMap<(char, char), f64>,
    /// Weight of an extra copy of the character being heard.
    pub char_ins: BTreeMap<char, f64>,
    pub char_del: BTreeMap<char, f64>,
    pub homophones: BTreeMap<String, Vec<String>>,
    pub nato_table: BTreeMap<char, String>,
    pub digit_words: BTreeMap<String, char>,
    pub rates: NoiseRates,
}

impl Default for ConfusionModel {
    fn default() -> Self {
        let mut char_sub = BTreeMap::new();
        let pairs: &[(char, char, f64)] = &[
            ('H', '8', 3.0),
            ('A', '8', 1.5),
            ('B', 'D', 2.0),
            ('D', 'B', 2.0),
            ('B', 'P', 1.5),
            ('P', 'B', 1.5),
            ('M', 'N', 2.0),
            ('N', 'M', 2.0),
            ('F', 'S', 1.5),
            ('S', 'F', 1.5),
            ('T', 'D', 1.0),
            ('D', 'T', 1.0),
            ('C', 'Z', 1.0),
            ('Z', 'C', 1.0),
            ('V', 'B', 1.0),
            ('G', 'J', 1.0),
            ('J', 'G', 1.0),
            ('E', 'B', 0.7),
            ('K', 'A', 0.5),
            ('U', 'Q', 0.5),
            ('X', 'S', 0.5),
            ('R', 'A', 0.3),
            ('5', '9', 2.0),
            ('9', '5', 2.0),
            ('3', '8', 1.0),
            ('8', '3', 1.0),
            ('6', '2', 0.5),
            ('1', '9', 0.5),
            ('7', '1', 0.5),
            ('4', '0', 0.5),
            ('2', '3', 0.3),
        ];
        for &(a, b, w) in pairs {
            char_sub.insert((a, b), w);
        }
        let mut char_ins = BTreeMap::new();
        let mut char_del = BTreeMap::new();
        for c in ('0'..='9').chain('A'..='Z') {
            let digit = c.is_ascii_digit();
            char_ins.insert(c, if c == '0' { 4.0 } else if digit { 0.6 } else { 0.2 });
            char_del.insert(c, if c == '0' { 4.0 } else if digit { 1.0 } else { 0.6 });
        }
        let homophones: &[(&str, &[&str])] = &[
            ("a", &["hey"]),
            ("b", &["be", "bee"]),
            ("c", &["see", "sea"]),
            ("i", &["eye"]),
            ("j", &["jay"]),
            ("k", &["kay"]),
            ("p", &["pee"]),
            ("q", &["cue"]),
            ("r", &["are"]),
            ("t", &["tea"]),
            ("u", &["you"]),
            ("y", &["why"]),
            ("4", &["for"]),
            ("2", &["to", "too"]),
            ("8", &["ate"]),
            ("1", &["won"]),
        ];
        ConfusionModel {
            char_sub,
            char_ins,
            char_del,
            homophones: homophones
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
            nato_table: lexicon::NATO.iter().map(|(c, w)| (*c, w.to_string())).collect(),
            digit_words: lexicon::DIGIT_WORDS
                .iter()
                .map(|(w, d)| (w.to_string(), *d))
                .collect(),
            rates: NoiseRates::default(),
        }
    }
}

impl ConfusionModel {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let weights = self
            .char_sub
            .values()
            .chain(self.char_ins.values())
            .chain(self.char_del.values());
        if weights.into_iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            out.push("confusion weights must be finite and non-negative".to_string());
        }
        for c in 'A'..='Z' {
            if !self.nato_table.contains_key(&c) {
                out.push(format!("no code word for letter {c}"));
            }
        }
        if self.nato_table.len() != 26 {
            out.push(format!("nato table has {} entries, expected 26", self.nato_table.len()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokClass {
    Digits,
    Letter,
    CodeWord,
    CodeString,
    DigitWord,
    Filler,
    Word,
}

fn classify_tokens(tokens: &[&str]) -> Vec<TokClass> {
    let mut out = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        let lower = t.to_lowercase();
        let is_letter = |s: &str| s.chars().count() == 1 && s.chars().all(|c| c.is_ascii_alphabetic());
        let after_connector = (i >= 3
            && is_letter(tokens[i - 3])
            && matches!(
                (tokens[i - 2], tokens[i - 1]),
                ("as", "in") | ("is", "in")
            ))
            || (i >= 2 && is_letter(tokens[i - 2]) && matches!(tokens[i - 1], "like" | "for"));
        let class = if !t.is_empty() && t.chars().all(|c| c.is_ascii_digit()) {
            TokClass::Digits
        } else if is_letter(t) {
            TokClass::Letter
        } else if after_connector && t.chars().all(|c| c.is_ascii_alphabetic()) {
            TokClass::CodeWord
        } else if t.chars().all(|c| c.is_ascii_alphanumeric())
            && (t.chars().any(|c| c.is_ascii_digit())
                || (t.len() >= 2 && t.chars().all(|c| c.is_ascii_uppercase())))
        {
            TokClass::CodeString
        } else if lexicon::digit_of_word(&lower).is_some() {
            TokClass::DigitWord
        } else if lexicon::is_filler(&lower) {
            TokClass::Filler
        } else if t.chars().all(|c| c.is_alphabetic()) && t.chars().count() >= 3 {
            TokClass::Word
        } else {
            TokClass::Filler
        };
        out.push(class);
    }
    out
}

/// Filler words that ASR confuses with each other.
const FILLER_SWAPS: &[&[&str]] = &[
    &["is", "was", "it's", "its"],
    &["the", "that"],
    &["my", "me"],
    &["okay", "ok", "alright"],
    &["um", "uh", "ah"],
    &["yes", "yeah", "yep"],
    &["thank", "thanks"],
    &["sure", "so"],
];

fn filler_swap(token: &str, rng: &mut impl Rng) -> Option<String> {
    let group = FILLER_SWAPS.iter().find(|g| g.contains(&token))?;
    let others: Vec<&&str> = group.iter().filter(|w| **w != token).collect();
    Some(others[rng.random_range(0..others.len())].to_string())
}

fn match_case(template: char, c: char) -> char {
    if template.is_ascii_lowercase() {
        c.to_ascii_lowercase()
    } else {
        c.to_ascii_uppercase()
    }
}

impl ConfusionModel {
    fn hard_rate(&self, class: TokClass, token: &str) -> f64 {
        let r = &self.rates;
        match class {
            TokClass::Digits | TokClass::CodeString => {
                let n = token.chars().count() as f64;
                1.0 - (1.0 - r.digit).powf(n)
            }
            TokClass::Letter => r.letter,
            TokClass::CodeWord => r.code_word,
            TokClass::DigitWord => r.digit_word,
            TokClass::Filler => r.filler,
            TokClass::Word => r.name.max(r.word),
        }
    }

    /// A character-level error for `c`: deletion, an extra copy, or a
    /// substitution. Returns the replacement text for that character.
    fn char_error(&self, c: char, rng: &mut impl Rng) -> String {
        let up = c.to_ascii_uppercase();
        let mut options: Vec<(String, f64)> = Vec::new();
        options.push((String::new(), *self.char_del.get(&up).unwrap_or(&0.5)));
        options.push((format!("{c}{c}"), *self.char_ins.get(&up).unwrap_or(&0.2)));
        for ((a, b), w) in self.char_sub.range((up, char::MIN)..=(up, char::MAX)) {
            debug_assert_eq!(*a, up);
            options.push((match_case(c, *b).to_string(), *w));
        }
        if options.iter().all(|(_, w)| *w <= 0.0) {
            return c.to_string();
        }
        let dist = WeightedIndex::new(options.iter().map(|(_, w)| *w)).expect("positive weights");
        options.swap_remove(dist.sample(rng)).0
    }

    fn string_error(&self, token: &str, rng: &mut impl Rng) -> String {
        let chars: Vec<char> = token.chars().collect();
        let pos = rng.random_range(0..chars.len());
        let mut out: String = chars[..pos].iter().collect();
        out.push_str(&self.char_error(chars[pos], rng));
        out.extend(&chars[pos + 1..]);
        out
    }

    /// One error variant for a hard token.
    fn token_error(&self, token: &str, class: TokClass, rng: &mut impl Rng) -> String {
        match class {
            TokClass::Digits => {
                if token.len() == 1 {
                    let c = token.chars().next().expect("non-empty");
                    if let Some(h) = self.homophones.get(token) {
                        if rng.random_bool(0.15) {
                            return h[rng.random_range(0..h.len())].clone();
                        }
                    }
                    let e = self.char_error(c, rng);
                    // An extra digit is heard as its own spoken item.
                    let spaced: Vec<String> = e.chars().map(|c| c.to_ascii_lowercase().to_string()).collect();
                    spaced.join(" ")
                } else {
                    self.string_error(token, rng)
                }
            }
            TokClass::CodeString => self.string_error(token, rng),
            TokClass::Letter => {
                let lower = token.to_lowercase();
                if let Some(h) = self.homophones.get(&lower) {
                    if rng.random_bool(0.35) {
                        return h[rng.random_range(0..h.len())].clone();
                    }
                }
                let c = token.chars().next().expect("non-empty");
                let e = self.char_error(c, rng);
                if e.chars().count() == 2 {
                    // A doubled letter is two spoken letters.
                    let c = e.chars().next().expect("two chars");
                    format!("{c} {c}")
                } else {
                    e
                }
            }
            TokClass::CodeWord => {
                // The code word itself is misheard; its initial changes.
                let mut chars: Vec<char> = token.chars().collect();
                let first = chars[0].to_ascii_uppercase();
                let subs: Vec<(char, f64)> = self
                    .char_sub
                    .range((first, char::MIN)..=(first, char::MAX))
                    .filter(|((_, b), _)| b.is_ascii_alphabetic())
                    .map(|((_, b), w)| (*b, *w))
                    .collect();
                let replacement = if subs.is_empty() {
                    (b'a' + rng.random_range(0..26u8)) as char
                } else {
                    let d = WeightedIndex::new(subs.iter().map(|(_, w)| *w)).expect("weights");
                    subs[d.sample(rng)].0
                };
                chars[0] = match_case(chars[0], replacement);
                chars.into_iter().collect()
            }
            TokClass::DigitWord => {
                let words: Vec<&String> = self.digit_words.keys().filter(|w| *w != token).collect();
                words[rng.random_range(0..words.len())].clone()
            }
            TokClass::Filler => filler_swap(token, rng).unwrap_or_default(),
            TokClass::Word => {
                let chars: Vec<char> = token.chars().collect();
                let n = chars.len();
                let roll: f64 = rng.random();
                if roll < 0.4 && n >= 5 {
                    // Leading syllable lost: "sabrina" -> "rina".
                    let cut = rng.random_range(1..=(n - 4).min(3));
                    chars[cut..].iter().collect()
                } else if roll < 0.7 {
                    let pos = rng.random_range(1..n);
                    let mut c = chars.clone();
                    c[pos] = self.similar_letter(chars[pos], rng);
                    c.into_iter().collect()
                } else if roll < 0.9 {
                    let pos = rng.random_range(1..n);
                    chars
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != pos)
                        .map(|(_, c)| *c)
                        .collect()
                } else {
                    let pos = rng.random_range(1..=n);
                    let mut c = chars.clone();
                    c.insert(pos, ['e', 'a', 'h'][rng.random_range(0..3)]);
                    c.into_iter().collect()
                }
            }
        }
    }

    fn similar_letter(&self, c: char, rng: &mut impl Rng) -> char {
        const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
        let lower = c.to_ascii_lowercase();
        if VOWELS.contains(&lower) {
            let others: Vec<char> = VOWELS.iter().copied().filter(|v| *v != lower).collect();
            return match_case(c, others[rng.random_range(0..others.len())]);
        }
        let up = c.to_ascii_uppercase();
        let subs: Vec<char> = self
            .char_sub
            .range((up, char::MIN)..=(up, char::MAX))
            .map(|((_, b), _)| *b)
            .filter(|b| b.is_ascii_alphabetic())
            .collect();
        if subs.is_empty() {
            c
        } else {
            match_case(c, subs[rng.random_range(0..subs.len())])
        }
    }
}

/// Produces `n` ASR hypotheses for a clean utterance. Hypothesis 0 plays the
/// ASR best. `severity` scales every error rate; 0 yields `n` clean copies.
pub fn inject_noise(
    clean_utterance: &str,
    model: &ConfusionModel,
    n: usize,
    severity: f64,
    seed: u64,
) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    inject_noise_with(clean_utterance, model, n, severity, &mut rng)
}

pub fn inject_noise_with(
    clean_utterance: &str,
    model: &ConfusionModel,
    n: usize,
    severity: f64,
    rng: &mut impl Rng,
) -> Vec<String> {
    let n = n.max(1);
    if severity <= 0.0 {
        return vec![clean_utterance.to_string(); n];
    }
    let tokens: Vec<&str> = clean_utterance.split_whitespace().collect();
    let classes = classify_tokens(&tokens);
    let rates = &model.rates;

    // Shared corruption core: (variant, per-hypothesis display probability).
    struct Hard {
        variant: String,
        q: f64,
    }
    let mut hard: Vec<Option<Hard>> = Vec::with_capacity(tokens.len());
    for (t, class) in tokens.iter().zip(&classes) {
        let p = (model.hard_rate(*class, t) * severity).min(1.0);
        if rng.random_bool(p) {
            let variant = model.token_error(t, *class, rng);
            let q = rng.random_range(rates.q_range.0..=rates.q_range.1);
            hard.push((variant != *t).then_some(Hard { variant, q }));
        } else {
            hard.push(None);
        }
    }

    let light = (rates.light * severity).min(1.0);
    (0..n)
        .map(|k| {
            let mut out: Vec<String> = Vec::with_capacity(tokens.len());
            for (i, t) in tokens.iter().enumerate() {
                let mut word = t.to_string();
                if let Some(h) = &hard[i] {
                    let p = if k == 0 { rates.p_best } else { h.q };
                    if rng.random_bool(p.min(1.0)) {
                        word = if rng.random_bool(rates.variant_mix) {
                            model.token_error(t, classes[i], rng)
                        } else {
                            h.variant.clone()
                        };
                    }
                } else if classes[i] == TokClass::Filler && rng.random_bool(light) {
                    if let Some(s) = filler_swap(t, rng) {
                        word = s;
                    }
                }
                if !word.is_empty() {
                    out.push(word);
                }
            }
            out.join(" ")
        })
        .collect()
}
