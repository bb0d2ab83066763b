//! Synthetic benefit-verification calls with n-best ASR noise and live-call
//! values corrupted to calibrated error statistics.

pub mod confusion;
mod dialogue;
pub mod live;
mod names;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon;
use crate::model::{
    CallTranscript, CleanUtterance, Corpus, FieldId, FieldRecord, FieldSpec, Speaker, Utterance,
    ValueKind,
};
pub use confusion::{inject_noise, inject_noise_with, ConfusionModel, NoiseRates};
pub use live::{corrupt_to_distance, sample_live_call_value};

use dialogue::*;

/// Live-call error statistics for one field. `edit_mean` and `edit_std`
/// describe the edit distance of incorrect values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldNoise {
    pub error_rate: f64,
    pub edit_mean: f64,
    pub edit_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Splits {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for Splits {
    fn default() -> Self {
        Splits {
            train: 2000,
            validation: 200,
            test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// Hypotheses per agent utterance.
    pub n_alternatives: usize,
    pub n_max: usize,
    pub avg_words: f64,
    pub std_words: f64,
    /// Scales every ASR error rate; 0 gives clean transcripts.
    pub severity: f64,
    /// Probability that an incorrect live value comes from an ASR best
    /// hypothesis that heard the same wrong value.
    pub echo_rate: f64,
    /// Probability that the agent misspeaks and corrects themselves.
    pub correction_rate: f64,
    /// Probability that an answer is split over two utterances.
    pub split_rate: f64,
    pub ai_model_name: String,
    pub splits: Splits,
    pub fields: BTreeMap<FieldId, FieldNoise>,
    pub noise: NoiseRates,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut fields = BTreeMap::new();
        fields.insert(
            FieldId::AgentName,
            FieldNoise {
                error_rate: 0.108,
                edit_mean: 3.23,
                edit_std: 2.89,
            },
        );
        fields.insert(
            FieldId::ReferenceNumber,
            FieldNoise {
                error_rate: 0.129,
                edit_mean: 7.05,
                edit_std: 6.43,
            },
        );
        fields.insert(
            FieldId::GroupNumber,
            FieldNoise {
                error_rate: 0.098,
                edit_mean: 3.76,
                edit_std: 7.76,
            },
        );
        SimConfig {
            seed: 42,
            n_alternatives: 10,
            n_max: crate::model::DEFAULT_N_MAX,
            avg_words: 907.0,
            std_words: 316.0,
            severity: 1.0,
            echo_rate: 0.3,
            correction_rate: 0.05,
            split_rate: 0.15,
            ai_model_name: "Ava".into(),
            splits: Splits::default(),
            fields,
            noise: NoiseRates::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<SimConfig> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("simulator config: {e}")))?;
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Same corpus shape with clean transcripts and correct live values.
    pub fn zero_noise(&self) -> SimConfig {
        let mut c = self.clone();
        c.severity = 0.0;
        for f in c.fields.values_mut() {
            f.error_rate = 0.0;
        }
        c
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_max == 0 {
            out.push("n_max must be at least 1".into());
        }
        if self.n_alternatives == 0 || self.n_alternatives > self.n_max {
            out.push(format!(
                "n_alternatives must be in 1..={} (got {})",
                self.n_max, self.n_alternatives
            ));
        }
        if !(self.avg_words > 0.0) || !(self.std_words >= 0.0) {
            out.push("avg_words must be positive and std_words non-negative".into());
        }
        if !(self.severity >= 0.0) {
            out.push("severity must be non-negative".into());
        }
        for (name, p) in [
            ("echo_rate", self.echo_rate),
            ("correction_rate", self.correction_rate),
            ("split_rate", self.split_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name} must be a probability (got {p})"));
            }
        }
        let known: Vec<FieldId> = FieldSpec::defaults().into_iter().map(|s| s.field_id).collect();
        for (id, f) in &self.fields {
            if !known.contains(id) {
                out.push(format!("no simulator template for field {id}"));
            }
            if !(0.0..=1.0).contains(&f.error_rate) {
                out.push(format!("{id}: error_rate must be a probability"));
            }
            if !(f.edit_mean >= 0.0) || !(f.edit_std >= 0.0) {
                out.push(format!("{id}: edit statistics must be non-negative"));
            }
        }
        if self.ai_model_name.trim().is_empty() {
            out.push("ai_model_name must be non-empty".into());
        }
        let model = self.confusion_model();
        out.extend(model.validate());
        out
    }

    pub fn confusion_model(&self) -> ConfusionModel {
        ConfusionModel {
            rates: self.noise.clone(),
            ..ConfusionModel::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

impl SplitCorpus {
    pub const SPLITS: [&'static str; 3] = ["train", "validation", "test"];

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.train.save(&dir.join("train"))?;
        self.validation.save(&dir.join("validation"))?;
        self.test.save(&dir.join("test"))
    }

    pub fn load(dir: &Path) -> Result<SplitCorpus> {
        Ok(SplitCorpus {
            train: Corpus::load(&dir.join("train"))?,
            validation: Corpus::load(&dir.join("validation"))?,
            test: Corpus::load(&dir.join("test"))?,
        })
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b))
}

/// Generates the three splits. Every call draws from its own stream seeded
/// by (seed, split, index), so output does not depend on thread count.
pub fn generate_corpus(cfg: &SimConfig) -> Result<SplitCorpus> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    Ok(SplitCorpus {
        train: generate_split(cfg, "train", 0, cfg.splits.train),
        validation: generate_split(cfg, "validation", 1, cfg.splits.validation),
        test: generate_split(cfg, "test", 2, cfg.splits.test),
    })
}

pub fn generate_split(cfg: &SimConfig, name: &str, tag: u64, count: usize) -> Corpus {
    let ctx = Context::new(cfg);
    let calls: Vec<GeneratedCall> = (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = mix(mix(cfg.seed, tag), i as u64);
            ctx.call(&format!("{name}-{:05}", i + 1), seed)
        })
        .collect();
    let mut corpus = Corpus::default();
    for g in calls {
        corpus.calls.push(g.call);
        corpus.records.extend(g.records);
        corpus.references.extend(g.references);
    }
    corpus
}

struct GeneratedCall {
    call: CallTranscript,
    records: Vec<FieldRecord>,
    references: Vec<CleanUtterance>,
}

/// An utterance before indexing.
struct Turn {
    speaker: Speaker,
    clean: String,
    alternatives: Vec<String>,
}

struct Context<'a> {
    cfg: &'a SimConfig,
    model: ConfusionModel,
    specs: Vec<FieldSpec>,
    first_names: Vec<&'static str>,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let ai = cfg.ai_model_name.to_lowercase();
        let informal: Vec<&str> = lexicon::INFORMAL_CODE_WORDS.iter().map(|(_, w)| *w).collect();
        let first_names = names::FIRST_NAMES
            .iter()
            .copied()
            .filter(|n| {
                *n != ai
                    && !lexicon::is_filler(n)
                    && lexicon::nato_letter(n).is_none()
                    && lexicon::digit_of_word(n).is_none()
                    && lexicon::digit_of_homophone(n).is_none()
                    && !lexicon::CORRECTION_MARKERS.contains(n)
                    && !informal.contains(n)
            })
            .collect();
        Context {
            cfg,
            model: cfg.confusion_model(),
            specs: FieldSpec::defaults(),
            first_names,
        }
    }

    fn ai(&self, text: String) -> Turn {
        Turn {
            speaker: Speaker::AiModel,
            alternatives: vec![text.clone()],
            clean: text,
        }
    }

    fn agent(&self, text: String, rng: &mut ChaCha8Rng) -> Turn {
        let alternatives =
            inject_noise_with(&text, &self.model, self.cfg.n_alternatives, self.cfg.severity, rng);
        Turn {
            speaker: Speaker::Agent,
            clean: text,
            alternatives,
        }
    }

    fn gold_values(&self, rng: &mut ChaCha8Rng) -> BTreeMap<FieldId, String> {
        let first = self.first_names.choose(rng).copied().unwrap_or("sam");
        let mut first_cap: String = first[..1].to_uppercase();
        first_cap.push_str(&first[1..]);
        let initial = (b'A' + rng.random_range(0..26u8)) as char;
        let month = rng.random_range(2..=7u32);
        let day = rng.random_range(1..=28u32);
        let len = rng.random_range(6..=10usize);
        const CODE_LETTERS: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ";
        let code: String = (0..len)
            .map(|_| {
                if rng.random_bool(0.4) {
                    *CODE_LETTERS.choose(rng).expect("non-empty") as char
                } else {
                    (b'0' + rng.random_range(0..10u8)) as char
                }
            })
            .collect();
        let mut out = BTreeMap::new();
        out.insert(FieldId::AgentName, format!("{first_cap} {initial}"));
        out.insert(
            FieldId::ReferenceNumber,
            format!("{first_cap} {initial} {month:02}{day:02}2024"),
        );
        out.insert(FieldId::GroupNumber, code);
        out
    }

    fn render(&self, kind: ValueKind, value: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
        match kind {
            ValueKind::PersonName => render_name(value, true, rng),
            ValueKind::NameAndDate => render_reference(value, rng),
            ValueKind::Alphanumeric => render_code(value, rng),
        }
    }

    /// Agent answer texts: a rendering of `value`, optionally preceded by a
    /// misspoken `wrong` value, optionally split at `split`.
    fn answer_texts(
        &self,
        kind: ValueKind,
        prefix: &str,
        value: &str,
        wrong: Option<(&str, &str)>,
        split: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<String> {
        let lead = |s: String| {
            if prefix.is_empty() {
                s
            } else {
                format!("{prefix} {s}")
            }
        };
        if let Some((wrong, marker)) = wrong {
            let w = self.render(kind, wrong, rng).join(" ");
            let v = self.render(kind, value, rng).join(" ");
            return vec![lead(format!("{w} {marker} {v}"))];
        }
        let segs = self.render(kind, value, rng);
        if let Some(at) = split {
            if segs.len() >= 2 {
                let b = (1 + (at * (segs.len() - 1) as f64) as usize).min(segs.len() - 1);
                return vec![lead(segs[..b].join(" ")), segs[b..].join(" ")];
            }
        }
        vec![lead(segs.join(" "))]
    }

    fn field_block(
        &self,
        spec: &FieldSpec,
        gold: &str,
        live: &str,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Turn> {
        let cfg = self.cfg;
        let mut turns = Vec::new();
        let trigger = spec.triggers.choose(rng).cloned().unwrap_or_default();
        turns.push(self.ai(format!(
            "{}{}{}",
            pick(rng, AI_TRIGGER_PREFIXES),
            trigger,
            pick(rng, AI_TRIGGER_SUFFIXES)
        )));

        let prefix = pick(
            rng,
            match spec.kind {
                ValueKind::PersonName => NAME_PREFIXES,
                ValueKind::NameAndDate => REFERENCE_PREFIXES,
                ValueKind::Alphanumeric => GROUP_PREFIXES,
            },
        );
        let wrong = if rng.random_bool(cfg.correction_rate) {
            let d = rng.random_range(1..=2);
            let w = corrupt_to_distance(gold, d, rng);
            Some((w, pick(rng, CORRECTION_LEADS)))
        } else {
            None
        };
        let split = rng.random_bool(cfg.split_rate).then(|| rng.random::<f64>());
        let wrong_ref = wrong.as_ref().map(|(w, m)| (w.as_str(), *m));

        // The live rendering replays the same random choices.
        let mut echo_rng = rng.clone();
        let clean = self.answer_texts(spec.kind, prefix, gold, wrong_ref, split, rng);
        let echoed = (live != gold && rng.random_bool(cfg.echo_rate))
            .then(|| self.answer_texts(spec.kind, prefix, live, wrong_ref, split, &mut echo_rng))
            .filter(|e| e.len() == clean.len());

        for (k, text) in clean.into_iter().enumerate() {
            let mut turn = self.agent(text, rng);
            if let Some(echoed) = &echoed {
                let heard = inject_noise_with(
                    &echoed[k],
                    &self.model,
                    cfg.n_alternatives,
                    cfg.severity,
                    rng,
                );
                for (i, alt) in heard.into_iter().enumerate() {
                    if i == 0 || rng.random_bool(0.5) {
                        turn.alternatives[i] = alt;
                    }
                }
            }
            turns.push(turn);
        }
        turns.push(self.ai(pick(rng, AI_ACKS).to_string()));
        turns
    }

    fn pad(&self, rng: &mut ChaCha8Rng) -> Vec<Turn> {
        let mut turns = vec![self.ai(pick(rng, AI_QUESTIONS).to_string())];
        let answer = fill_slots(pick(rng, AGENT_ANSWERS), rng);
        if rng.random_bool(0.2) {
            turns.push(self.agent("let me look that up".into(), rng));
        }
        turns.push(self.agent(answer, rng));
        if rng.random_bool(0.3) {
            turns.push(self.ai(pick(rng, AI_FOLLOWUPS).to_string()));
        }
        turns
    }

    fn call(&self, call_id: &str, seed: u64) -> GeneratedCall {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let golds = self.gold_values(&mut rng);

        let mut records = Vec::new();
        let mut blocks: Vec<Vec<Turn>> = Vec::new();
        let mut order: Vec<&FieldSpec> = self.specs.iter().collect();
        if rng.random_bool(0.5) {
            order.swap(1, 2);
        }
        for spec in order {
            let gold = &golds[&spec.field_id];
            let live = live::sample_live_with(gold, &spec.field_id, cfg, &mut rng);
            blocks.push(self.field_block(spec, gold, &live, &mut rng));
            records.push(FieldRecord {
                call_id: call_id.to_string(),
                field_id: spec.field_id.clone(),
                live_call_value: live,
                gold_value: Some(gold.clone()),
                post_call_value: None,
            });
        }
        records.sort_by(|a, b| a.field_id.cmp(&b.field_id));

        let opening = vec![
            self.ai(pick(&mut rng, AI_GREETINGS).replace("{ai}", &cfg.ai_model_name.to_lowercase())),
            self.agent(pick(&mut rng, AGENT_GREETINGS).to_string(), &mut rng),
        ];
        let closing = vec![
            self.ai(pick(&mut rng, AI_CLOSINGS).to_string()),
            self.agent(pick(&mut rng, AGENT_CLOSINGS).to_string(), &mut rng),
        ];

        let words = |turns: &[Turn]| -> usize {
            turns
                .iter()
                .map(|t| t.alternatives[0].split_whitespace().count())
                .sum()
        };
        let target = Normal::new(cfg.avg_words, cfg.std_words.max(1e-9))
            .map(|d| d.sample(&mut rng))
            .unwrap_or(cfg.avg_words)
            .clamp(cfg.avg_words * 0.25, cfg.avg_words * 3.5)
            .round() as usize;
        let mut total =
            words(&opening) + words(&closing) + blocks.iter().map(|b| words(b)).sum::<usize>();
        // Pads go before, between or after the field blocks.
        let mut slots: Vec<Vec<Turn>> = (0..=blocks.len()).map(|_| Vec::new()).collect();
        while total < target {
            let pad = self.pad(&mut rng);
            total += words(&pad);
            let s = rng.random_range(0..slots.len());
            slots[s].extend(pad);
        }

        let mut turns = opening;
        let mut slots = slots.into_iter();
        for block in blocks {
            turns.extend(slots.next().expect("one slot per block plus one"));
            turns.extend(block);
        }
        turns.extend(slots.next().expect("trailing slot"));
        turns.extend(closing);

        let mut utterances = Vec::with_capacity(turns.len());
        let mut references = Vec::new();
        for (index, t) in turns.into_iter().enumerate() {
            if t.speaker == Speaker::Agent {
                references.push(CleanUtterance {
                    call_id: call_id.to_string(),
                    index,
                    text: t.clean,
                });
            }
            utterances.push(Utterance::new(index, t.speaker, t.alternatives));
        }
        GeneratedCall {
            call: CallTranscript::new(call_id, utterances),
            records,
            references,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{extract_field, BuiltinExtractor};
    use crate::isolation::IsolationMode;
    use crate::model::normalized_edit_distance;

    fn small(cfg: &SimConfig, n: usize) -> Corpus {
        generate_split(cfg, "t", 0, n)
    }

    #[test]
    fn calls_are_valid_and_deterministic() {
        let cfg = SimConfig::default();
        let a = small(&cfg, 20);
        let b = small(&cfg, 20);
        assert_eq!(a, b);
        assert!(a.validate(cfg.n_max).is_empty(), "{:?}", a.validate(cfg.n_max));
        assert_eq!(a.records.len(), 60);
        for c in &a.calls {
            for u in &c.utterances {
                if u.speaker == Speaker::Agent {
                    assert_eq!(u.alternatives.len(), cfg.n_alternatives);
                }
            }
        }
    }

    #[test]
    fn word_counts_follow_the_target() {
        let cfg = SimConfig::default();
        let c = small(&cfg, 200);
        let mean = c.calls.iter().map(|c| c.word_count as f64).sum::<f64>() / 200.0;
        assert!((mean - cfg.avg_words).abs() < 80.0, "mean words {mean}");
    }

    #[test]
    fn zero_noise_transcripts_extract_to_gold() {
        let cfg = SimConfig::default().zero_noise();
        let c = small(&cfg, 150);
        let ex = BuiltinExtractor::new(vec![cfg.ai_model_name.clone()]);
        let specs = FieldSpec::defaults();
        for r in &c.records {
            assert_eq!(Some(&r.live_call_value), r.gold_value.as_ref());
            let call = c.calls.iter().find(|x| x.call_id == r.call_id).unwrap();
            let spec = specs.iter().find(|s| s.field_id == r.field_id).unwrap();
            let got = extract_field(call, spec, &ex, IsolationMode::AnySpeaker).unwrap();
            assert_eq!(Some(&got.value), r.gold_value.as_ref(), "{}", r.call_id);
        }
    }

    #[test]
    fn noisy_best_hypotheses_differ_from_references() {
        let cfg = SimConfig::default();
        let c = small(&cfg, 50);
        let mut ned = 0.0;
        for r in &c.references {
            let call = c.calls.iter().find(|x| x.call_id == r.call_id).unwrap();
            ned += normalized_edit_distance(call.utterances[r.index].best(), &r.text);
        }
        let mean = ned / c.references.len() as f64;
        assert!(mean > 0.005 && mean < 0.2, "mean NED {mean}");
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let cfg = SimConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(SimConfig::from_toml_str("n_alternatives = 11").is_err());
        assert!(SimConfig::from_toml_str("echo_rate = 1.5").is_err());
        let partial = SimConfig::from_toml_str("seed = 7\n[splits]\ntrain = 3").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.splits.validation, 200);
    }
}
