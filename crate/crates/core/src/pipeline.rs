//! Training and running the whole review pipeline, and the on-disk model
//! bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{
    correct_call, train_channel_model_with, train_detector, ChannelModel, ChannelSource, CorrectionOptions,
    NoiseDetector,
};
use crate::error::{Error, Result};
use crate::eval::{records_by_call, score_reviews, EvalReport};
use crate::extraction::{BuiltinExtractor, ExtractionBackend, RemoteModel};
use crate::model::{CallTranscript, Corpus, FieldId, FieldSpec, ReviewDecision};
use crate::pseudolabel::{
    derive_aed_labels, generate_pseudo_labels, golds_from_records, AedReference, BuiltinPseudoLabeler,
    PseudoLabelExample, PseudoLabeler, SkipCounts,
};
use crate::review::{review_call, train_verifier, ReviewPolicy, Reviewers, Verifier, VerifierRow};

pub const BUNDLE_VERSION: u32 = 1;

/// Training settings shared by the stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ai_model_names: Vec<String>,
    pub channel_source: ChannelSource,
    pub aed_reference: AedReference,
    pub correction: CorrectionOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ai_model_names: vec!["Ava".into()],
            channel_source: ChannelSource::Chosen,
            aed_reference: AedReference::AsrBest,
            correction: CorrectionOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn extractor(&self) -> BuiltinExtractor {
        BuiltinExtractor::new(self.ai_model_names.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    ai_model_names: Vec<String>,
    correction: CorrectionOptions,
}

/// Everything the review stage needs, persisted as JSON files in one
/// directory: `manifest.json`, `channel.json`, `detector-<field>.json` and
/// `verifier-<field>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub ai_model_names: Vec<String>,
    pub correction: CorrectionOptions,
    pub channel: ChannelModel,
    pub detectors: BTreeMap<FieldId, NoiseDetector>,
    pub verifiers: BTreeMap<FieldId, Verifier>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        source: e,
    })
}

impl ModelBundle {
    pub const MANIFEST: &'static str = "manifest.json";
    pub const CHANNEL: &'static str = "channel.json";

    pub fn detector_file(field: &FieldId) -> String {
        format!("detector-{field}.json")
    }

    pub fn verifier_file(field: &FieldId) -> String {
        format!("verifier-{field}.json")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(
            &dir.join(Self::MANIFEST),
            &Manifest {
                version: self.version,
                ai_model_names: self.ai_model_names.clone(),
                correction: self.correction.clone(),
            },
        )?;
        write_json(&dir.join(Self::CHANNEL), &self.channel)?;
        for (f, d) in &self.detectors {
            write_json(&dir.join(Self::detector_file(f)), d)?;
        }
        for (f, v) in &self.verifiers {
            write_json(&dir.join(Self::verifier_file(f)), v)?;
        }
        Ok(())
    }

    /// Loads a bundle; detector and verifier files are optional (a directory
    /// written by `train-aec` alone holds only the channel model).
    pub fn load(dir: &Path, specs: &[FieldSpec]) -> Result<ModelBundle> {
        let manifest_path = dir.join(Self::MANIFEST);
        let manifest: Manifest = if manifest_path.exists() {
            read_json(&manifest_path)?
        } else {
            let d = TrainConfig::default();
            Manifest {
                version: BUNDLE_VERSION,
                ai_model_names: d.ai_model_names,
                correction: d.correction,
            }
        };
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "model bundle version {} (expected {BUNDLE_VERSION})",
                manifest.version
            )));
        }
        let channel: ChannelModel = read_json(&dir.join(Self::CHANNEL))?;
        channel.validate()?;
        let mut detectors = BTreeMap::new();
        let mut verifiers = BTreeMap::new();
        for spec in specs {
            let p = dir.join(Self::detector_file(&spec.field_id));
            if p.exists() {
                let d: NoiseDetector = read_json(&p)?;
                d.validate()?;
                detectors.insert(spec.field_id.clone(), d);
            }
            let p = dir.join(Self::verifier_file(&spec.field_id));
            if p.exists() {
                let v: Verifier = read_json(&p)?;
                v.validate()?;
                verifiers.insert(spec.field_id.clone(), v);
            }
        }
        Ok(ModelBundle {
            version: manifest.version,
            ai_model_names: manifest.ai_model_names,
            correction: manifest.correction,
            channel,
            detectors,
            verifiers,
        })
    }
}

/// Counts reported by [`train_models`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub pseudo_labels: usize,
    pub skipped: SkipCounts,
    /// (examples, noisy examples) per field.
    pub aed_examples: BTreeMap<FieldId, (usize, usize)>,
    pub verifier_thresholds: BTreeMap<FieldId, f64>,
}

/// Pseudo-labels for every record with a gold value.
pub fn pseudo_label_corpus(
    corpus: &Corpus,
    specs: &[FieldSpec],
    labeler: &dyn PseudoLabeler,
    cfg: &TrainConfig,
) -> (Vec<PseudoLabelExample>, SkipCounts) {
    generate_pseudo_labels(corpus, &golds_from_records(corpus), specs, labeler, &cfg.extractor())
}

/// One noise detector per field from the pseudo-labels.
pub fn train_detectors(
    examples: &[PseudoLabelExample],
    specs: &[FieldSpec],
    cfg: &TrainConfig,
) -> Result<BTreeMap<FieldId, NoiseDetector>> {
    specs
        .iter()
        .map(|spec| {
            let own: Vec<PseudoLabelExample> = examples.iter().filter(|e| e.field_id == spec.field_id).cloned().collect();
            let aed = derive_aed_labels(&own, cfg.aed_reference);
            Ok((spec.field_id.clone(), train_detector(&aed, spec, &cfg.ai_model_names)?))
        })
        .collect()
}

/// Corrects every call; calls keep their order.
pub fn correct_corpus(
    corpus: &Corpus,
    specs: &[FieldSpec],
    channel: &ChannelModel,
    ex: &BuiltinExtractor,
    opts: &CorrectionOptions,
) -> Result<Corpus> {
    let calls = corpus
        .calls
        .par_iter()
        .map(|c| correct_call(c, specs, channel, ex, opts).map(|r| r.0))
        .collect::<Result<Vec<CallTranscript>>>()?;
    Ok(Corpus {
        calls,
        records: corpus.records.clone(),
        references: corpus.references.clone(),
    })
}

fn verifier_rows<'a>(corpus: &'a Corpus, field: &FieldId) -> Vec<VerifierRow<'a>> {
    let calls: BTreeMap<&str, &CallTranscript> = corpus.calls.iter().map(|c| (c.call_id.as_str(), c)).collect();
    corpus
        .records
        .iter()
        .filter(|r| &r.field_id == field && r.gold_value.is_some())
        .filter_map(|r| {
            Some(VerifierRow {
                call: calls.get(r.call_id.as_str())?,
                record: r,
            })
        })
        .collect()
}

/// Verifiers trained on already-corrected corpora.
pub fn train_verifiers(
    train: &Corpus,
    validation: &Corpus,
    specs: &[FieldSpec],
    detectors: &BTreeMap<FieldId, NoiseDetector>,
    cfg: &TrainConfig,
) -> Result<BTreeMap<FieldId, Verifier>> {
    specs
        .iter()
        .map(|spec| {
            let v = train_verifier(
                &verifier_rows(train, &spec.field_id),
                &verifier_rows(validation, &spec.field_id),
                spec,
                detectors.get(&spec.field_id).cloned(),
                &cfg.ai_model_names,
                cfg.correction.isolation,
            )?;
            Ok((spec.field_id.clone(), v))
        })
        .collect()
}

/// Trains the channel model, the detectors and the verifiers with the
/// builtin pseudo-labeler.
pub fn train_models(
    train: &Corpus,
    validation: &Corpus,
    specs: &[FieldSpec],
    cfg: &TrainConfig,
) -> Result<(ModelBundle, TrainingSummary)> {
    train_models_with(train, validation, specs, cfg, &BuiltinPseudoLabeler::new(cfg.extractor()))
}

pub fn train_models_with(
    train: &Corpus,
    validation: &Corpus,
    specs: &[FieldSpec],
    cfg: &TrainConfig,
    labeler: &dyn PseudoLabeler,
) -> Result<(ModelBundle, TrainingSummary)> {
    let (examples, skipped) = pseudo_label_corpus(train, specs, labeler, cfg);
    let channel = train_channel_model_with(&examples, cfg.channel_source)?;
    let detectors = train_detectors(&examples, specs, cfg)?;
    let ex = cfg.extractor();
    let train_c = correct_corpus(train, specs, &channel, &ex, &cfg.correction)?;
    let val_c = correct_corpus(validation, specs, &channel, &ex, &cfg.correction)?;
    let verifiers = train_verifiers(&train_c, &val_c, specs, &detectors, cfg)?;

    let mut summary = TrainingSummary {
        pseudo_labels: examples.len(),
        skipped,
        ..Default::default()
    };
    for spec in specs {
        let own: Vec<&PseudoLabelExample> = examples.iter().filter(|e| e.field_id == spec.field_id).collect();
        let noisy = own
            .iter()
            .filter(|e| derive_aed_labels(&[(**e).clone()], cfg.aed_reference)[0].label)
            .count();
        summary.aed_examples.insert(spec.field_id.clone(), (own.len(), noisy));
    }
    for (f, v) in &verifiers {
        summary.verifier_thresholds.insert(f.clone(), v.threshold);
    }
    Ok((
        ModelBundle {
            version: BUNDLE_VERSION,
            ai_model_names: cfg.ai_model_names.clone(),
            correction: cfg.correction.clone(),
            channel,
            detectors,
            verifiers,
        },
        summary,
    ))
}

/// Reviews calls with a trained bundle: optional correction, then the
/// policy's strategy per field.
pub struct ReviewEngine {
    pub bundle: ModelBundle,
    pub specs: Vec<FieldSpec>,
    pub policy: ReviewPolicy,
    /// Run the error corrector before reviewing (off = uncorrected baseline).
    pub correct: bool,
    pub extractor: Arc<dyn ExtractionBackend>,
    pub remote_verifier: Option<Arc<RemoteModel>>,
}

impl ReviewEngine {
    pub fn new(bundle: ModelBundle, specs: Vec<FieldSpec>, policy: ReviewPolicy) -> Self {
        let extractor = Arc::new(BuiltinExtractor::new(bundle.ai_model_names.clone()));
        ReviewEngine {
            bundle,
            specs,
            policy,
            correct: true,
            extractor,
            remote_verifier: None,
        }
    }

    fn builtin(&self) -> BuiltinExtractor {
        BuiltinExtractor::new(self.bundle.ai_model_names.clone())
    }

    /// The call as reviewed (corrected when enabled).
    pub fn prepare(&self, call: &CallTranscript) -> Result<CallTranscript> {
        if self.correct {
            Ok(correct_call(call, &self.specs, &self.bundle.channel, &self.builtin(), &self.bundle.correction)?.0)
        } else {
            Ok(call.clone())
        }
    }

    pub fn review_call(&self, call: &CallTranscript, lives: &BTreeMap<FieldId, String>) -> Result<Vec<ReviewDecision>> {
        let prepared = self.prepare(call)?;
        let reviewers = Reviewers {
            verifiers: &self.bundle.verifiers,
            extractor: self.extractor.as_ref(),
            remote_verifier: self.remote_verifier.clone(),
            isolation: self.bundle.correction.isolation,
        };
        review_call(&prepared, lives, &self.specs, &self.policy, &reviewers)
    }

    /// Decisions for every record of the corpus, in call order then spec
    /// order.
    pub fn review_corpus(&self, corpus: &Corpus) -> Result<Vec<ReviewDecision>> {
        let by_call = records_by_call(&corpus.records);
        let per_call = corpus
            .calls
            .par_iter()
            .map(|call| {
                let lives: BTreeMap<FieldId, String> = by_call
                    .get(call.call_id.as_str())
                    .into_iter()
                    .flatten()
                    .map(|r| (r.field_id.clone(), r.live_call_value.clone()))
                    .collect();
                self.review_call(call, &lives)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_call.into_iter().flatten().collect())
    }

    /// Reviews and scores against the corpus golds (records of calls not in
    /// the corpus or fields outside the specs are ignored).
    pub fn evaluate(&self, corpus: &Corpus) -> Result<(Vec<ReviewDecision>, EvalReport)> {
        let decisions = self.review_corpus(corpus)?;
        let keys: BTreeSet<_> = decisions.iter().map(ReviewDecision::key).collect();
        let records: Vec<_> = corpus.records.iter().filter(|r| keys.contains(&r.key())).cloned().collect();
        let report = score_reviews(&decisions, &records)?;
        Ok((decisions, report))
    }
}

/// Outcome pairs (baseline correct, candidate correct) on the auto-approve
/// decision for McNemar's test. Both lists must cover the same keys.
pub fn paired_outcomes(
    baseline: &[ReviewDecision],
    candidate: &[ReviewDecision],
    corpus: &Corpus,
) -> Result<Vec<(bool, bool)>> {
    let truth: BTreeMap<_, bool> = corpus
        .records
        .iter()
        .filter_map(|r| Some((r.key(), r.live_is_correct()?)))
        .collect();
    let cand: BTreeMap<_, bool> = candidate.iter().map(|d| (d.key(), d.approved())).collect();
    baseline
        .iter()
        .map(|d| {
            let k = d.key();
            let t = *truth
                .get(&k)
                .ok_or_else(|| Error::KeyMismatch(vec![format!("record {}/{}", k.0, k.1)]))?;
            let c = *cand
                .get(&k)
                .ok_or_else(|| Error::KeyMismatch(vec![format!("decision {}/{}", k.0, k.1)]))?;
            Ok((d.approved() == t, c == t))
        })
        .collect()
}

