//! Auto-review decisions: Direct Verification (a classifier over
//! transcript/value features), Direct Extraction (exact match against the
//! post-call value) and the criticality policy that picks between them.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::correction::{detect_noise, NoiseDetector};
use crate::error::{Error, Result};
use crate::extraction::{canonicalize, extract_field, BuiltinExtractor, CharSource, ExtractionBackend, PartRole, RemoteModel};
use crate::isolation::{isolate_field_utterances, IsolationMode};
use crate::logistic::{f1_threshold, Logistic};
use crate::model::{
    normalized_edit_distance, CallTranscript, Criticality, FieldId, FieldRecord, FieldSpec, ReviewDecision, Strategy,
    Verdict, NOT_PROVIDED,
};

pub const VERIFIER_VERSION: u32 = 1;

pub const VERIFIER_FEATURES: [&str; 8] = [
    "format_match",
    "ned_to_best_candidate",
    "exact_match",
    "aed_flag",
    "aed_score",
    "nbest_agreement",
    "abs_length_z",
    "spelled_conflict",
];

/// Features describing how well the transcript supports a live value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationFeatures {
    /// The canonical live value matches the field format.
    pub format_match: bool,
    /// Smallest NED between the live value and any value read from the
    /// field utterances (joined best hypotheses, single mentions, or any
    /// single alternative).
    pub ned: f64,
    /// The deterministic post-call extraction equals the live value.
    pub exact_match: bool,
    pub aed_flag: bool,
    pub aed_score: f64,
    /// Fraction of the field utterances' alternatives whose extraction
    /// equals the live value.
    pub agreement: f64,
    /// Live value length against the training distribution.
    pub length_z: f64,
    /// The name was spelled letter by letter and the spelling disagrees
    /// with the live value.
    pub spelled_conflict: bool,
}

impl VerificationFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let b = |v: bool| f64::from(u8::from(v));
        vec![
            b(self.format_match),
            self.ned,
            b(self.exact_match),
            b(self.aed_flag),
            self.aed_score,
            self.agreement,
            self.length_z.abs().min(10.0),
            b(self.spelled_conflict),
        ]
    }
}

/// A trained per-field Direct Verification classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verifier {
    pub version: u32,
    pub field_id: FieldId,
    pub model: Logistic,
    pub threshold: f64,
    pub length_mean: f64,
    pub length_std: f64,
    /// Supplies the AED features; `None` leaves them at zero.
    #[serde(default)]
    pub detector: Option<NoiseDetector>,
    #[serde(default)]
    pub ai_model_names: Vec<String>,
    #[serde(default)]
    pub isolation: IsolationMode,
}

impl Verifier {
    pub fn validate(&self) -> Result<()> {
        if self.version != VERIFIER_VERSION {
            return Err(Error::Config(format!("verifier version {} (expected {VERIFIER_VERSION})", self.version)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("verifier threshold must be in (0, 1)".into()));
        }
        if self.model.weights.len() != VERIFIER_FEATURES.len() + 1 {
            return Err(Error::Config("verifier weight count does not match its features".into()));
        }
        if let Some(d) = &self.detector {
            d.validate()?;
        }
        Ok(())
    }

    fn extractor(&self) -> BuiltinExtractor {
        BuiltinExtractor::new(self.ai_model_names.clone())
    }
}

fn value_length(value: &str) -> f64 {
    value.chars().filter(|c| c.is_alphanumeric()).count() as f64
}

/// Computes the features of `live` against the call. Also returns the
/// evidence utterances and the deterministic post-call value.
#[allow(clippy::too_many_arguments)]
pub fn verification_features(
    call: &CallTranscript,
    spec: &FieldSpec,
    live: &str,
    detector: Option<&NoiseDetector>,
    ex: &BuiltinExtractor,
    isolation: IsolationMode,
    length_mean: f64,
    length_std: f64,
) -> (VerificationFeatures, Vec<usize>, String) {
    let live = canonicalize(live, spec);
    let iso = isolate_field_utterances(call, spec, isolation);
    let idx = iso.utterance_indices;
    let length_z = (value_length(&live) - length_mean) / length_std.max(1e-6);
    let format_match = live != NOT_PROVIDED && spec.matches_format(&live);
    if idx.is_empty() {
        let f = VerificationFeatures {
            format_match,
            ned: 1.0,
            exact_match: false,
            aed_flag: false,
            aed_score: 0.0,
            agreement: 0.0,
            length_z,
            spelled_conflict: false,
        };
        return (f, idx, NOT_PROVIDED.to_string());
    }

    let best: Vec<&str> = idx.iter().map(|&i| call.utterances[i].best()).collect();
    let post = ex.extract_texts(&best, spec);
    let mut values = vec![post.clone()];
    let mut spelled_conflict = false;
    let (mut agree, mut total) = (0usize, 0usize);
    let (mut aed_flag, mut aed_score) = (false, 0.0f64);
    for &i in &idx {
        let alts = &call.utterances[i].alternatives;
        for c in ex.candidates(alts[0].as_str(), spec) {
            let v = canonicalize(&c.text(), spec);
            if let Some(first) = c.part(PartRole::FirstName) {
                let spelled = first.chars.len() >= 2 && first.chars.iter().all(|ch| !matches!(ch.src, CharSource::Word(_)));
                if spelled && first_word(&v) != first_word(&live) {
                    spelled_conflict = true;
                }
            }
            values.push(v);
        }
        for (j, alt) in alts.iter().enumerate() {
            let v = ex.extract_text(alt, spec);
            total += 1;
            if v == live {
                agree += 1;
            }
            if j > 0 {
                values.push(v);
            }
        }
        if let Some(det) = detector {
            let (flag, score) = detect_noise(alts, det, spec);
            aed_flag |= flag;
            aed_score = aed_score.max(score);
        }
    }
    let ned = values
        .iter()
        .filter(|v| v.as_str() != NOT_PROVIDED)
        .map(|v| normalized_edit_distance(&live, v))
        .fold(1.0f64, f64::min);
    let f = VerificationFeatures {
        format_match,
        ned,
        exact_match: post != NOT_PROVIDED && post == live,
        aed_flag,
        aed_score,
        agreement: agree as f64 / total.max(1) as f64,
        length_z,
        spelled_conflict,
    };
    (f, idx, post)
}

fn first_word(v: &str) -> String {
    v.split_whitespace().next().unwrap_or("").to_lowercase()
}

/// One verifier training row: a (corrected) call and a record with gold.
pub struct VerifierRow<'a> {
    pub call: &'a CallTranscript,
    pub record: &'a FieldRecord,
}

fn feature_rows(
    rows: &[VerifierRow],
    spec: &FieldSpec,
    detector: Option<&NoiseDetector>,
    ex: &BuiltinExtractor,
    isolation: IsolationMode,
    length: (f64, f64),
) -> (Vec<Vec<f64>>, Vec<bool>) {
    use rayon::prelude::*;
    let out: Vec<(Vec<f64>, bool)> = rows
        .par_iter()
        .filter_map(|r| {
            let gold = r.record.gold_value.as_ref()?;
            let (f, _, _) =
                verification_features(r.call, spec, &r.record.live_call_value, detector, ex, isolation, length.0, length.1);
            Some((f.to_vec(), *gold == r.record.live_call_value))
        })
        .collect();
    out.into_iter().unzip()
}

/// Fits the verifier on `train` and chooses the F1-optimal approval
/// threshold on `validation` (falling back to `train` when validation
/// lacks one of the classes).
pub fn train_verifier(
    train: &[VerifierRow],
    validation: &[VerifierRow],
    spec: &FieldSpec,
    detector: Option<NoiseDetector>,
    ai_model_names: &[String],
    isolation: IsolationMode,
) -> Result<Verifier> {
    let lens: Vec<f64> = train
        .iter()
        .filter(|r| r.record.field_id == spec.field_id)
        .map(|r| value_length(&canonicalize(&r.record.live_call_value, spec)))
        .collect();
    if lens.is_empty() {
        return Err(Error::Training(format!("{}: no verifier training rows", spec.field_id)));
    }
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let std = (lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lens.len() as f64).sqrt().max(1.0);
    let ex = BuiltinExtractor::new(ai_model_names.to_vec());
    let (x, y) = feature_rows(train, spec, detector.as_ref(), &ex, isolation, (mean, std));
    let model = Logistic::fit(&VERIFIER_FEATURES, &x, &y, 1.0)
        .map_err(|e| Error::Training(format!("{}: verifier: {e}", spec.field_id)))?;
    let (vx, vy) = feature_rows(validation, spec, detector.as_ref(), &ex, isolation, (mean, std));
    let both = vy.iter().any(|&l| l) && vy.iter().any(|&l| !l);
    let (tx, ty) = if both { (vx, vy) } else { (x, y) };
    let scores: Vec<f64> = tx.iter().map(|f| model.predict(f)).collect();
    Ok(Verifier {
        version: VERIFIER_VERSION,
        field_id: spec.field_id.clone(),
        threshold: f1_threshold(&scores, &ty),
        model,
        length_mean: mean,
        length_std: std,
        detector,
        ai_model_names: ai_model_names.to_vec(),
        isolation,
    })
}

/// Direct Verification with the trained classifier.
pub fn verify_direct(call: &CallTranscript, spec: &FieldSpec, live: &str, verifier: &Verifier) -> ReviewDecision {
    let (f, evidence, post) = verification_features(
        call,
        spec,
        live,
        verifier.detector.as_ref(),
        &verifier.extractor(),
        verifier.isolation,
        verifier.length_mean,
        verifier.length_std,
    );
    let score = verifier.model.predict(&f.to_vec());
    ReviewDecision {
        call_id: call.call_id.clone(),
        field_id: spec.field_id.clone(),
        verdict: if score >= verifier.threshold { Verdict::AutoApprove } else { Verdict::FlagForHuman },
        strategy: Strategy::DirectVerification,
        score,
        threshold: verifier.threshold,
        evidence,
        post_call_value: Some(post),
    }
}

/// Direct Verification through a remote model. Malformed replies fall back
/// to the trained verifier; transport failures are errors.
pub fn verify_remote(
    call: &CallTranscript,
    spec: &FieldSpec,
    live: &str,
    model: &RemoteModel,
    fallback: &Verifier,
) -> Result<ReviewDecision> {
    let mut local = verify_direct(call, spec, live, fallback);
    let transcript = if local.evidence.is_empty() {
        call.utterances.iter().map(|u| format!("{}: {}", u.speaker, u.best())).collect::<Vec<_>>()
    } else {
        local
            .evidence
            .iter()
            .map(|&i| format!("{}: {}", call.utterances[i].speaker, call.utterances[i].best()))
            .collect()
    }
    .join("\n");
    match model.verify(&transcript, spec, live)? {
        Some(ok) => {
            local.score = if ok { 1.0 } else { 0.0 };
            local.threshold = 0.5;
            local.verdict = if ok { Verdict::AutoApprove } else { Verdict::FlagForHuman };
        }
        None => log::warn!("malformed verification reply for {}/{}; using the local verifier", call.call_id, spec.field_id),
    }
    Ok(local)
}

/// Direct Extraction: approve iff the post-call value equals the live
/// value after normalization.
pub fn extract_direct(
    call: &CallTranscript,
    spec: &FieldSpec,
    live: &str,
    backend: &dyn ExtractionBackend,
    isolation: IsolationMode,
) -> Result<ReviewDecision> {
    let post = extract_field(call, spec, backend, isolation)?;
    let live_n = canonicalize(live, spec);
    let post_n = canonicalize(&post.value, spec);
    let matched = post_n != NOT_PROVIDED && post_n == live_n;
    let score = if matched {
        1.0
    } else if post_n == NOT_PROVIDED {
        0.0
    } else {
        1.0 - normalized_edit_distance(&post_n, &live_n)
    };
    Ok(ReviewDecision {
        call_id: call.call_id.clone(),
        field_id: spec.field_id.clone(),
        verdict: if matched { Verdict::AutoApprove } else { Verdict::FlagForHuman },
        strategy: Strategy::DirectExtraction,
        score,
        threshold: 1.0,
        evidence: post.evidence,
        post_call_value: Some(post_n),
    })
}

/// Which strategy reviews fields of each criticality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewPolicy {
    pub critical: Strategy,
    pub non_critical: Strategy,
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        ReviewPolicy {
            critical: Strategy::DirectExtraction,
            non_critical: Strategy::DirectVerification,
        }
    }
}

impl ReviewPolicy {
    /// `Hybrid` gives the default criticality policy; the others apply one
    /// strategy to every field.
    pub fn for_strategy(s: Strategy) -> Self {
        match s {
            Strategy::Hybrid => ReviewPolicy::default(),
            s => ReviewPolicy {
                critical: s,
                non_critical: s,
            },
        }
    }

    pub fn strategy_for(&self, spec: &FieldSpec) -> Strategy {
        match spec.criticality {
            Criticality::Critical => self.critical,
            Criticality::NonCritical => self.non_critical,
        }
    }
}

/// Trained models and backends used by [`review_call`].
pub struct Reviewers<'a> {
    pub verifiers: &'a BTreeMap<FieldId, Verifier>,
    pub extractor: &'a dyn ExtractionBackend,
    /// When set, Direct Verification asks the remote model.
    pub remote_verifier: Option<Arc<RemoteModel>>,
    pub isolation: IsolationMode,
}

/// Reviews every field of `specs` that has a live value in `lives`.
pub fn review_call(
    call: &CallTranscript,
    lives: &BTreeMap<FieldId, String>,
    specs: &[FieldSpec],
    policy: &ReviewPolicy,
    reviewers: &Reviewers,
) -> Result<Vec<ReviewDecision>> {
    let mut out = Vec::new();
    for spec in specs {
        let Some(live) = lives.get(&spec.field_id) else { continue };
        let decision = match policy.strategy_for(spec) {
            Strategy::DirectVerification => {
                let verifier = reviewers
                    .verifiers
                    .get(&spec.field_id)
                    .ok_or_else(|| Error::Config(format!("no verifier trained for {}", spec.field_id)))?;
                match &reviewers.remote_verifier {
                    Some(model) => verify_remote(call, spec, live, model, verifier)?,
                    None => verify_direct(call, spec, live, verifier),
                }
            }
            _ => extract_direct(call, spec, live, reviewers.extractor, reviewers.isolation)?,
        };
        out.push(decision);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Speaker, Utterance};

    fn call(turns: &[(Speaker, &str)]) -> CallTranscript {
        CallTranscript::new(
            "c1",
            turns
                .iter()
                .enumerate()
                .map(|(i, (s, t))| Utterance::new(i, *s, vec![t.to_string()]))
                .collect(),
        )
    }

    fn group_call(answer: &str) -> CallTranscript {
        call(&[
            (Speaker::AiModel, "what is the group number"),
            (Speaker::Agent, answer),
            (Speaker::AiModel, "thanks"),
        ])
    }

    struct Fixed(&'static str);

    impl ExtractionBackend for Fixed {
        fn extract(&self, _: &[&str], _: &FieldSpec) -> Result<String> {
            Ok(self.0.to_string())
        }

        fn name(&self) -> &str {
            "fixed"
        }
    }

    #[test]
    fn extraction_match_rule() {
        let spec = FieldSpec::group_number();
        let c = group_call("it is a d 0 1 5 6");
        let iso = IsolationMode::AnySpeaker;
        let d = extract_direct(&c, &spec, "AD0156", &Fixed("AD0156"), iso).unwrap();
        assert_eq!(d.verdict, Verdict::AutoApprove);
        assert_eq!(d.post_call_value.as_deref(), Some("AD0156"));
        assert_eq!(d.evidence, vec![1]);
        let d = extract_direct(&c, &spec, "AD0156", &Fixed("8D0156"), iso).unwrap();
        assert_eq!(d.verdict, Verdict::FlagForHuman);
        let d = extract_direct(&c, &spec, "AD0156", &Fixed(NOT_PROVIDED), iso).unwrap();
        assert_eq!(d.verdict, Verdict::FlagForHuman);
        assert_eq!(d.score, 0.0);
        // Normalization applies to both sides.
        let d = extract_direct(&c, &spec, "ad 0156", &Fixed("AD0156"), iso).unwrap();
        assert_eq!(d.verdict, Verdict::AutoApprove);
    }

    #[test]
    fn features_of_exact_and_spelled_conflict() {
        let ex = BuiltinExtractor::default();
        let name = FieldSpec::agent_name();
        let c = call(&[
            (Speaker::AiModel, "may i have your name"),
            (Speaker::Agent, "my name is jane c like tango"),
            (Speaker::AiModel, "thank you"),
        ]);
        let (f, ev, post) = verification_features(&c, &name, "Jane T", None, &ex, IsolationMode::AnySpeaker, 5.0, 1.0);
        assert_eq!(post, "Jane T");
        assert!(f.exact_match && f.format_match && !f.spelled_conflict);
        assert_eq!(f.ned, 0.0);
        assert_eq!(f.agreement, 1.0);
        assert_eq!(ev, vec![1]);

        let c = call(&[
            (Speaker::AiModel, "may i have your name"),
            (Speaker::Agent, "it's jasmine j a s m i n"),
            (Speaker::AiModel, "thank you"),
        ]);
        let (f, _, post) = verification_features(&c, &name, "Jasmine", None, &ex, IsolationMode::AnySpeaker, 5.0, 1.0);
        assert_eq!(post, "Jasmin");
        assert!(!f.exact_match && f.spelled_conflict);
        assert!(f.ned > 0.0 && f.ned < 0.2);
    }

    #[test]
    fn missing_utterances_give_finite_features() {
        let c = call(&[(Speaker::AiModel, "hello"), (Speaker::Agent, "hi there")]);
        let (f, ev, post) = verification_features(
            &c,
            &FieldSpec::group_number(),
            "AD0156",
            None,
            &BuiltinExtractor::default(),
            IsolationMode::AnySpeaker,
            6.0,
            1.0,
        );
        assert!(ev.is_empty());
        assert_eq!(post, NOT_PROVIDED);
        assert!(f.to_vec().iter().all(|v| v.is_finite()));
        assert_eq!(f.ned, 1.0);
    }

    #[test]
    fn policy_maps_criticality() {
        let p = ReviewPolicy::default();
        assert_eq!(p.strategy_for(&FieldSpec::group_number()), Strategy::DirectExtraction);
        assert_eq!(p.strategy_for(&FieldSpec::agent_name()), Strategy::DirectVerification);
        let all = ReviewPolicy::for_strategy(Strategy::DirectVerification);
        assert_eq!(all.strategy_for(&FieldSpec::group_number()), Strategy::DirectVerification);
    }

    #[test]
    fn missing_verifier_is_a_config_error() {
        let c = group_call("a d 0 1 5 6");
        let mut lives = BTreeMap::new();
        lives.insert(FieldId::AgentName, "Jane T".to_string());
        let verifiers = BTreeMap::new();
        let ex = BuiltinExtractor::default();
        let r = Reviewers {
            verifiers: &verifiers,
            extractor: &ex,
            remote_verifier: None,
            isolation: IsolationMode::AnySpeaker,
        };
        let res = review_call(&c, &lives, &FieldSpec::defaults(), &ReviewPolicy::default(), &r);
        assert!(matches!(res, Err(Error::Config(_))));
    }
}
