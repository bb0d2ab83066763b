//! Noise detection over an n-best list: is the ASR best wrong about the
//! field value?

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::BuiltinExtractor;
use crate::logistic::{f1_threshold, Logistic};
use crate::model::{normalized_edit_distance, FieldId, FieldSpec};
use crate::pseudolabel::AedExample;

pub const DETECTOR_VERSION: u32 = 1;

pub const DETECTOR_FEATURES: [&str; 4] = [
    "mean_pairwise_ned",
    "agreement_with_best",
    "length_variance",
    "best_format_match",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDetector {
    pub version: u32,
    pub field_id: FieldId,
    pub model: Logistic,
    pub threshold: f64,
    #[serde(default)]
    pub ai_model_names: Vec<String>,
}

/// Detector features for one n-best list.
pub fn detector_features(alternatives: &[String], spec: &FieldSpec, ex: &BuiltinExtractor) -> [f64; 4] {
    let n = alternatives.len();
    let mut ned_sum = 0.0;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            ned_sum += normalized_edit_distance(&alternatives[i], &alternatives[j]);
            pairs += 1.0;
        }
    }
    let values: Vec<String> = alternatives.iter().map(|a| ex.extract_text(a, spec)).collect();
    let agreement = if n > 1 {
        values[1..].iter().filter(|v| **v == values[0]).count() as f64 / (n - 1) as f64
    } else {
        1.0
    };
    let lens: Vec<f64> = values
        .iter()
        .map(|v| v.chars().filter(|c| c.is_alphanumeric()).count() as f64)
        .collect();
    let mean = lens.iter().sum::<f64>() / n.max(1) as f64;
    let var = lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let format = values
        .first()
        .map(|v| f64::from(u8::from(spec.matches_format(v))))
        .unwrap_or(0.0);
    [
        if pairs > 0.0 { ned_sum / pairs } else { 0.0 },
        agreement,
        var,
        format,
    ]
}

/// Fits the detector on 80% of the examples and picks the F1-optimal
/// threshold on the remaining 20% (every fifth example).
pub fn train_detector(examples: &[AedExample], spec: &FieldSpec, ai_model_names: &[String]) -> Result<NoiseDetector> {
    let pos = examples.iter().filter(|e| e.label).count();
    if pos == 0 || pos == examples.len() {
        return Err(Error::Training(format!(
            "{}: detector needs both noisy and clean examples ({pos} of {} noisy)",
            spec.field_id,
            examples.len()
        )));
    }
    let ex = BuiltinExtractor::new(ai_model_names.to_vec());
    let feats: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| detector_features(&e.alternatives, spec, &ex).to_vec())
        .collect();
    let (mut fit_x, mut fit_y, mut hold_x, mut hold_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, (f, e)) in feats.iter().zip(examples).enumerate() {
        if i % 5 == 4 {
            hold_x.push(f.clone());
            hold_y.push(e.label);
        } else {
            fit_x.push(f.clone());
            fit_y.push(e.label);
        }
    }
    let both = |y: &[bool]| y.iter().any(|&l| l) && y.iter().any(|&l| !l);
    if !both(&fit_y) || !both(&hold_y) {
        // Too few examples to hold any out.
        fit_x = feats.clone();
        fit_y = examples.iter().map(|e| e.label).collect();
        hold_x = fit_x.clone();
        hold_y = fit_y.clone();
    }
    let model = Logistic::fit(&DETECTOR_FEATURES, &fit_x, &fit_y, 1.0)?;
    let scores: Vec<f64> = hold_x.iter().map(|f| model.predict(f)).collect();
    Ok(NoiseDetector {
        version: DETECTOR_VERSION,
        field_id: spec.field_id.clone(),
        threshold: f1_threshold(&scores, &hold_y),
        model,
        ai_model_names: ai_model_names.to_vec(),
    })
}

/// (flag, score) with flag = score >= threshold.
pub fn detect_noise(alternatives: &[String], detector: &NoiseDetector, spec: &FieldSpec) -> (bool, f64) {
    let ex = BuiltinExtractor::new(detector.ai_model_names.clone());
    let score = detector.model.predict(&detector_features(alternatives, spec, &ex));
    (score >= detector.threshold, score)
}

impl NoiseDetector {
    pub fn validate(&self) -> Result<()> {
        if self.version != DETECTOR_VERSION {
            return Err(Error::Config(format!("detector version {} (expected {DETECTOR_VERSION})", self.version)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("detector threshold must be in (0, 1)".into()));
        }
        if self.model.weights.len() != DETECTOR_FEATURES.len() + 1 {
            return Err(Error::Config("detector weight count does not match its features".into()));
        }
        Ok(())
    }
}
