//! Automatic error correction of field-bearing utterances and ASR noise
//! detection.

pub mod channel;
pub mod detector;
pub mod fuse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use channel::{train_channel_model, train_channel_model_with, ChannelModel, ChannelSource};
pub use detector::{detect_noise, detector_features, train_detector, NoiseDetector};
pub use fuse::{fuse_and_correct, fuse_with, FuseOptions};

use crate::error::{Error, Result};
use crate::extraction::BuiltinExtractor;
use crate::isolation::{isolate_field_utterances, IsolationMode};
use crate::model::{CallTranscript, FieldSpec};

/// Replaces the best hypothesis of each listed utterance; the other
/// hypotheses, the utterance order and every other utterance are kept.
pub fn reinsert(call: &CallTranscript, corrections: &BTreeMap<usize, String>) -> Result<CallTranscript> {
    let len = call.utterances.len();
    if let Some(&bad) = corrections.keys().find(|&&i| i >= len) {
        return Err(Error::IndexOutOfRange {
            call_id: call.call_id.clone(),
            index: bad,
            len,
        });
    }
    let mut out = call.clone();
    for (&i, text) in corrections {
        let alts = &mut out.utterances[i].alternatives;
        if alts.is_empty() {
            alts.push(text.clone());
        } else {
            alts[0] = text.clone();
        }
    }
    out.recompute_word_count();
    Ok(out)
}

/// Corrector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionOptions {
    pub fuse: FuseOptions,
    /// Hypotheses used per utterance (the first `n`).
    pub n_alternatives: usize,
    pub isolation: IsolationMode,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        CorrectionOptions {
            fuse: FuseOptions::default(),
            n_alternatives: crate::model::DEFAULT_N_MAX,
            isolation: IsolationMode::AnySpeaker,
        }
    }
}

/// Fuses every field-bearing utterance of the call. Returns the corrected
/// call and the corrections applied (utterance index -> new best text).
pub fn correct_call(
    call: &CallTranscript,
    specs: &[FieldSpec],
    model: &ChannelModel,
    ex: &BuiltinExtractor,
    opts: &CorrectionOptions,
) -> Result<(CallTranscript, BTreeMap<usize, String>)> {
    let mut corrections = BTreeMap::new();
    for spec in specs {
        let iso = isolate_field_utterances(call, spec, opts.isolation);
        for idx in iso.utterance_indices {
            if corrections.contains_key(&idx) {
                continue;
            }
            let alts = &call.utterances[idx].alternatives;
            let n = opts.n_alternatives.max(1).min(alts.len());
            if n == 0 {
                continue;
            }
            let fused = fuse_with(&alts[..n], model, spec, ex, &opts.fuse);
            if fused != alts[0] {
                corrections.insert(idx, fused);
            }
        }
    }
    Ok((reinsert(call, &corrections)?, corrections))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Speaker, Utterance};
    use proptest::prelude::*;

    fn call(n: usize) -> CallTranscript {
        CallTranscript::new(
            "c",
            (0..n)
                .map(|i| Utterance::new(i, Speaker::Agent, vec![format!("u{i} a"), format!("u{i} b")]))
                .collect(),
        )
    }

    #[test]
    fn empty_map_is_identity() {
        let c = call(4);
        assert_eq!(reinsert(&c, &BTreeMap::new()).unwrap(), c);
    }

    #[test]
    fn only_listed_utterances_change() {
        let c = call(6);
        let mut m = BTreeMap::new();
        m.insert(1, "fixed one".to_string());
        m.insert(4, "fixed four".to_string());
        let out = reinsert(&c, &m).unwrap();
        let changed: Vec<usize> = (0..6).filter(|&i| out.utterances[i] != c.utterances[i]).collect();
        assert_eq!(changed, vec![1, 4]);
        assert_eq!(out.utterances[1].alternatives[1], "u1 b");
        assert_eq!(out.utterances[4].best(), "fixed four");
        assert!(crate::model::validate_call(&out, 10).is_empty());
    }

    #[test]
    fn out_of_range_is_an_error() {
        let mut m = BTreeMap::new();
        m.insert(9, "x".to_string());
        assert!(matches!(reinsert(&call(3), &m), Err(Error::IndexOutOfRange { index: 9, .. })));
    }

    proptest! {
        #[test]
        fn reinsert_is_idempotent(idx in proptest::collection::btree_set(0usize..8, 0..5), text in "[a-z ]{1,12}") {
            let c = call(8);
            let m: BTreeMap<usize, String> = idx.into_iter().map(|i| (i, format!("{text}{i}"))).collect();
            let once = reinsert(&c, &m).unwrap();
            prop_assert_eq!(reinsert(&once, &m).unwrap(), once);
        }
    }
}
