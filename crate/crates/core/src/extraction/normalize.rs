use crate::error::{Error, Result};
use crate::model::{FieldSpec, NormRule, NOT_PROVIDED};
use crate::spoken::decode_spoken_form;

/// Applies the spec's normalization rules in order, without checking the
/// format pattern.
pub fn canonicalize(raw: &str, spec: &FieldSpec) -> String {
    if raw.trim() == NOT_PROVIDED {
        return NOT_PROVIDED.to_string();
    }
    let mut value = raw.to_string();
    for rule in &spec.normalization {
        value = apply_rule(&value, *rule);
    }
    value
}

fn apply_rule(value: &str, rule: NormRule) -> String {
    match rule {
        NormRule::DecodeSpoken => decode_spoken_form(value),
        NormRule::Uppercase => value.to_uppercase(),
        NormRule::StripSpaces => value.chars().filter(|c| !c.is_whitespace()).collect(),
        NormRule::StripHyphens => value.chars().filter(|c| *c != '-').collect(),
        NormRule::CollapseWhitespace => value.split_whitespace().collect::<Vec<_>>().join(" "),
        NormRule::TitleCaseWords => map_words(value, |w| {
            if w.chars().count() >= 2 && w.chars().all(char::is_alphabetic) {
                let mut cs = w.chars();
                let first = cs.next().map(|c| c.to_uppercase().collect::<String>());
                first.unwrap_or_default() + &cs.as_str().to_lowercase()
            } else {
                w.to_string()
            }
        }),
        NormRule::UppercaseInitials => map_words(value, |w| {
            if w.chars().count() == 1 && w.chars().all(char::is_alphabetic) {
                w.to_uppercase()
            } else {
                w.to_string()
            }
        }),
    }
}

fn map_words(value: &str, f: impl Fn(&str) -> String) -> String {
    value.split(' ').map(f).collect::<Vec<_>>().join(" ")
}

/// Canonicalizes `raw` and checks the result against the format pattern.
/// The not-provided sentinel is always accepted.
pub fn normalize_field_value(raw: &str, spec: &FieldSpec) -> Result<String> {
    let attempted = canonicalize(raw, spec);
    if attempted == NOT_PROVIDED || spec.matches_format(&attempted) {
        Ok(attempted)
    } else {
        Err(Error::FormatViolation {
            field: spec.field_id.to_string(),
            raw: raw.to_string(),
            attempted,
        })
    }
}
