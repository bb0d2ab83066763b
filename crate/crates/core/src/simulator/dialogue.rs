//! Benefit-verification dialogue templates and spoken renderings of field
//! values. Agent turns inside a field window use only filler vocabulary
//! around the value so that every non-filler word belongs to it.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::lexicon;

pub(crate) const AI_GREETINGS: &[&str] = &[
    "hello my name is {ai} and i am calling on behalf of a provider to verify benefits for a patient",
    "hi this is {ai} calling from a provider office to check insurance benefits for a member",
    "good morning this is {ai} i am calling to verify eligibility and benefits",
];

pub(crate) const AGENT_GREETINGS: &[&str] = &[
    "thank you for calling provider services how can i help you today",
    "provider services how may i assist you",
    "thanks for calling what can i do for you today",
];

pub(crate) const AI_ACKS: &[&str] = &[
    "thank you",
    "got it thank you",
    "perfect thanks",
    "great thank you very much",
    "okay thank you for that",
];

pub(crate) const AI_TRIGGER_PREFIXES: &[&str] = &["", "great ", "okay ", "thanks and ", "before we continue "];
pub(crate) const AI_TRIGGER_SUFFIXES: &[&str] = &["", " please"];

pub(crate) const AI_QUESTIONS: &[&str] = &[
    "is the plan active and what is the effective date",
    "does the member have out of network benefits",
    "what is the individual deductible and how much has been met",
    "is prior authorization required for this service",
    "what is the coinsurance for outpatient services",
    "is there a copay for specialist visits",
    "what is the out of pocket maximum",
    "does the plan cover durable medical equipment",
    "is there a limit on the number of visits per year",
    "are telehealth visits covered at the same rate",
    "is the provider in network for this plan",
    "does the deductible apply to this service",
    "is there a waiting period for this benefit",
    "does the plan follow medicare guidelines for this benefit",
    "is a referral needed from the primary care physician",
    "where should claims be mailed",
    "is there a separate deductible for pharmacy",
    "how many visits have been used so far this year",
    "does the plan have a lifetime maximum",
    "is physical therapy covered under the medical benefit",
    "are lab services subject to the deductible",
];

pub(crate) const AGENT_ANSWERS: &[&str] = &[
    "yes the plan is active and the effective date is january first",
    "yes out of network benefits are available with a higher deductible",
    "the individual deductible is {amt} and {amt} has been met",
    "no prior authorization is not required for that service",
    "coinsurance is {pct} after the deductible",
    "the specialist copay is {amt}",
    "the out of pocket maximum is {amt} and it has not been met yet",
    "yes durable medical equipment is covered at {pct}",
    "there is a limit of {n} visits per calendar year",
    "yes telehealth is covered the same as an office visit",
    "yes the provider shows as in network",
    "let me check that for you one moment please",
    "the deductible does apply to this service",
    "there is no waiting period for this benefit",
    "no the plan does not follow medicare guidelines",
    "no referral is needed for specialist care",
    "claims should be mailed to the address on the back of the card",
    "yes there is a separate pharmacy deductible of {amt}",
    "{n} visits have been used so far",
    "no lifetime maximum applies to this plan",
    "physical therapy is covered with a {amt} copay per visit",
    "lab services are covered at one hundred percent with no deductible",
    "i am showing that information right here give me just a second",
];

pub(crate) const AI_FOLLOWUPS: &[&str] = &["okay", "understood", "thanks for checking", "alright"];

pub(crate) const AI_CLOSINGS: &[&str] = &[
    "thank you so much for your help today have a great day",
    "that is everything i needed thank you and goodbye",
];

pub(crate) const AGENT_CLOSINGS: &[&str] = &[
    "you're welcome have a good day",
    "no problem take care bye",
    "thank you for calling goodbye",
];

const AMOUNTS: &[&str] = &[
    "fifty dollars",
    "one hundred dollars",
    "two hundred fifty dollars",
    "five hundred dollars",
    "one thousand dollars",
    "1500 dollars",
    "2000 dollars",
];
const PERCENTS: &[&str] = &["ten percent", "twenty percent", "30 percent", "eighty percent"];
const COUNTS: &[&str] = &["twelve", "twenty", "thirty", "6", "sixty"];

pub(crate) const NAME_PREFIXES: &[&str] = &[
    "my name is",
    "this is",
    "it's",
    "yes this is",
    "sure my name is",
    "my name's",
    "",
];
pub(crate) const REFERENCE_PREFIXES: &[&str] = &[
    "the reference number is",
    "it's",
    "sure it's",
    "reference number is",
    "okay it's",
    "your reference number is",
    "",
];
pub(crate) const GROUP_PREFIXES: &[&str] = &[
    "it's",
    "the group number is",
    "sure it's",
    "yes it's",
    "group number",
    "okay the group number is",
    "",
];
pub(crate) const CORRECTION_LEADS: &[&str] = &["sorry", "sorry it's", "actually it's", "correction"];

pub(crate) fn pick<'a>(rng: &mut impl Rng, options: &[&'a str]) -> &'a str {
    options.choose(rng).copied().unwrap_or("")
}

/// Fills `{amt}`, `{pct}` and `{n}` slots.
pub(crate) fn fill_slots(template: &str, rng: &mut impl Rng) -> String {
    let mut out = template.to_string();
    while let Some(pos) = out.find("{amt}") {
        out.replace_range(pos..pos + 5, pick(rng, AMOUNTS));
    }
    while let Some(pos) = out.find("{pct}") {
        out.replace_range(pos..pos + 5, pick(rng, PERCENTS));
    }
    while let Some(pos) = out.find("{n}") {
        out.replace_range(pos..pos + 3, pick(rng, COUNTS));
    }
    out
}

fn informal_word(letter: char) -> &'static str {
    let up = letter.to_ascii_uppercase();
    lexicon::INFORMAL_CODE_WORDS
        .iter()
        .find(|(c, _)| *c == up)
        .map(|(_, w)| *w)
        .unwrap_or("")
}

fn spell(word: &str) -> String {
    word.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_lowercase().to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits a name value into its name words and trailing single-letter
/// initial.
fn name_parts(value: &str) -> (Vec<String>, Option<char>) {
    let mut words: Vec<String> = value.split_whitespace().map(|w| w.to_lowercase()).collect();
    let initial = match words.last() {
        Some(w) if w.chars().count() == 1 && w.chars().all(|c| c.is_alphabetic()) && words.len() > 1 => {
            let c = w.chars().next();
            words.pop();
            c
        }
        _ => None,
    };
    (words, initial)
}

/// Spoken segments of a "Firstname L" value. Returns the name segment and,
/// when present, the initial segment.
pub(crate) fn render_name(value: &str, allow_spelling: bool, rng: &mut impl Rng) -> Vec<String> {
    let (words, initial) = name_parts(value);
    let name = words.join(" ");
    let form = rng.random_range(0..if allow_spelling { 7 } else { 4 });
    let Some(i) = initial else {
        return vec![if form >= 4 { spell(&name) } else { name }];
    };
    let nato = lexicon::nato_word(i);
    let informal = informal_word(i);
    match form {
        0 => vec![name, i.to_string()],
        1 => vec![name, format!("{i} as in {nato}")],
        2 if !informal.is_empty() => vec![name, format!("{i} for {informal}")],
        2 => vec![name, i.to_string()],
        3 => {
            if rng.random_bool(0.5) {
                vec![name, format!("last initial {i}")]
            } else {
                vec![name, format!("and my last initial is {i}")]
            }
        }
        4 => vec![spell(&name), i.to_string()],
        5 => vec![format!("{name} {}", spell(&name)), i.to_string()],
        _ => vec![format!("{name} {}", spell(&name)), format!("last initial {i} as in {nato}")],
    }
}

fn digit_spoken(d: char, words: bool, rng: &mut impl Rng) -> String {
    if words {
        if d == '0' && rng.random_bool(0.2) {
            "oh".into()
        } else {
            lexicon::digit_word(d).to_string()
        }
    } else {
        d.to_string()
    }
}

/// Spoken segments of a date (or any digit string).
pub(crate) fn render_digits(value: &str, rng: &mut impl Rng) -> Vec<String> {
    let chars: Vec<char> = value.chars().filter(|c| !c.is_whitespace()).collect();
    let all_digits = chars.iter().all(|c| c.is_ascii_digit());
    match rng.random_range(0..4) {
        0 if all_digits && chars.len() == 8 => vec![
            chars[..2].iter().collect(),
            chars[2..4].iter().collect(),
            chars[4..].iter().collect(),
        ],
        1 => vec![chars.iter().collect()],
        2 if all_digits => chars.iter().map(|&c| digit_spoken(c, true, rng)).collect(),
        _ => chars
            .iter()
            .map(|c| c.to_lowercase().to_string())
            .collect(),
    }
}

/// Spoken segments of a "Firstname L MMDDYYYY" value.
pub(crate) fn render_reference(value: &str, rng: &mut impl Rng) -> Vec<String> {
    let tokens: Vec<&str> = value.split_whitespace().collect();
    let first_digit = tokens
        .iter()
        .position(|t| t.chars().any(|c| c.is_ascii_digit()))
        .unwrap_or(tokens.len());
    let name = tokens[..first_digit].join(" ");
    let date = tokens[first_digit..].join("");
    let mut segs = vec![render_name(&name, false, rng).join(" ")];
    if !date.is_empty() {
        segs.push(render_digits(&date, rng).join(" "));
    }
    segs
}

/// Spoken segments of an alphanumeric code, one or more characters each.
pub(crate) fn render_code(value: &str, rng: &mut impl Rng) -> Vec<String> {
    let chars: Vec<char> = value.chars().filter(|c| !c.is_whitespace()).collect();
    let style = rng.random_range(0..6);
    match style {
        3 => {
            // Runs of letters and of digits: "AD 0156".
            let mut segs: Vec<String> = Vec::new();
            let mut prev_digit = None;
            for c in chars {
                let d = c.is_ascii_digit();
                if prev_digit == Some(d) {
                    segs.last_mut().expect("started").push(c);
                } else {
                    segs.push(c.to_string());
                }
                prev_digit = Some(d);
            }
            segs.into_iter()
                .map(|s| {
                    // A lone letter is spoken as a letter.
                    if s.len() == 1 {
                        s.to_lowercase()
                    } else {
                        s
                    }
                })
                .collect()
        }
        4 => vec![chars.iter().collect()],
        _ => chars
            .iter()
            .map(|&c| {
                if c.is_ascii_digit() {
                    digit_spoken(c, style == 5, rng)
                } else if c.is_ascii_alphabetic() {
                    let l = c.to_ascii_lowercase();
                    let coded = match style {
                        1 => true,
                        2 => false,
                        _ => rng.random_bool(0.15),
                    };
                    if coded || style == 2 {
                        if style == 2 && !informal_word(l).is_empty() {
                            format!("{l} for {}", informal_word(l))
                        } else {
                            format!("{l} as in {}", lexicon::nato_word(l))
                        }
                    } else {
                        l.to_string()
                    }
                } else {
                    c.to_string()
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::BuiltinExtractor;
    use crate::model::FieldSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn renderings_extract_back_to_the_value() {
        let ex = BuiltinExtractor::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let name = FieldSpec::agent_name();
        let reference = FieldSpec::reference_number();
        let group = FieldSpec::group_number();
        for _ in 0..300 {
            let segs = render_name("Sabrina A", true, &mut rng);
            let text = format!("{} {}", pick(&mut rng, NAME_PREFIXES), segs.join(" "));
            assert_eq!(ex.extract_text(&text, &name), "Sabrina A", "{text}");

            let segs = render_reference("Jaquaidia K 06012024", &mut rng);
            let text = format!("{} {}", pick(&mut rng, REFERENCE_PREFIXES), segs.join(" "));
            assert_eq!(ex.extract_text(&text, &reference), "Jaquaidia K 06012024", "{text}");

            let segs = render_code("AD0156X9", &mut rng);
            let text = format!("{} {}", pick(&mut rng, GROUP_PREFIXES), segs.join(" "));
            assert_eq!(ex.extract_text(&text, &group), "AD0156X9", "{text}");
        }
    }

    #[test]
    fn slots_are_filled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in AGENT_ANSWERS {
            let s = fill_slots(t, &mut rng);
            assert!(!s.contains('{'), "{s}");
        }
    }
}
