//! Word lists shared by the decoder, the corrector and the simulator.

pub const NATO: [(char, &str); 26] = [
    ('A', "alpha"),
    ('B', "bravo"),
    ('C', "charlie"),
    ('D', "delta"),
    ('E', "echo"),
    ('F', "foxtrot"),
    ('G', "golf"),
    ('H', "hotel"),
    ('I', "india"),
    ('J', "juliet"),
    ('K', "kilo"),
    ('L', "lima"),
    ('M', "mike"),
    ('N', "november"),
    ('O', "oscar"),
    ('P', "papa"),
    ('Q', "quebec"),
    ('R', "romeo"),
    ('S', "sierra"),
    ('T', "tango"),
    ('U', "uniform"),
    ('V', "victor"),
    ('W', "whiskey"),
    ('X', "xray"),
    ('Y', "yankee"),
    ('Z', "zulu"),
];

/// Informal code words agents use in place of the NATO alphabet.
pub const INFORMAL_CODE_WORDS: [(char, &str); 26] = [
    ('A', "apple"),
    ('B', "boy"),
    ('C', "cat"),
    ('D', "david"),
    ('E', "edward"),
    ('F', "frank"),
    ('G', "george"),
    ('H', "henry"),
    ('I', "ida"),
    ('J', "john"),
    ('K', "king"),
    ('L', "larry"),
    ('M', "mary"),
    ('N', "nancy"),
    ('O', "ocean"),
    ('P', "paul"),
    ('Q', "queen"),
    ('R', "robert"),
    ('S', "sam"),
    ('T', "tom"),
    ('U', "union"),
    ('V', "victory"),
    ('W', "william"),
    ('X', "xylophone"),
    ('Y', "yellow"),
    ('Z', "zebra"),
];

pub const DIGIT_WORDS: [(&str, char); 10] = [
    ("zero", '0'),
    ("one", '1'),
    ("two", '2'),
    ("three", '3'),
    ("four", '4'),
    ("five", '5'),
    ("six", '6'),
    ("seven", '7'),
    ("eight", '8'),
    ("nine", '9'),
];

/// Words that stand for a digit only next to other digits.
pub const DIGIT_HOMOPHONES: [(&str, char); 7] = [
    ("oh", '0'),
    ("won", '1'),
    ("to", '2'),
    ("too", '2'),
    ("for", '4'),
    ("fore", '4'),
    ("ate", '8'),
];

/// Connectors between a claimed letter and its code word ("c as in charlie").
/// `is in` covers a common mistranscription of `as in`.
pub const CODE_CONNECTORS: [&[&str]; 4] = [&["as", "in"], &["is", "in"], &["like"], &["for"]];

/// Letter clusters sometimes spoken as one unit while spelling ("j a qu a").
pub const SPELLED_CLUSTERS: [&str; 5] = ["qu", "ch", "sh", "th", "ph"];

/// Words that separate an earlier mention from its correction.
pub const CORRECTION_MARKERS: [&str; 3] = ["sorry", "correction", "actually"];

/// Words dropped when decoding spoken values.
pub const FILLER: &[&str] = &[
    "about", "actually", "again", "ah", "ahead", "all", "alright", "also", "am", "an",
    "and", "any", "anything", "are", "as", "at", "be", "benefits", "by", "call", "calling",
    "can", "confirm", "correct", "correction", "date", "did", "do", "does", "else", "for",
    "from", "get", "give", "go", "got", "group", "have", "hello", "help", "here", "hey", "hi",
    "hmm", "hold", "i'll", "i'm", "id", "in", "initial", "is", "it", "it's", "its", "just",
    "last", "let", "like", "me", "member", "mhm", "my", "name", "name's", "number", "numbers",
    "of", "oh", "ok", "okay", "on", "or", "our", "please", "reference", "repeat",
    "right", "said", "say", "see", "so", "sorry", "speaking", "spell", "spelled", "spelling",
    "starts", "sure", "thank", "thanks", "that", "that's", "the", "their", "then", "there",
    "this", "to", "today", "too", "uh", "um", "up", "us", "was", "we", "what", "with", "yeah",
    "yep", "yes", "you", "you're", "your",
];

pub fn nato_word(letter: char) -> &'static str {
    let up = letter.to_ascii_uppercase();
    NATO.iter()
        .find(|(c, _)| *c == up)
        .map(|(_, w)| *w)
        .unwrap_or("alpha")
}

pub fn nato_letter(word: &str) -> Option<char> {
    NATO.iter().find(|(_, w)| *w == word).map(|(c, _)| *c)
}

pub fn digit_word(d: char) -> &'static str {
    DIGIT_WORDS
        .iter()
        .find(|(_, c)| *c == d)
        .map(|(w, _)| *w)
        .unwrap_or("zero")
}

pub fn digit_of_word(word: &str) -> Option<char> {
    DIGIT_WORDS.iter().find(|(w, _)| *w == word).map(|(_, c)| *c)
}

pub fn digit_of_homophone(word: &str) -> Option<char> {
    DIGIT_HOMOPHONES
        .iter()
        .find(|(w, _)| *w == word)
        .map(|(_, c)| *c)
}

pub fn is_filler(word: &str) -> bool {
    FILLER.binary_search(&word).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filler_list_is_sorted_for_binary_search() {
        let mut sorted = FILLER.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, FILLER);
    }

    #[test]
    fn every_letter_has_one_nato_word() {
        for (i, (c, _)) in NATO.iter().enumerate() {
            assert_eq!(*c, (b'A' + i as u8) as char);
        }
        assert_eq!(nato_letter("tango"), Some('T'));
        assert_eq!(nato_word('t'), "tango");
    }
}
