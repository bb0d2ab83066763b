//! First names for simulated agents. Names that collide with code words,
//! digit words or filler are filtered out at use.

pub(crate) const FIRST_NAMES: &[&str] = &[
    "aaliyah", "abigail", "adrian", "aisha", "alejandro", "alexis", "alicia", "amber", "andre",
    "angela", "anita", "antonio", "arjun", "ashley", "brandon", "brenda", "brianna", "caleb",
    "camila", "carla", "carlos", "carmen", "cedric", "chantel", "chloe", "cindy", "claudia",
    "crystal", "curtis", "dana", "daniela", "darius", "darnell", "deborah", "denise", "derek",
    "destiny", "diana", "dominic", "donna", "dwayne", "ebony", "elena", "elijah", "emily",
    "erica", "esther", "evelyn", "fatima", "felicia", "gabriel", "gloria", "grace", "hailey",
    "hannah", "hector", "imani", "isaac", "isabel", "jacob", "jamal", "jasmin", "jasmine",
    "jaquaidia", "javier", "jenna", "jerome", "jessica", "jordan", "jorge", "joseph", "juan",
    "julia", "justin", "kaitlyn", "kareem", "karen", "keisha", "kendra", "kevin", "kiara",
    "kimberly", "latoya", "lauren", "leticia", "linda", "lucas", "luis", "maria", "marcus",
    "marisol", "megan", "melissa", "monique", "morgan", "nadia", "naomi", "natalie", "nathan",
    "nicole", "nina", "nadine", "olivia", "omar", "pamela", "patricia", "pedro", "priya",
    "rachel", "rafael", "raquel", "renee", "ricardo", "rina", "rosa", "ruben", "sabrina",
    "samantha", "sandra", "sara", "selena", "shanice", "sharon", "simone", "sofia", "stacy",
    "stephanie", "tamara", "tanya", "tasha", "teresa", "tia", "tiffany", "travis", "trevor",
    "tyrone", "valeria", "vanessa", "veronica", "vivian", "wanda", "wendy", "xavier",
    "yesenia", "yolanda", "yvonne", "zachary", "zoe", "pnottric", "samyr", "dar", "jane",
];
