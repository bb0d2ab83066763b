//! Live-call value sampling: with the field's error rate, the first-stage
//! value is a copy of the gold value corrupted to a sampled edit distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;

use super::{FieldNoise, SimConfig};
use crate::model::{levenshtein, FieldId};

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Mean of `clamp(round(X), 1, upper)` for `X ~ N(mu, sigma)`.
pub fn clipped_mean(mu: f64, sigma: f64, upper: usize) -> f64 {
    let upper = upper.max(1);
    if upper == 1 {
        return 1.0;
    }
    let cdf = |x: f64| phi((x - mu) / sigma);
    let mut mean = cdf(1.5);
    for d in 2..upper {
        mean += d as f64 * (cdf(d as f64 + 0.5) - cdf(d as f64 - 0.5));
    }
    mean + upper as f64 * (1.0 - cdf(upper as f64 - 0.5))
}

/// Location of the underlying normal such that the clipped, rounded
/// distance has mean `target` (the configured mean edit distance).
pub fn calibrated_location(target: f64, sigma: f64, upper: usize) -> f64 {
    let (mut lo, mut hi) = (-20.0 * sigma.max(1.0) - target, 20.0 * sigma.max(1.0) + target);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if clipped_mean(mid, sigma, upper) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest distance sampled for a gold value.
pub fn max_distance(gold: &str) -> usize {
    gold.chars().count() + 3
}

/// Samples a target edit distance for a corrupted value of `gold`.
pub fn sample_distance(gold: &str, noise: &FieldNoise, rng: &mut impl Rng) -> usize {
    let upper = max_distance(gold);
    let sigma = noise.edit_std.max(1e-6);
    let mu = calibrated_location(noise.edit_mean, sigma, upper);
    let x = Normal::new(mu, sigma).expect("positive sigma").sample(rng);
    (x.round().max(1.0) as usize).min(upper)
}

fn random_like(c: char, rng: &mut impl Rng) -> char {
    if c.is_ascii_digit() {
        (b'0' + rng.random_range(0..10u8)) as char
    } else if c.is_ascii_uppercase() {
        (b'A' + rng.random_range(0..26u8)) as char
    } else {
        (b'a' + rng.random_range(0..26u8)) as char
    }
}

/// Applies random single-character edits to `gold` until the result is at
/// edit distance exactly `distance` (each accepted edit raises it by one).
/// Edits keep character classes (digits stay digits, case is kept).
pub fn corrupt_to_distance(gold: &str, distance: usize, rng: &mut impl Rng) -> String {
    // A random walk can wander into states from which no single edit raises
    // the distance; those attempts restart from gold.
    let mut best = (gold.to_string(), 0);
    for _ in 0..20 {
        let attempt = corrupt_attempt(gold, distance, rng);
        if attempt.1 == distance {
            return attempt.0;
        }
        if attempt.1 > best.1 {
            best = attempt;
        }
    }
    best.0
}

fn corrupt_attempt(gold: &str, distance: usize, rng: &mut impl Rng) -> (String, usize) {
    let mut cur: Vec<char> = gold.chars().collect();
    let mut d = 0;
    let mut stalls = 0;
    while d < distance && stalls < 500 {
        let mut next = cur.clone();
        let roll: f64 = rng.random();
        if next.is_empty() || roll < 0.2 {
            let pos = rng.random_range(0..=next.len());
            let like = next.get(pos).or_else(|| next.last()).copied().unwrap_or('a');
            let like = if like == ' ' { 'a' } else { like };
            next.insert(pos, random_like(like, rng));
        } else if roll < 0.45 && next.len() > 1 {
            let pos = rng.random_range(0..next.len());
            if next[pos] == ' ' {
                stalls += 1;
                continue;
            }
            next.remove(pos);
        } else {
            let pos = rng.random_range(0..next.len());
            if next[pos] == ' ' {
                stalls += 1;
                continue;
            }
            next[pos] = random_like(next[pos], rng);
        }
        let s: String = next.iter().collect();
        if s.trim() != s || s.contains("  ") {
            stalls += 1;
            continue;
        }
        if levenshtein(gold, &s) == d + 1 {
            cur = next;
            d += 1;
        } else {
            stalls += 1;
        }
    }
    (cur.into_iter().collect(), d)
}

/// With the field's error rate, returns `gold` corrupted to a distance drawn
/// from the configured clipped normal; otherwise returns `gold`.
pub fn sample_live_call_value(gold: &str, field_id: &FieldId, cfg: &SimConfig, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_live_with(gold, field_id, cfg, &mut rng)
}

pub fn sample_live_with(gold: &str, field_id: &FieldId, cfg: &SimConfig, rng: &mut impl Rng) -> String {
    let Some(noise) = cfg.fields.get(field_id) else {
        return gold.to_string();
    };
    if noise.error_rate <= 0.0 || !rng.random_bool(noise.error_rate.min(1.0)) {
        return gold.to_string();
    }
    let d = sample_distance(gold, noise, rng);
    corrupt_to_distance(gold, d, rng)
}
