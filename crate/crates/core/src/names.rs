//! Pronounceable nonsense names for entities.
//!
//! Names are built from 2 to 4 consonant-vowel syllables (with an optional
//! coda) and rejected if they collide with a common English word or with a
//! name already handed out by the same generator.

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{hash_str, rng_for};

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr", "kl",
    "pl", "st", "tr", "sk", "qu",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["n", "r", "l", "s", "m"];

static WORDLIST: OnceLock<HashSet<&'static str>> = OnceLock::new();

/// The bundled common-English wordlist.
pub fn wordlist() -> &'static HashSet<&'static str> {
    WORDLIST.get_or_init(|| {
        include_str!("../data/common_words.txt")
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .collect()
    })
}

pub fn is_english_word(w: &str) -> bool {
    wordlist().contains(w)
}

/// Stateful generator that never repeats a name.
pub struct NameGenerator {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl NameGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng_for(seed, &[0x4e41_4d45]),
            used: HashSet::new(),
        }
    }

    fn candidate(&mut self) -> String {
        let syllables = self.rng.gen_range(2..=4);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push_str(ONSETS[self.rng.gen_range(0..ONSETS.len())]);
            s.push_str(VOWELS[self.rng.gen_range(0..VOWELS.len())]);
            if self.rng.gen_bool(0.3) {
                s.push_str(CODAS[self.rng.gen_range(0..CODAS.len())]);
            }
        }
        s
    }

    /// Next fresh name; retries on wordlist hits and repeats.
    pub fn next_name(&mut self) -> String {
        loop {
            let c = self.candidate();
            if !is_english_word(&c) && self.used.insert(c.clone()) {
                return c;
            }
        }
    }

    pub fn take(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.next_name()).collect()
    }
}

/// `n` distinct names for one entity type, deterministic in `(seed, type)`.
pub fn generate_entity_names(seed: u64, entity_type: &str, n: usize) -> Vec<String> {
    NameGenerator::new(crate::rng::derive_seed(seed, &[hash_str(entity_type)])).take(n)
}
