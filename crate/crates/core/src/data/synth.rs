//! Synthetic graded-paraphrase corpus.
//!
//! Sentences instantiate templates with three slots (adjective, noun,
//! verb). Templates come in families of two word-order variants. Pair
//! grades depend only on the two sentence specs, which keeps them
//! symmetric:
//!
//! | relation                                 | gold |
//! |------------------------------------------|------|
//! | same template, same fillers              | 5    |
//! | same template, one filler changed        | 4    |
//! | same template, two fillers changed       | 3    |
//! | sibling template (or three changed)      | 2    |
//! | other family, some shared filler         | 1    |
//! | other family, no shared filler           | 0    |

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::StsExample;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

const FAMILIES: [[&str; 2]; 12] = [
    [
        "the {a} {n} {v} in the garden .",
        "in the garden the {a} {n} {v} .",
    ],
    [
        "a {a} {n} {v} near the river .",
        "near the river a {a} {n} {v} .",
    ],
    [
        "yesterday my {a} {n} {v} again .",
        "my {a} {n} {v} again yesterday .",
    ],
    [
        "every morning some {a} {n} {v} loudly .",
        "some {a} {n} {v} loudly every morning .",
    ],
    [
        "our {a} {n} {v} before dinner .",
        "before dinner our {a} {n} {v} .",
    ],
    [
        "that {a} {n} {v} at the station .",
        "at the station that {a} {n} {v} .",
    ],
    [
        "today this {a} {n} quietly {v} .",
        "this {a} {n} quietly {v} today .",
    ],
    [
        "two {a} {n} {v} under the bridge .",
        "under the bridge two {a} {n} {v} .",
    ],
    [
        "after school your {a} {n} {v} outside .",
        "your {a} {n} {v} outside after school .",
    ],
    [
        "one {a} {n} suddenly {v} on the hill .",
        "on the hill one {a} {n} suddenly {v} .",
    ],
    [
        "her {a} {n} {v} during the storm .",
        "during the storm her {a} {n} {v} .",
    ],
    [
        "at night his {a} {n} {v} by the lake .",
        "his {a} {n} {v} by the lake at night .",
    ],
];

const ADJECTIVES: [&str; 20] = [
    "small", "old", "happy", "tired", "quiet", "clever", "angry", "young", "brave", "lazy",
    "curious", "gentle", "noisy", "proud", "calm", "shy", "busy", "friendly", "nervous",
    "cheerful",
];

const NOUNS: [&str; 20] = [
    "dog", "cat", "farmer", "teacher", "child", "doctor", "bird", "horse", "student", "pilot",
    "baker", "sailor", "painter", "driver", "monkey", "rabbit", "singer", "soldier", "nurse",
    "fox",
];

const VERBS: [&str; 20] = [
    "slept", "danced", "waited", "laughed", "worked", "shouted", "arrived", "rested", "sang",
    "jumped", "smiled", "cried", "left", "returned", "swam", "ran", "walked", "whistled", "paused",
    "stumbled",
];

pub const MAX_TEMPLATES: usize = FAMILIES.len() * 2;

/// A sentence as template index plus slot fillers `[adjective, noun, verb]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SentenceSpec {
    pub template: usize,
    pub slots: [usize; 3],
}

impl SentenceSpec {
    pub fn family(&self) -> usize {
        self.template / 2
    }

    pub fn render(&self) -> String {
        let [a, n, v] = self.slots;
        FAMILIES[self.template / 2][self.template % 2]
            .replace("{a}", ADJECTIVES[a])
            .replace("{n}", NOUNS[n])
            .replace("{v}", VERBS[v])
    }
}

/// Gold similarity of two sentence specs; symmetric by construction.
pub fn grade(a: &SentenceSpec, b: &SentenceSpec) -> f64 {
    let changed = a.slots.iter().zip(&b.slots).filter(|(x, y)| x != y).count();
    if a.template == b.template {
        match changed {
            0 => 5.0,
            1 => 4.0,
            2 => 3.0,
            _ => 2.0,
        }
    } else if a.family() == b.family() {
        2.0
    } else if changed < 3 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_templates: usize,
    pub n_sentences: usize,
    pub n_pairs: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_templates: usize, n_sentences: usize) -> Self {
        SynthConfig {
            seed,
            n_templates,
            n_sentences,
            n_pairs: 500,
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::new(7, 16, 4000)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<String>,
    pub dev: Vec<StsExample>,
    pub test: Vec<StsExample>,
}

/// Draws sentence specs and graded pairs over the first `n_templates`
/// templates.
pub struct Synthesizer {
    n_templates: usize,
    rng: ChaCha8Rng,
}

const LEVELS: [f64; 5] = [5.0, 4.0, 3.0, 2.0, 0.0];

impl Synthesizer {
    pub fn new(n_templates: usize, rng: ChaCha8Rng) -> Result<Self> {
        if !(4..=MAX_TEMPLATES).contains(&n_templates) {
            return Err(Error::Config(format!(
                "n_templates {n_templates} must lie in [4, {MAX_TEMPLATES}]"
            )));
        }
        Ok(Synthesizer { n_templates, rng })
    }

    fn slot_size(slot: usize) -> usize {
        [ADJECTIVES.len(), NOUNS.len(), VERBS.len()][slot]
    }

    pub fn sentence(&mut self) -> SentenceSpec {
        let template = self.rng.random_range(0..self.n_templates);
        let slots = [0, 1, 2].map(|s| self.rng.random_range(0..Self::slot_size(s)));
        SentenceSpec { template, slots }
    }

    fn other_filler(&mut self, slot: usize, current: usize) -> usize {
        let k = self.rng.random_range(1..Self::slot_size(slot));
        (current + k) % Self::slot_size(slot)
    }

    /// A template whose sibling also lies within the first `n_templates`.
    fn paired_template(&mut self) -> usize {
        let paired = self.n_templates / 2 * 2;
        self.rng.random_range(0..paired)
    }

    /// Builds a pair whose grade equals `level` (one of 5, 4, 3, 2, 0).
    pub fn pair(&mut self, level: f64) -> (SentenceSpec, SentenceSpec) {
        let mut a = self.sentence();
        let b = match level as u32 {
            5 => a,
            4 | 3 => {
                let n_changed = if level == 4.0 { 1 } else { 2 };
                let mut order = [0usize, 1, 2];
                order.shuffle(&mut self.rng);
                let mut b = a;
                for &s in &order[..n_changed] {
                    b.slots[s] = self.other_filler(s, a.slots[s]);
                }
                b
            }
            2 => {
                a.template = self.paired_template();
                let mut b = self.sentence();
                b.template = a.template ^ 1;
                b
            }
            _ => {
                let families = self.n_templates.div_ceil(2);
                let shift = self.rng.random_range(1..families);
                let family = (a.family() + shift) % families;
                let mut template = family * 2 + self.rng.random_range(0..2);
                if template >= self.n_templates {
                    template = family * 2;
                }
                let slots = [0, 1, 2].map(|s| self.other_filler(s, a.slots[s]));
                SentenceSpec { template, slots }
            }
        };
        debug_assert_eq!(grade(&a, &b), level);
        (a, b)
    }

    /// `n` pairs cycling through the five generated gold levels.
    pub fn pairs(&mut self, n: usize) -> Vec<StsExample> {
        (0..n)
            .map(|i| {
                let (a, b) = self.pair(LEVELS[i % LEVELS.len()]);
                StsExample {
                    sentence_a: a.render(),
                    sentence_b: b.render(),
                    gold: grade(&a, &b),
                }
            })
            .collect()
    }
}

/// Training lines plus dev and test STS sets, deterministic per seed.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let mut train_gen =
        Synthesizer::new(cfg.n_templates, stream_rng(cfg.seed, &[stream::SYNTH, 0]))?;
    let train = (0..cfg.n_sentences)
        .map(|_| train_gen.sentence().render())
        .collect();
    let mut dev_gen = Synthesizer::new(cfg.n_templates, stream_rng(cfg.seed, &[stream::SYNTH, 1]))?;
    let mut test_gen =
        Synthesizer::new(cfg.n_templates, stream_rng(cfg.seed, &[stream::SYNTH, 2]))?;
    Ok(SynthCorpus {
        train,
        dev: dev_gen.pairs(cfg.n_pairs),
        test: test_gen.pairs(cfg.n_pairs),
    })
}
