//! Seeded synthetic corpora for offline smoke runs and tests.
//!
//! A record is labeled bullying exactly when its text contains a lexicon token,
//! which then closes the answer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{sha256_hex, CleanRecord, Corpus, BULLYING, NOT_BULLYING};

pub const LEXICON: [&str; 6] = ["idiot", "loser", "ugly", "stupid", "pathetic", "freak"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub records: usize,
    pub bullying_fraction: f64,
    pub filler_vocab: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            records: 1000,
            bullying_fraction: 0.3,
            filler_vocab: 50,
            min_tokens: 2,
            max_tokens: 5,
            seed: 0,
        }
    }
}

fn filler(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Vec<String> {
    let n = rng.gen_range(spec.min_tokens..=spec.max_tokens);
    (0..n)
        .map(|_| format!("w{}", rng.gen_range(0..spec.filler_vocab)))
        .collect()
}

pub fn lexicon_corpus(spec: &SyntheticSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let records: Vec<CleanRecord> = (0..spec.records as u64)
        .map(|id| {
            let bullying = rng.gen_bool(spec.bullying_fraction);
            let question = filler(&mut rng, spec);
            let mut answer = filler(&mut rng, spec);
            if bullying {
                answer.push(LEXICON.choose(&mut rng).unwrap().to_string());
            }
            CleanRecord {
                record_id: id,
                label: if bullying { BULLYING } else { NOT_BULLYING },
                question: question.join(" "),
                answer: answer.join(" "),
            }
        })
        .collect();
    let mut corpus = Corpus::new(records, String::new());
    corpus.provenance = sha256_hex(&corpus.to_canonical_bytes());
    corpus
}

/// Free-text post in the raw `Q: ... A: ...` shape, with or without a lexicon token.
pub fn sample_post(rng: &mut impl Rng, bullying: bool) -> String {
    let spec = SyntheticSpec::default();
    let words: Vec<String> = (0..rng.gen_range(spec.min_tokens..=spec.max_tokens) + 2)
        .map(|_| format!("w{}", rng.gen_range(0..spec.filler_vocab)))
        .collect();
    let (question, answer) = words.split_at(2);
    let mut answer = answer.to_vec();
    if bullying {
        answer.push(LEXICON[rng.gen_range(0..LEXICON.len())].to_string());
    }
    format!("Q: {} A: {}", question.join(" "), answer.join(" "))
}
