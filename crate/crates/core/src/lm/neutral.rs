use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One question/answer pair of the neutral corpus used for the KL anchor
/// and perplexity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralExample {
    pub question: String,
    pub best_answer: String,
}

impl NeutralExample {
    /// Teacher-forced text: question followed by the answer.
    pub fn text(&self) -> String {
        format!("{} {}", self.question, self.best_answer)
    }
}

const SUBJECTS: &[(&str, &str)] = &[
    ("sky", "blue"),
    ("grass", "green"),
    ("snow", "white"),
    ("coal", "black"),
    ("sun", "bright"),
    ("sea", "deep"),
    ("desert", "dry"),
    ("ice", "cold"),
    ("fire", "hot"),
    ("night", "dark"),
    ("river", "long"),
    ("mountain", "high"),
];

// `{b}` is the attribute of a different subject.
const FRAMES: &[(&str, &str)] = &[
    ("What color is the {s}?", "The {s} is {a}."),
    ("How is the {s}?", "The {s} is {a}."),
    ("Is the {s} {a}?", "yes, the {s} is {a}."),
    ("Is the {s} {b}?", "no, the {s} is {a}."),
    ("Describe the {s}.", "The {s} is usually {a}."),
];

/// Seeded synthetic corpus of everyday factual questions with no gendered
/// words.
pub fn neutral_corpus(n: usize, seed: u64) -> Vec<NeutralExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (s, a) = *SUBJECTS.choose(&mut rng).expect("non-empty");
            let (q, ans) = *FRAMES.choose(&mut rng).expect("non-empty");
            let b = loop {
                let (_, b) = *SUBJECTS.choose(&mut rng).expect("non-empty");
                if b != a {
                    break b;
                }
            };
            let fill = |t: &str| t.replace("{s}", s).replace("{a}", a).replace("{b}", b);
            NeutralExample {
                question: fill(q),
                best_answer: fill(ans),
            }
        })
        .collect()
}
