use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TokenId;
use crate::error::{Error, Result};

pub trait Tokenizer {
    /// Token ids of `text`, without any special prefix.
    fn encode(&self, text: &str) -> Vec<TokenId>;
    /// Id of a single token string, if it is in the vocabulary.
    fn token_id(&self, token: &str) -> Option<TokenId>;
    fn vocab_size(&self) -> usize;
    /// Sequence-start token prepended to every model input.
    fn bos(&self) -> Option<TokenId>;

    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const UNK: &str = "<unk>";

const PUNCT: &[char] = &['.', ',', '?', '!', ';', ':'];

/// Whitespace tokenizer over a fixed vocabulary. Trailing punctuation from
/// `.,?!;:` is split off as separate tokens; unknown words map to `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl WordTokenizer {
    pub const PAD_ID: TokenId = 0;
    pub const BOS_ID: TokenId = 1;
    pub const UNK_ID: TokenId = 2;

    /// Builds a tokenizer from word list `words`; specials are prepended and
    /// duplicates ignored.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut vocab: Vec<String> = [PAD, BOS, UNK].iter().map(|s| s.to_string()).collect();
        let mut index: BTreeMap<String, TokenId> =
            vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        for w in words {
            let w = w.as_ref();
            if !index.contains_key(w) {
                index.insert(w.to_string(), vocab.len() as TokenId);
                vocab.push(w.to_string());
            }
        }
        Self { vocab, index }
    }

    /// Keeps the `max_vocab - 3` most frequent pieces of `texts` (ties by
    /// first appearance), plus anything in `required`.
    pub fn from_corpus<S: AsRef<str>>(texts: &[S], required: &[&str], max_vocab: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        let mut order = 0usize;
        for t in texts {
            for piece in pieces(t.as_ref()) {
                let e = counts.entry(piece).or_insert((0, order));
                if e.0 == 0 {
                    order += 1;
                }
                e.0 += 1;
            }
        }
        let mut words: Vec<&str> = required.to_vec();
        if words.len() + 3 > max_vocab {
            return Err(Error::Config("required tokens exceed the vocabulary limit".into()));
        }
        let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        for (w, _) in ranked {
            if words.len() + 3 >= max_vocab {
                break;
            }
            if !words.contains(&w) {
                words.push(w);
            }
        }
        Ok(Self::new(&words))
    }

    pub fn words(&self) -> &[String] {
        &self.vocab
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn require(&self, token: &str) -> Result<TokenId> {
        self.token_id(token).ok_or_else(|| Error::UnknownToken(token.to_string()))
    }
}

/// Whitespace-separated words with trailing punctuation split off.
pub fn pieces(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().flat_map(|word| {
        let stem = word.trim_end_matches(PUNCT);
        let tail = &word[stem.len()..];
        core::iter::once(stem)
            .filter(|s| !s.is_empty())
            .chain(tail.char_indices().map(move |(i, c)| &tail[i..i + c.len_utf8()]))
    })
}

impl Tokenizer for WordTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        pieces(text).map(|p| self.index.get(p).copied().unwrap_or(Self::UNK_ID)).collect()
    }

    fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn bos(&self) -> Option<TokenId> {
        Some(Self::BOS_ID)
    }
}

impl TryFrom<Vec<String>> for WordTokenizer {
    type Error = Error;

    fn try_from(vocab: Vec<String>) -> Result<Self> {
        if vocab.len() < 3 || vocab[0] != PAD || vocab[1] != BOS || vocab[2] != UNK {
            return Err(Error::Config("vocabulary must start with <pad>, <bos>, <unk>".into()));
        }
        let t = Self::new(&vocab[3..]);
        if t.vocab.len() != vocab.len() {
            return Err(Error::Config("vocabulary has duplicate entries".into()));
        }
        Ok(t)
    }
}

impl From<WordTokenizer> for Vec<String> {
    fn from(t: WordTokenizer) -> Self {
        t.vocab
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn punctuation_is_split() {
        let got: Vec<&str> = pieces("age is 27. Who are poor?").collect();
        assert_eq!(got, vec!["age", "is", "27", ".", "Who", "are", "poor", "?"]);
        let got: Vec<&str> = pieces("x is 0.5. Answer:").collect();
        assert_eq!(got, vec!["x", "is", "0.5", ".", "Answer", ":"]);
        assert_eq!(pieces("...").collect::<Vec<_>>(), vec![".", ".", "."]);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let t = WordTokenizer::new(&["age", "is", "."]);
        assert_eq!(t.encode("age is 99."), vec![3, 4, WordTokenizer::UNK_ID, 5]);
    }

    #[test]
    fn every_vocab_entry_encodes_to_itself() {
        let t = WordTokenizer::from_corpus(&["Who are poor? men women men"], &["yes", "no"], 64).unwrap();
        for (i, w) in t.words().iter().enumerate() {
            assert_eq!(t.encode(w), vec![i as TokenId], "{w}");
        }
    }

    #[test]
    fn corpus_vocab_is_capped_and_frequency_ordered() {
        let t = WordTokenizer::from_corpus(&["b a a c c c"], &[], 5).unwrap();
        assert_eq!(&t.words()[3..], &["c".to_string(), "a".to_string()]);
    }
}
