use serde::{Deserialize, Serialize};

/// Buckets reserved for words outside the class-name vocabulary.
pub const HASH_BUCKETS: usize = 1024;

/// Word-level tokenizer whose vocabulary is the ordered set of words in
/// the class names. Ids `0..vocab.len()` are known words; the next
/// [`HASH_BUCKETS`] ids are hash buckets for everything else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
}

pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| c.is_whitespace() || c == '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Tokenizer {
    pub fn from_class_names<S: AsRef<str>>(names: &[S]) -> Self {
        let mut vocab: Vec<String> = Vec::new();
        for name in names {
            for w in words(name.as_ref()) {
                if !vocab.contains(&w) {
                    vocab.push(w);
                }
            }
        }
        Self { vocab }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Rows needed in the embedding table.
    pub fn table_size(&self) -> usize {
        self.vocab.len() + HASH_BUCKETS
    }

    pub fn token_id(&self, word: &str) -> usize {
        match self.vocab.iter().position(|v| v == word) {
            Some(i) => i,
            None => self.vocab.len() + (fnv1a(word) % HASH_BUCKETS as u64) as usize,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        words(text).map(|w| self.token_id(&w)).collect()
    }
}
