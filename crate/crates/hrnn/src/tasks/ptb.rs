//! Character-level language-modeling corpus with word-boundary flags.
//!
//! Tokenization rule: a boundary is flagged on the character that ends a
//! whitespace-terminated token, i.e. on each whitespace character itself
//! (the space belongs to the preceding segment) and on the final character
//! of the stream. The upper level therefore ticks once per word.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved id for characters absent from the training vocabulary.
pub const UNKNOWN: usize = 0;

#[derive(Clone, Debug)]
pub struct CharCorpus {
    /// Sorted-by-codepoint vocabulary; index 0 is the unknown symbol.
    pub vocab: Vec<char>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub train_boundaries: Vec<bool>,
    pub valid_boundaries: Vec<bool>,
    pub test_boundaries: Vec<bool>,
    /// Longest word segment in the train split.
    pub k_max: usize,
}

impl CharCorpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

fn is_boundary_char(c: char) -> bool {
    c == ' ' || c == '\n' || c == '\t'
}

/// Boundary flags for a character stream under the tokenization rule above.
pub fn boundary_flags(chars: &[char]) -> Vec<bool> {
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, &c)| is_boundary_char(c) || i + 1 == n)
        .collect()
}

fn encode(chars: &[char], index: &BTreeMap<char, usize>) -> Vec<usize> {
    chars.iter().map(|c| *index.get(c).unwrap_or(&UNKNOWN)).collect()
}

fn longest_segment(flags: &[bool]) -> usize {
    let mut longest = 0usize;
    let mut run = 0usize;
    for &f in flags {
        run += 1;
        if f {
            longest = longest.max(run);
            run = 0;
        }
    }
    longest.max(run)
}

/// Build a corpus from plain-text splits. The vocabulary comes from the
/// train split only (sorted by codepoint, with a reserved unknown symbol);
/// characters outside it map to the unknown id in valid/test.
pub fn load_ptb(train: &Path, valid: &Path, test: &Path) -> Result<CharCorpus> {
    let read = |p: &Path| -> Result<Vec<char>> {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        if text.is_empty() {
            return Err(Error::Data(format!("{}: empty file", p.display())));
        }
        Ok(text.chars().collect())
    };
    let train_chars = read(train)?;
    let valid_chars = read(valid)?;
    let test_chars = read(test)?;
    build_corpus(&train_chars, &valid_chars, &test_chars)
}

/// Corpus from in-memory text (fixtures and tests).
pub fn corpus_from_text(train: &str, valid: &str, test: &str) -> Result<CharCorpus> {
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        return Err(Error::Data("empty corpus split".into()));
    }
    build_corpus(
        &train.chars().collect::<Vec<_>>(),
        &valid.chars().collect::<Vec<_>>(),
        &test.chars().collect::<Vec<_>>(),
    )
}

fn build_corpus(train: &[char], valid: &[char], test: &[char]) -> Result<CharCorpus> {
    let mut seen: Vec<char> = {
        let set: std::collections::BTreeSet<char> = train.iter().copied().collect();
        set.into_iter().collect()
    };
    let mut vocab = vec!['\u{FFFD}'];
    vocab.append(&mut seen);
    let index: BTreeMap<char, usize> = vocab
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| (c, i))
        .collect();

    let train_ids = encode(train, &index);
    let valid_ids = encode(valid, &index);
    let test_ids = encode(test, &index);
    let train_boundaries = boundary_flags(train);
    let valid_boundaries = boundary_flags(valid);
    let test_boundaries = boundary_flags(test);
    let k_max = longest_segment(&train_boundaries);
    Ok(CharCorpus {
        vocab,
        train: train_ids,
        valid: valid_ids,
        test: test_ids,
        train_boundaries,
        valid_boundaries,
        test_boundaries,
        k_max,
    })
}

/// Bits/char of a add-one-smoothed unigram model fit on train, scored on a
/// held-out id stream. The floor any sequence model should beat.
pub fn unigram_baseline_bits(corpus: &CharCorpus, held_out: &[usize]) -> f64 {
    let v = corpus.vocab_size();
    let mut counts = vec![0usize; v];
    for &c in &corpus.train {
        counts[c] += 1;
    }
    let total = corpus.train.len() + v;
    let mut bits = 0.0f64;
    for &c in held_out {
        let p = (counts[c] + 1) as f64 / total as f64;
        bits -= p.log2();
    }
    bits / held_out.len() as f64
}
