use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::vocab::{Token, Vocabulary};

/// Marks the first piece of a word.
pub const WORD_MARKER: char = '▁';

/// Deterministic greedy longest-match segmentation over a vocabulary's
/// pieces. Every character that may appear in a word must be a piece on its
/// own, and so must the bare marker.
#[derive(Debug, Clone)]
pub struct SubwordModel {
    pieces: HashMap<String, Token>,
    max_chars: usize,
    eos: Token,
}

impl SubwordModel {
    pub fn from_vocab(vocab: &Vocabulary) -> Result<Self> {
        let mut pieces = HashMap::new();
        for (id, tok) in vocab.tokens().iter().enumerate() {
            if id as Token != vocab.eos_id() {
                pieces.insert(tok.clone(), id as Token);
            }
        }
        if !pieces.contains_key(&WORD_MARKER.to_string()) {
            return Err(Error::InvalidVocabulary(format!("subword vocabulary lacks the bare marker {WORD_MARKER}")));
        }
        let max_chars = pieces.keys().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Self { pieces, max_chars, eos: vocab.eos_id() })
    }

    /// Surface words of a token sequence, in order.
    pub fn words(&self, seq: &[Token], vocab: &Vocabulary) -> Result<Vec<String>> {
        let text = self.surface(seq, vocab)?;
        Ok(text.split(WORD_MARKER).filter(|w| !w.is_empty()).map(str::to_string).collect())
    }

    /// Detokenized text with words separated by single spaces.
    pub fn detokenize(&self, seq: &[Token], vocab: &Vocabulary) -> Result<String> {
        Ok(self.words(seq, vocab)?.join(" "))
    }

    fn surface(&self, seq: &[Token], vocab: &Vocabulary) -> Result<String> {
        let mut text = String::new();
        for &tok in seq {
            if tok == self.eos {
                return Err(Error::UnknownToken(tok));
            }
            text.push_str(vocab.token(tok).ok_or(Error::UnknownToken(tok))?);
        }
        Ok(text)
    }

    /// Segments one word, marker included, by greedy longest match.
    pub fn segment_word(&self, word: &str) -> Result<Vec<Token>> {
        let marked: Vec<char> = std::iter::once(WORD_MARKER).chain(word.chars()).collect();
        self.segment_chars(&marked)
    }

    fn segment_chars(&self, chars: &[char]) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let longest = (1..=self.max_chars.min(chars.len() - i)).rev().find_map(|n| {
                let piece: String = chars[i..i + n].iter().collect();
                self.pieces.get(&piece).map(|&id| (id, n))
            });
            let (id, n) = longest
                .ok_or_else(|| Error::InvalidVocabulary(format!("character {:?} is not covered by any piece", chars[i])))?;
            out.push(id);
            i += n;
        }
        Ok(out)
    }

    /// Merges pieces back into words and re-splits them canonically. Text
    /// before the first marker is re-split without one.
    pub fn resplit(&self, seq: &[Token], vocab: &Vocabulary) -> Result<Vec<Token>> {
        let text = self.surface(seq, vocab)?;
        let mut out = Vec::new();
        for (i, chunk) in text.split(WORD_MARKER).enumerate() {
            let chars: Vec<char> = if i == 0 {
                chunk.chars().collect()
            } else {
                std::iter::once(WORD_MARKER).chain(chunk.chars()).collect()
            };
            out.extend(self.segment_chars(&chars)?);
        }
        Ok(out)
    }

    /// Canonical segmentation of whitespace-separated text.
    pub fn encode(&self, text: &str) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            out.extend(self.segment_word(word)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let toks = ["▁the", "▁ca", "t", "▁", "a", "c", "h", "e", "s", "</s>"];
        Vocabulary::new(toks.iter().map(|s| s.to_string()).collect(), 9).unwrap()
    }

    #[test]
    fn canonical_segmentation_is_unchanged() {
        let v = vocab();
        let m = SubwordModel::from_vocab(&v).unwrap();
        let seq = m.encode("the cat").unwrap();
        assert_eq!(seq, vec![0, 1, 2]);
        assert_eq!(m.resplit(&seq, &v).unwrap(), seq);
    }

    #[test]
    fn resplit_merges_and_preserves_surface() {
        let v = vocab();
        let m = SubwordModel::from_vocab(&v).unwrap();
        // "▁ t h e ▁ c a t s" spelled character by character
        let seq = vec![3, 2, 6, 7, 3, 5, 4, 2, 8];
        let once = m.resplit(&seq, &v).unwrap();
        assert_eq!(once, vec![0, 1, 2, 8]);
        assert_eq!(m.resplit(&once, &v).unwrap(), once);
        assert_eq!(m.detokenize(&once, &v).unwrap(), m.detokenize(&seq, &v).unwrap());
        assert_eq!(m.detokenize(&seq, &v).unwrap(), "the cats");
    }

    #[test]
    fn leading_fragment_stays_unmarked() {
        let v = vocab();
        let m = SubwordModel::from_vocab(&v).unwrap();
        let seq = vec![8, 0];
        assert_eq!(m.resplit(&seq, &v).unwrap(), seq);
    }

    #[test]
    fn unknown_tokens_fail() {
        let v = vocab();
        let m = SubwordModel::from_vocab(&v).unwrap();
        assert!(matches!(m.resplit(&[9], &v), Err(Error::UnknownToken(9))));
        assert!(matches!(m.resplit(&[42], &v), Err(Error::UnknownToken(42))));
    }

    #[test]
    fn uncovered_character_fails() {
        let v = vocab();
        let m = SubwordModel::from_vocab(&v).unwrap();
        assert!(m.encode("dog").is_err());
    }
}
