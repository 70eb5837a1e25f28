use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Label id in `0..V`. The CTC blank is `V` and is never stored in a label sequence.
pub type Token = u32;

/// Ordered token inventory. Ids are line positions; the blank sits at `len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, Token>,
    eos_id: Token,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos_id: Token) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidVocabulary("no tokens".into()));
        }
        if eos_id as usize >= tokens.len() {
            return Err(Error::InvalidVocabulary(format!(
                "eos id {eos_id} out of range for {} tokens",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::InvalidVocabulary(format!("token {i} is empty")));
            }
            if index.insert(tok.clone(), i as Token).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index, eos_id })
    }

    /// Number of real tokens `V` (blank excluded).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_id(&self) -> Token {
        self.tokens.len() as Token
    }

    pub fn eos_id(&self) -> Token {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: Token) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<Token> {
        self.index.get(token).copied()
    }

    /// Checks that every id is a real (non-blank) token.
    pub fn check_sequence(&self, seq: &[Token]) -> Result<()> {
        match seq.iter().find(|&&t| t as usize >= self.len()) {
            Some(&t) => Err(Error::InvalidVocabulary(format!("label {t} is not a vocabulary token"))),
            None => Ok(()),
        }
    }

    /// Parses the line-oriented format: an optional `#eos <id>` header,
    /// then one token per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut eos = None;
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("#eos ") {
                if lineno != 0 || eos.is_some() {
                    return Err(Error::InvalidVocabulary("#eos header must be the first line".into()));
                }
                let id = rest
                    .trim()
                    .parse::<Token>()
                    .map_err(|e| Error::InvalidVocabulary(format!("bad eos id: {e}")))?;
                eos = Some(id);
                continue;
            }
            tokens.push(line.to_string());
        }
        let eos = eos.ok_or_else(|| Error::InvalidVocabulary("missing #eos header".into()))?;
        Self::new(tokens, eos)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#eos {}\n", self.eos_id);
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Vocabulary {
        Vocabulary::new(vec!["a".into(), "b".into(), "</s>".into()], 2).unwrap()
    }

    #[test]
    fn blank_is_last_index() {
        let v = abc();
        assert_eq!(v.blank_id(), 3);
        assert_eq!(v.eos_id(), 2);
        assert_eq!(v.id("b"), Some(1));
    }

    #[test]
    fn rejects_duplicates_empty_and_bad_eos() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], 0).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "".into()], 0).is_err());
        assert!(Vocabulary::new(vec!["a".into()], 1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let v = abc();
        let text = v.to_text();
        assert!(text.starts_with("#eos 2\n"));
        assert_eq!(Vocabulary::parse(&text).unwrap(), v);
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(Vocabulary::parse("a\nb\n").is_err());
    }

    #[test]
    fn blank_rejected_in_sequences() {
        let v = abc();
        assert!(v.check_sequence(&[0, 1, 2]).is_ok());
        assert!(v.check_sequence(&[0, 3]).is_err());
    }
}
