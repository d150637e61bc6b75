//! Token inventory with the three reserved entries every model shares.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Token id into a [`Vocabulary`].
pub type TokenId = usize;

/// CTC blank symbol.
pub const BLANK: TokenId = 0;
/// Shared start/stop token for the decoder.
pub const SOS_EOS: TokenId = 1;
/// Unknown token.
pub const UNK: TokenId = 2;

const RESERVED: [&str; 3] = ["<blank>", "<sos/eos>", "<unk>"];

/// Immutable, contiguous token table. Index 0 is blank, 1 the shared
/// sos/eos, 2 the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from the regular (non-reserved) tokens.
    pub fn with_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_lines(all)
    }

    fn from_lines(lines: Vec<String>) -> Result<Self> {
        if lines.len() < RESERVED.len() {
            return Err(Error::Vocab(format!(
                "vocabulary must start with the reserved tokens {RESERVED:?}"
            )));
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if lines[i] != *want {
                return Err(Error::Vocab(format!(
                    "reserved token at index {i} must be '{want}', found '{}'",
                    lines[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(lines.len());
        for (i, tok) in lines.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Vocab(format!("empty token at index {i}")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token '{tok}'")));
            }
        }
        Ok(Vocabulary {
            tokens: lines,
            index,
        })
    }

    /// Reads a vocabulary file: UTF-8 text, one token per line, line number
    /// equals token index, lines 0-2 the reserved tokens.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let tok = line.trim_end_matches(['\r', '\n']);
            if tok.is_empty() {
                return Err(Error::Format {
                    line: n + 1,
                    msg: format!("empty vocabulary line in {}", path.display()),
                });
            }
            lines.push(tok.to_string());
        }
        Self::from_lines(lines)
    }

    /// Writes the vocabulary in the one-token-per-line format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id lookup that rejects unknown tokens.
    pub fn require(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .ok_or_else(|| Error::Vocab(format!("token '{token}' not in vocabulary")))
    }

    /// Converts whitespace-separated token text, erroring on unknown tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|t| self.require(t)).collect()
    }

    /// Renders ids back to a space-separated string.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_vocab(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_plain_file() {
        let f = write_vocab(&["<blank>", "<sos/eos>", "<unk>", "a", "b"]);
        let v = Vocabulary::load(f.path()).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.token(4), Some("b"));
        assert_eq!(v.id("<blank>"), Some(BLANK));
        assert_eq!(v.id("<sos/eos>"), Some(SOS_EOS));
    }

    #[test]
    fn duplicate_token_is_error() {
        let f = write_vocab(&["<blank>", "<sos/eos>", "<unk>", "a", "a"]);
        assert!(Vocabulary::load(f.path()).is_err());
    }

    #[test]
    fn empty_file_is_error() {
        let f = write_vocab(&[]);
        assert!(Vocabulary::load(f.path()).is_err());
    }

    #[test]
    fn reserved_tokens_must_match() {
        let f = write_vocab(&["<blank>", "<eos>", "<unk>", "a"]);
        assert!(Vocabulary::load(f.path()).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::with_tokens(["a", "b", "c"]).unwrap();
        let ids = v.encode("a c b").unwrap();
        assert_eq!(ids, vec![3, 5, 4]);
        assert_eq!(v.decode(&ids), "a c b");
        assert!(v.encode("a z").is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = Vocabulary::with_tokens(["x", "y"]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        assert_eq!(Vocabulary::load(f.path()).unwrap(), v);
    }
}
