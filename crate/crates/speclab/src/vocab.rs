//! Vocabularies, tokens, and tokenization.
//!
//! Two vocabulary modes are supported:
//!
//! * **byte** — the fixed 256-symbol byte alphabet; token id equals byte
//!   value, so tokenization is a total function and `decode(tokenize(s))`
//!   is the identity for every byte string.
//! * **word** — whitespace-delimited words from a training corpus, with ids
//!   assigned in first-occurrence order. Tokenizing a word absent from the
//!   vocabulary is an error.
//!
//! Vocabularies persist as a versioned text map: a header line
//! `vocab v1 <mode> <size>` followed by one `id<TAB>symbol` pair per line
//! (byte mode writes the decimal byte value as the symbol).

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A token id, always less than the `size` of the vocabulary that produced
/// it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(pub u32);

/// An ordered sequence of tokens; may be empty.
pub type TokenSeq = Vec<Token>;

/// Which symbol alphabet a vocabulary uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    /// Fixed 256-symbol byte alphabet; id = byte value.
    Byte,
    /// Whitespace-delimited words, ids in first-occurrence order.
    Word,
}

impl VocabMode {
    /// Canonical lowercase name (`"byte"` / `"word"`).
    pub fn as_str(self) -> &'static str {
        match self {
            VocabMode::Byte => "byte",
            VocabMode::Word => "word",
        }
    }

    /// Parse a canonical mode name.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "byte" => Ok(VocabMode::Byte),
            "word" => Ok(VocabMode::Word),
            other => Err(Error::Persist(format!("unknown vocab mode {other:?}"))),
        }
    }
}

/// A bijection between token ids and symbols (bytes or words).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    mode: VocabMode,
    /// Symbol for each id, indexed by id.
    symbols: Vec<String>,
    /// Reverse map, word mode only (byte mode uses arithmetic).
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build a vocabulary from a corpus.
    ///
    /// Byte mode always yields the full 256-symbol alphabet; word mode
    /// yields one id per distinct whitespace-delimited word, in
    /// first-occurrence order. The corpus must contain at least one symbol.
    pub fn build(corpus: &[u8], mode: VocabMode) -> Result<Vocab> {
        match mode {
            VocabMode::Byte => {
                if corpus.is_empty() {
                    return Err(Error::EmptyCorpus);
                }
                Ok(Vocab::full_byte())
            }
            VocabMode::Word => {
                let text = String::from_utf8_lossy(corpus);
                let mut symbols = Vec::new();
                let mut index = HashMap::new();
                for word in text.split_whitespace() {
                    if !index.contains_key(word) {
                        index.insert(word.to_string(), symbols.len() as u32);
                        symbols.push(word.to_string());
                    }
                }
                if symbols.is_empty() {
                    return Err(Error::EmptyCorpus);
                }
                Ok(Vocab {
                    mode,
                    symbols,
                    index,
                })
            }
        }
    }

    /// The fixed byte-mode vocabulary (size 256, id = byte value).
    pub fn full_byte() -> Vocab {
        let symbols = (0u16..256).map(|b| b.to_string()).collect();
        Vocab {
            mode: VocabMode::Byte,
            symbols,
            index: HashMap::new(),
        }
    }

    /// Number of symbols.
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// The vocabulary's mode.
    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    /// Map raw bytes to a token sequence.
    ///
    /// Byte mode is total (id = byte value). Word mode splits on
    /// whitespace and fails with [`Error::UnknownSymbol`] on any word not
    /// in the vocabulary. Empty input yields an empty sequence.
    pub fn tokenize(&self, bytes: &[u8]) -> Result<TokenSeq> {
        match self.mode {
            VocabMode::Byte => Ok(bytes.iter().map(|&b| Token(b as u32)).collect()),
            VocabMode::Word => {
                let text = String::from_utf8_lossy(bytes);
                let mut out = Vec::new();
                for word in text.split_whitespace() {
                    match self.index.get(word) {
                        Some(&id) => out.push(Token(id)),
                        None => return Err(Error::UnknownSymbol(word.to_string())),
                    }
                }
                Ok(out)
            }
        }
    }

    /// Map a token sequence back to bytes. Byte mode inverts `tokenize`
    /// exactly; word mode joins words with single spaces.
    pub fn decode(&self, tokens: &[Token]) -> Result<Vec<u8>> {
        match self.mode {
            VocabMode::Byte => tokens
                .iter()
                .map(|t| {
                    if t.0 < 256 {
                        Ok(t.0 as u8)
                    } else {
                        Err(Error::UnknownSymbol(format!("token id {}", t.0)))
                    }
                })
                .collect(),
            VocabMode::Word => {
                let mut words = Vec::with_capacity(tokens.len());
                for t in tokens {
                    let sym = self
                        .symbols
                        .get(t.0 as usize)
                        .ok_or_else(|| Error::UnknownSymbol(format!("token id {}", t.0)))?;
                    words.push(sym.as_str());
                }
                Ok(words.join(" ").into_bytes())
            }
        }
    }

    /// Serialize to the versioned text-map format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vocab v1 {} {}", self.mode.as_str(), self.size());
        for (id, sym) in self.symbols.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{sym}");
        }
        out
    }

    /// Parse the versioned text-map format produced by [`Vocab::to_text`].
    /// `lines` must start at the header line; parsing consumes exactly
    /// `size + 1` lines and leaves the iterator positioned after them.
    pub fn from_lines<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Vocab> {
        let header = lines
            .next()
            .ok_or_else(|| Error::Persist("missing vocab header".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "vocab" {
            return Err(Error::Persist(format!("bad vocab header {header:?}")));
        }
        if parts[1] != "v1" {
            return Err(Error::Persist(format!(
                "unsupported vocab version {:?} (expected v1)",
                parts[1]
            )));
        }
        let mode = VocabMode::parse(parts[2])?;
        let size: usize = parts[3]
            .parse()
            .map_err(|_| Error::Persist(format!("bad vocab size {:?}", parts[3])))?;
        let mut symbols = Vec::with_capacity(size);
        let mut index = HashMap::new();
        for i in 0..size {
            let line = lines
                .next()
                .ok_or_else(|| Error::Persist(format!("vocab truncated at entry {i}")))?;
            let (id_str, sym) = line
                .split_once('\t')
                .ok_or_else(|| Error::Persist(format!("bad vocab line {line:?}")))?;
            let id: usize = id_str
                .parse()
                .map_err(|_| Error::Persist(format!("bad vocab id {id_str:?}")))?;
            if id != i {
                return Err(Error::Persist(format!(
                    "vocab ids out of order: {id} at row {i}"
                )));
            }
            if mode == VocabMode::Word {
                index.insert(sym.to_string(), i as u32);
            }
            symbols.push(sym.to_string());
        }
        let vocab = Vocab {
            mode,
            symbols,
            index,
        };
        if mode == VocabMode::Byte && vocab.size() != 256 {
            return Err(Error::Persist(format!(
                "byte vocab must have 256 entries, got {}",
                vocab.size()
            )));
        }
        Ok(vocab)
    }

    /// Parse a full serialized vocabulary string.
    pub fn from_text(text: &str) -> Result<Vocab> {
        Vocab::from_lines(&mut text.lines())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn test_tokenize_empty_is_empty() {
        let v = Vocab::full_byte();
        assert_eq!(v.tokenize(b"").unwrap(), Vec::<Token>::new());
    }

    #[test]
    fn test_byte_mode_is_identity_mapping() {
        let v = Vocab::full_byte();
        assert_eq!(v.tokenize(b"ab").unwrap(), vec![Token(97), Token(98)]);
        assert_eq!(v.size(), 256);
    }

    #[test]
    fn test_word_mode_first_occurrence_order() {
        let v = Vocab::build(b"a b a", VocabMode::Word).unwrap();
        assert_eq!(v.size(), 2);
        assert_eq!(
            v.tokenize(b"a b a").unwrap(),
            vec![Token(0), Token(1), Token(0)]
        );

        let v = Vocab::build(b"x y z x", VocabMode::Word).unwrap();
        assert_eq!(v.size(), 3);
    }

    #[test]
    fn test_word_mode_unknown_symbol_errors() {
        let v = Vocab::build(b"a b", VocabMode::Word).unwrap();
        let err = v.tokenize(b"a c").unwrap_err();
        assert!(matches!(err, Error::UnknownSymbol(w) if w == "c"));
    }

    #[test]
    fn test_empty_corpus_rejected() {
        assert!(matches!(
            Vocab::build(b"", VocabMode::Byte),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            Vocab::build(b"   ", VocabMode::Word),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn test_persistence_round_trip_byte_and_word() {
        for v in [
            Vocab::full_byte(),
            Vocab::build(b"the cat sat", VocabMode::Word).unwrap(),
        ] {
            let text = v.to_text();
            let back = Vocab::from_text(&text).unwrap();
            assert_eq!(v, back);
        }
    }

    #[test]
    fn test_persistence_rejects_wrong_version() {
        let text = "vocab v2 word 1\n0\ta\n";
        assert!(matches!(Vocab::from_text(text), Err(Error::Persist(_))));
    }

    proptest! {
        #[test]
        fn test_byte_round_trip_identity(s in proptest::collection::vec(any::<u8>(), 0..200)) {
            let v = Vocab::full_byte();
            let toks = v.tokenize(&s).unwrap();
            prop_assert_eq!(v.decode(&toks).unwrap(), s);
        }

        #[test]
        fn test_word_vocab_ids_dense_and_bijective(words in proptest::collection::vec("[a-z]{1,6}", 1..40)) {
            let corpus = words.join(" ");
            let v = Vocab::build(corpus.as_bytes(), VocabMode::Word).unwrap();
            let toks = v.tokenize(corpus.as_bytes()).unwrap();
            for t in &toks {
                prop_assert!((t.0 as usize) < v.size());
            }
            let decoded = v.decode(&toks).unwrap();
            let renorm: Vec<&str> = corpus.split_whitespace().collect();
            prop_assert_eq!(String::from_utf8(decoded).unwrap(), renorm.join(" "));
        }
    }
}
