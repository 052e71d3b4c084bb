use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
    pub pad: TokenId,
    pub unk: TokenId,
}

impl SpecialTokens {
    pub fn contains(&self, id: TokenId) -> bool {
        id == self.cls || id == self.sep || id == self.mask || id == self.pad || id == self.unk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    /// Lowercased words; unknown words map to UNK.
    Word,
    /// Greedy longest-match subwords with `##` continuation pieces.
    WordPiece,
}

/// Vocabulary, special ids and truncation length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TokenizerData")]
pub struct Tokenizer {
    kind: TokenizerKind,
    vocab: Vec<String>,
    specials: SpecialTokens,
    max_length: usize,
    lowercase: bool,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

#[derive(Deserialize)]
struct TokenizerData {
    kind: TokenizerKind,
    vocab: Vec<String>,
    specials: SpecialTokens,
    max_length: usize,
    lowercase: bool,
}

impl TryFrom<TokenizerData> for Tokenizer {
    type Error = Error;

    fn try_from(d: TokenizerData) -> Result<Self> {
        let mut t = Tokenizer::from_list(d.kind, d.vocab, d.specials, d.max_length)?;
        t.lowercase = d.lowercase;
        Ok(t)
    }
}

impl Tokenizer {
    /// Builds from an explicit token→id map. Ids must be dense `0..len`.
    pub fn from_vocab(
        kind: TokenizerKind,
        map: &HashMap<String, TokenId>,
        specials: SpecialTokens,
        max_length: usize,
    ) -> Result<Self> {
        let mut vocab = vec![String::new(); map.len()];
        for (tok, &id) in map {
            let slot = vocab.get_mut(id as usize).ok_or_else(|| {
                Error::Config(format!(
                    "token id {id} is not dense in a vocabulary of {}",
                    map.len()
                ))
            })?;
            *slot = tok.clone();
        }
        Self::from_list(kind, vocab, specials, max_length)
    }

    fn from_list(
        kind: TokenizerKind,
        vocab: Vec<String>,
        specials: SpecialTokens,
        max_length: usize,
    ) -> Result<Self> {
        let mut t = Tokenizer {
            kind,
            vocab,
            specials,
            max_length,
            lowercase: true,
            index: HashMap::new(),
        };
        t.rebuild_index()?;
        t.validate()?;
        Ok(t)
    }

    /// Word-level vocabulary from texts: specials first, then words by
    /// descending frequency (ties alphabetical). Words seen fewer than
    /// `min_count` times are left to UNK.
    pub fn build_word_level<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        min_count: usize,
        max_length: usize,
    ) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in basic_split(text, true) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab: Vec<String> = [PAD, UNK, CLS, SEP, MASK]
            .iter()
            .map(|s| s.to_string())
            .collect();
        vocab.extend(
            words
                .into_iter()
                .map(|(w, _)| w)
                .filter(|w| !vocab_is_special(w)),
        );
        let specials = SpecialTokens {
            pad: 0,
            unk: 1,
            cls: 2,
            sep: 3,
            mask: 4,
        };
        Self::from_list(TokenizerKind::Word, vocab, specials, max_length)
    }

    /// Reads a one-token-per-line `vocab.txt` as shipped with BERT checkpoints.
    pub fn load_wordpiece(
        path: impl AsRef<Path>,
        max_length: usize,
        lowercase: bool,
    ) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: Vec<String> = raw
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        let find = |tok: &str| -> Result<TokenId> {
            vocab
                .iter()
                .position(|v| v == tok)
                .map(|i| i as TokenId)
                .ok_or_else(|| {
                    Error::Config(format!("{} lacks special token {tok}", path.display()))
                })
        };
        let specials = SpecialTokens {
            cls: find(CLS)?,
            sep: find(SEP)?,
            mask: find(MASK)?,
            pad: find(PAD)?,
            unk: find(UNK)?,
        };
        let mut t = Self::from_list(TokenizerKind::WordPiece, vocab, specials, max_length)?;
        t.lowercase = lowercase;
        Ok(t)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        self.index.clear();
        for (i, tok) in self.vocab.iter().enumerate() {
            if self.index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.specials;
        let ids = [s.cls, s.sep, s.mask, s.pad, s.unk];
        for (i, a) in ids.iter().enumerate() {
            if *a as usize >= self.vocab.len() {
                return Err(Error::Config(format!("special id {a} outside vocabulary")));
            }
            if ids[i + 1..].contains(a) {
                return Err(Error::Config(format!("special id {a} used twice")));
            }
        }
        if self.max_length < 2 {
            return Err(Error::Config(
                "max_length must leave room for CLS and SEP".into(),
            ));
        }
        Ok(())
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn specials(&self) -> SpecialTokens {
        self.specials
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// `[CLS] tokens... [SEP]`, truncated to `max_length`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let body_cap = self.max_length - 2;
        let mut ids = Vec::with_capacity(16);
        ids.push(self.specials.cls);
        'words: for word in basic_split(text, self.lowercase) {
            let pieces = match self.kind {
                TokenizerKind::Word => vec![self.id(&word).unwrap_or(self.specials.unk)],
                TokenizerKind::WordPiece => self.wordpiece(&word),
            };
            for p in pieces {
                if ids.len() - 1 == body_cap {
                    break 'words;
                }
                ids.push(p);
            }
        }
        ids.push(self.specials.sep);
        ids
    }

    fn wordpiece(&self, word: &str) -> Vec<TokenId> {
        const MAX_CHARS: usize = 100;
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_CHARS {
            return vec![self.specials.unk];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(id) = self.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => out.push(id),
                None => return vec![self.specials.unk],
            }
            start = end;
        }
        out
    }
}

fn vocab_is_special(w: &str) -> bool {
    matches!(w, PAD | UNK | CLS | SEP | MASK)
}

/// Whitespace split with punctuation broken out as separate tokens.
/// Accent stripping and CJK splitting of the reference BERT tokenizer are not
/// performed.
pub fn basic_split(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() || ch.is_control() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_ascii()) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else if lowercase {
            cur.extend(ch.to_lowercase());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
