//! Uncased BERT preprocessing: vocabulary loading, basic pre-tokenization and
//! greedy longest-match-first WordPiece.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

pub type TokenId = u32;

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const PAD_TOKEN: &str = "[PAD]";

/// Words longer than this many characters map straight to the unknown token.
pub const MAX_INPUT_CHARS_PER_WORD: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("duplicate token `{token}` on line {line}")]
    Duplicate { token: String, line: usize },
    #[error("vocabulary is missing the special token `{0}`")]
    MissingSpecial(&'static str),
    #[error("failed to read vocabulary: {0}")]
    Io(#[from] std::io::Error),
}

/// A WordPiece vocabulary. Token ids are line numbers of the vocabulary file.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    cls_id: TokenId,
    sep_id: TokenId,
    mask_id: TokenId,
    unk_id: TokenId,
    pad_id: Option<TokenId>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (line, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), line as TokenId).is_some() {
                return Err(VocabError::Duplicate {
                    token: token.clone(),
                    line,
                });
            }
        }
        let special = |name: &'static str| index.get(name).copied().ok_or(VocabError::MissingSpecial(name));
        Ok(Vocab {
            cls_id: special(CLS_TOKEN)?,
            sep_id: special(SEP_TOKEN)?,
            mask_id: special(MASK_TOKEN)?,
            unk_id: special(UNK_TOKEN)?,
            pad_id: index.get(PAD_TOKEN).copied(),
            tokens,
            index,
        })
    }

    /// Parses the one-token-per-line vocabulary format.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        Self::from_tokens(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn cls_id(&self) -> TokenId {
        self.cls_id
    }

    pub fn sep_id(&self) -> TokenId {
        self.sep_id
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.cls_id
            || id == self.sep_id
            || id == self.mask_id
            || id == self.unk_id
            || Some(id) == self.pad_id
    }

    /// WordPiece-tokenizes one pre-tokenized word.
    pub fn wordpiece(&self, word: &str) -> TokenSeq {
        let mut out = TokenSeq::default();
        self.wordpiece_into(word, &mut out);
        out
    }

    fn wordpiece_into(&self, word: &str, out: &mut TokenSeq) {
        let unk = |out: &mut TokenSeq| out.push(self.unk_id, UNK_TOKEN.to_string());
        if word.chars().count() > MAX_INPUT_CHARS_PER_WORD {
            unk(out);
            return;
        }
        // char boundaries, including the end of the string
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start + 1 < bounds.len() {
            let mut found = None;
            for end in (start + 1..bounds.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str("##");
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push((id, candidate.clone()));
                    start = end;
                }
                None => {
                    unk(out);
                    return;
                }
            }
        }
        if pieces.is_empty() {
            unk(out);
            return;
        }
        for (id, s) in pieces {
            out.push(id, s);
        }
    }

    /// Basic tokenization followed by WordPiece, without [CLS]/[SEP] framing.
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let mut out = TokenSeq::default();
        for word in basic_tokenize(text) {
            self.wordpiece_into(&word, &mut out);
        }
        out
    }

    /// Returns the id of `word` when it survives tokenization as exactly one known token.
    pub fn single_token_id(&self, word: &str) -> Option<TokenId> {
        let words = basic_tokenize(word);
        if words.len() != 1 {
            return None;
        }
        let seq = self.wordpiece(&words[0]);
        match seq.ids.as_slice() {
            [id] if *id != self.unk_id => Some(*id),
            _ => None,
        }
    }
}

/// Token ids with their string forms. Continuation pieces keep the `##` prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub strings: Vec<String>,
}

impl TokenSeq {
    pub fn push(&mut self, id: TokenId, s: String) {
        self.ids.push(id);
        self.strings.push(s);
    }

    pub fn extend(&mut self, other: TokenSeq) {
        self.ids.extend(other.ids);
        self.strings.extend(other.strings);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Uncased BERT pre-tokenization: cleanup, CJK isolation, whitespace split,
/// lowercasing, accent stripping and punctuation splitting.
pub fn basic_tokenize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\0' || c == '\u{FFFD}' || is_control(c) {
            continue;
        }
        if is_cjk(c) {
            cleaned.push(' ');
            cleaned.push(c);
            cleaned.push(' ');
        } else if is_whitespace(c) {
            cleaned.push(' ');
        } else {
            cleaned.push(c);
        }
    }

    let mut words = Vec::new();
    for raw in cleaned.split(' ').filter(|w| !w.is_empty()) {
        let lowered = raw.to_lowercase();
        let stripped: String = lowered
            .nfd()
            .filter(|c| get_general_category(*c) != GeneralCategory::NonspacingMark)
            .collect();
        let mut current = String::new();
        for c in stripped.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

fn is_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r') || get_general_category(c) == GeneralCategory::SpaceSeparator
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    matches!(
        get_general_category(c),
        GeneralCategory::Control | GeneralCategory::Format
    )
}

fn is_punctuation(c: char) -> bool {
    let cp = c as u32;
    // ASCII symbols such as `$` and `^` are not Unicode punctuation but BERT splits them anyway.
    if (33..=47).contains(&cp) || (58..=64).contains(&cp) || (91..=96).contains(&cp) || (123..=126).contains(&cp) {
        return true;
    }
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}

fn is_cjk(c: char) -> bool {
    let cp = c as u32;
    (0x4E00..=0x9FFF).contains(&cp)
        || (0x3400..=0x4DBF).contains(&cp)
        || (0x20000..=0x2A6DF).contains(&cp)
        || (0x2A700..=0x2B73F).contains(&cp)
        || (0x2B740..=0x2B81F).contains(&cp)
        || (0x2B820..=0x2CEAF).contains(&cp)
        || (0xF900..=0xFAFF).contains(&cp)
        || (0x2F800..=0x2FA1F).contains(&cp)
}
