//! Byte-pair-encoding subword tokenizer over Unicode scalar values.
//!
//! Text is split on whitespace and each word is prefixed with the boundary
//! symbol [`WORD_START`], so merges never cross words and decoding can
//! restore the spaces.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Marks the start of a word.
pub const WORD_START: &str = "\u{2581}";

const FILE_HEADER: &str = "MFLVOCAB 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Number of unmasked positions, including the framing tokens.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

fn split_word(word: &str) -> Vec<String> {
    std::iter::once(WORD_START.to_string())
        .chain(word.chars().map(String::from))
        .collect()
}

fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let merged = format!("{left}{right}");
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl Vocab {
    fn with_specials() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
            merges: Vec::new(),
        };
        for s in SPECIALS {
            v.insert(s.to_string());
        }
        v
    }

    fn insert(&mut self, token: String) -> u32 {
        if let Some(&id) = self.ids.get(&token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// Learns `num_merges` merges from whitespace-split words of `corpus`.
    /// The most frequent adjacent pair wins; ties go to the lexicographically
    /// smallest pair. Training stops early once no pair remains.
    pub fn train(corpus: &[impl AsRef<str>], num_merges: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::config("cannot train a tokenizer on an empty corpus"));
        }
        let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for line in corpus {
            for word in line.as_ref().split_whitespace() {
                *word_counts.entry(word).or_default() += 1;
            }
        }

        let mut vocab = Vocab::with_specials();
        let mut alphabet: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        if !word_counts.is_empty() {
            vocab.insert(WORD_START.to_string());
        }
        for c in alphabet {
            vocab.insert(c.to_string());
        }

        let mut words: Vec<(Vec<String>, usize)> = word_counts
            .into_iter()
            .map(|(w, n)| (split_word(w), n))
            .collect();

        for _ in 0..num_merges {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (symbols, n) in &words {
                for w in symbols.windows(2) {
                    *pairs.entry((&w[0], &w[1])).or_default() += n;
                }
            }
            let best = pairs
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some(((left, right), _)) = best else {
                break;
            };
            let (left, right) = (left.to_string(), right.to_string());
            for (symbols, _) in &mut words {
                apply_merge(symbols, &left, &right);
            }
            vocab.insert(format!("{left}{right}"));
            vocab.merges.push((left, right));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Subword segmentation of one word, merges replayed in learned order.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = split_word(word);
        for (left, right) in &self.merges {
            if symbols.len() < 2 {
                break;
            }
            apply_merge(&mut symbols, left, right);
        }
        symbols
    }

    /// Subword ids of `text` without framing or padding.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .flat_map(|w| self.segment_word(w))
            .map(|s| self.id(&s).unwrap_or(UNK))
            .collect()
    }

    /// `[CLS] subwords… [SEP] [PAD]…` of exactly `max_len` ids. Subwords past
    /// `max_len - 2` are dropped before framing.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len < 3 {
            return Err(Error::Precondition(format!(
                "max_len must be at least 3, got {max_len}"
            )));
        }
        let mut body = self.tokenize(text);
        body.truncate(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend(body);
        ids.push(SEP);
        let real = ids.len();
        ids.resize(max_len, PAD);
        let mask = (0..max_len).map(|i| u8::from(i < real)).collect();
        Ok(TokenSequence { ids, mask })
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        for (&id, &m) in seq.ids.iter().zip(&seq.mask) {
            if m == 0 || id < SPECIALS.len() as u32 {
                continue;
            }
            if let Some(tok) = self.token(id) {
                out.push_str(tok);
            }
        }
        let spaced = out.replace(WORD_START, " ");
        spaced.strip_prefix(' ').unwrap_or(&spaced).to_string()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FILE_HEADER}");
        let _ = writeln!(s, "#TOKENS");
        for (id, tok) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{id}\t{tok}");
        }
        let _ = writeln!(s, "#MERGES");
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l}\t{r}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, why: &str| Error::Format(format!("vocab line {line}: {why}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, FILE_HEADER)) => {}
            _ => return Err(bad(1, "missing `MFLVOCAB 1` header")),
        }
        match lines.next() {
            Some((_, "#TOKENS")) => {}
            _ => return Err(bad(2, "expected #TOKENS")),
        }
        let mut vocab = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
            merges: Vec::new(),
        };
        let mut in_merges = false;
        for (i, line) in lines {
            let lineno = i + 1;
            if line == "#MERGES" {
                in_merges = true;
                continue;
            }
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| bad(lineno, "expected two tab-separated fields"))?;
            if in_merges {
                let merged = format!("{a}{b}");
                if !vocab.ids.contains_key(&merged) {
                    return Err(bad(lineno, "merge result is not a token"));
                }
                vocab.merges.push((a.to_string(), b.to_string()));
            } else {
                let id: u32 = a.parse().map_err(|_| bad(lineno, "invalid id"))?;
                if id as usize != vocab.tokens.len() {
                    return Err(bad(lineno, "ids must be dense and ascending"));
                }
                if vocab.ids.insert(b.to_string(), id).is_some() {
                    return Err(bad(lineno, "duplicate token"));
                }
                vocab.tokens.push(b.to_string());
            }
        }
        for (id, s) in SPECIALS.iter().enumerate() {
            if vocab.token(id as u32) != Some(s) {
                return Err(Error::Format(format!("special token {s} must have id {id}")));
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
