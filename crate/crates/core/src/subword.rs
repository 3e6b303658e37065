//! Frequency-built WordPiece-style vocabulary and greedy longest-match
//! tokenization with head truncation.

use std::collections::{BTreeSet, HashMap};

use crate::encoders::NarrativeView;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const CONTINUATION: &str = "##";
pub const DEFAULT_MAX_LEN: usize = 512;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    ids: HashMap<String, u32>,
    pub max_len: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Whole,
    Prefix,
    Continuation,
}

impl SubwordVocab {
    fn from_pieces(pieces: Vec<String>, max_len: usize) -> Result<Self> {
        if pieces.len() < 3 || pieces[0] != PAD || pieces[1] != UNK || pieces[2] != CLS {
            return Err(Error::Data(format!("vocabulary must start with {PAD}, {UNK}, {CLS}")));
        }
        let mut ids = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary piece {p:?} at line {}", i + 1)));
            }
            if ids.insert(p.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary piece {p:?}")));
            }
        }
        if max_len < 1 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        Ok(SubwordVocab { pieces, ids, max_len })
    }

    /// Builds a vocabulary of exactly `target_size` pieces (or fewer when the
    /// corpus runs out of candidates).
    pub fn build(corpus: &[NarrativeView], target_size: usize) -> Result<Self> {
        Self::build_from_texts(corpus.iter().map(|n| n.text.as_str()), target_size)
    }

    pub fn build_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Self> {
        let mut word_freq: HashMap<&str, usize> = HashMap::new();
        for t in texts {
            for w in t.split_whitespace() {
                *word_freq.entry(w).or_default() += 1;
            }
        }
        if word_freq.is_empty() {
            return Err(Error::Data("cannot build a subword vocabulary from an empty corpus".into()));
        }
        let chars: BTreeSet<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
        let mut pieces: Vec<String> = vec![PAD.into(), UNK.into(), CLS.into()];
        pieces.extend(chars.iter().map(|c| c.to_string()));
        pieces.extend(chars.iter().map(|c| format!("{CONTINUATION}{c}")));
        if target_size < pieces.len() {
            return Err(Error::Config(format!(
                "target vocabulary size {target_size} is below the {} specials and corpus characters",
                pieces.len()
            )));
        }

        let mut cand: HashMap<String, (usize, Kind)> = HashMap::new();
        let mut add = |piece: String, f: usize, kind: Kind| {
            let e = cand.entry(piece).or_insert((0, kind));
            e.0 += f;
            e.1 = e.1.min(kind);
        };
        for (w, &f) in &word_freq {
            let bounds: Vec<usize> = w.char_indices().map(|(i, _)| i).chain([w.len()]).collect();
            let n = bounds.len() - 1;
            if n >= 2 {
                add(w.to_string(), f, Kind::Whole);
            }
            for end in 2..n {
                add(w[..bounds[end]].to_string(), f, Kind::Prefix);
            }
            let mut seen = BTreeSet::new();
            for start in 1..n {
                for end in start + 2..=n {
                    let sub = &w[bounds[start]..bounds[end]];
                    if seen.insert(sub) {
                        add(format!("{CONTINUATION}{sub}"), f, Kind::Continuation);
                    }
                }
            }
        }
        let mut ranked: Vec<(String, (usize, Kind))> = cand.into_iter().collect();
        ranked.sort_by(|(pa, (fa, ka)), (pb, (fb, kb))| fb.cmp(fa).then(ka.cmp(kb)).then(pa.cmp(pb)));
        let room = target_size - pieces.len();
        pieces.extend(ranked.into_iter().take(room).map(|(p, _)| p));
        Self::from_pieces(pieces, DEFAULT_MAX_LEN)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.ids.contains_key(piece)
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len.max(1);
        self
    }

    /// Greedy longest-match segmentation of one word; `None` when some
    /// position has no matching piece.
    pub fn segment_word(&self, word: &str) -> Option<Vec<u32>> {
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let n = bounds.len() - 1;
        let mut out = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start < n {
            let mut found = None;
            for end in (start + 1..=n).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.id(&buf) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            out.push(id);
            start = end;
        }
        Some(out)
    }

    /// Untruncated pieces without `[CLS]`.
    pub fn tokenize_words(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            match self.segment_word(w) {
                Some(ids) => out.extend(ids),
                None => out.push(UNK_ID),
            }
        }
        out
    }

    /// `[CLS]` followed by word pieces, keeping the first `max_len` ids.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.max_len.min(1024));
        out.push(CLS_ID);
        for w in text.split_whitespace() {
            if out.len() >= self.max_len {
                break;
            }
            match self.segment_word(w) {
                Some(ids) => out.extend(ids),
                None => out.push(UNK_ID),
            }
        }
        out.truncate(self.max_len);
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.piece(i).unwrap_or(UNK)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str, max_len: usize) -> Result<Self> {
        let pieces: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_pieces(pieces, max_len)
    }
}

/// Rejoins pieces into words, dropping continuation markers.
pub fn detokenize(pieces: &[&str]) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for p in pieces {
        match p.strip_prefix(CONTINUATION) {
            Some(rest) if !words.is_empty() => words.last_mut().unwrap().push_str(rest),
            _ => words.push((*p).to_string()),
        }
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_vocab_and_frequency_order() {
        let v = SubwordVocab::build_from_texts(["heart failure heart"], 100).unwrap();
        assert_eq!(&v.pieces()[..3], &[PAD, UNK, CLS]);
        let base = 3 + 2 * 9;
        assert!(v.contains("##h") && v.contains("f"));
        let heart = v.id("heart").unwrap() as usize;
        assert!(heart >= base);
        assert!(v.id("failure").is_none_or(|f| f as usize > heart));
        assert!(v.id("fa").map_or(true, |f| f as usize > heart));
    }

    #[test]
    fn target_below_base_is_an_error() {
        assert!(matches!(
            SubwordVocab::build_from_texts(["heart failure"], 12),
            Err(Error::Config(_))
        ));
        assert!(SubwordVocab::build_from_texts(["  "], 100).is_err());
    }

    #[test]
    fn deterministic() {
        let t = ["abc abd abc", "xy abd"];
        assert_eq!(
            SubwordVocab::build_from_texts(t, 40).unwrap(),
            SubwordVocab::build_from_texts(t, 40).unwrap()
        );
    }

    fn fixed(pieces: &[&str]) -> SubwordVocab {
        let mut all: Vec<String> = vec![PAD.into(), UNK.into(), CLS.into()];
        all.extend(pieces.iter().map(|s| s.to_string()));
        SubwordVocab::from_pieces(all, DEFAULT_MAX_LEN).unwrap()
    }

    #[test]
    fn greedy_longest_match() {
        let mut p = vec!["fail", "##ure"];
        let chars = ["f", "a", "i", "l", "u", "r", "e"];
        p.extend(chars);
        let cont: Vec<String> = chars.iter().map(|c| format!("##{c}")).collect();
        p.extend(cont.iter().map(String::as_str));
        let v = fixed(&p);
        let ids = v.tokenize("failure");
        assert_eq!(v.decode(&ids), vec![CLS, "fail", "##ure"]);
        assert_eq!(v.decode(&v.tokenize("fail xq")), vec![CLS, "fail", UNK]);
    }

    #[test]
    fn truncates_to_max_len() {
        let v = fixed(&["a"]);
        let text = vec!["a"; 600].join(" ");
        assert_eq!(v.tokenize(&text).len(), 512);
        assert_eq!(v.tokenize_words(&text).len(), 600);
        assert_eq!(v.clone().with_max_len(5).tokenize(&text).len(), 5);
    }

    #[test]
    fn text_round_trip() {
        let v = SubwordVocab::build_from_texts(["heart failure, heart"], 60).unwrap();
        let back = SubwordVocab::from_text(&v.to_text(), DEFAULT_MAX_LEN).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), v.to_text());
        assert!(SubwordVocab::from_text("a\nb\n", 512).is_err());
    }

    #[test]
    fn detokenize_rejoins() {
        assert_eq!(detokenize(&["fail", "##ure", "heart"]), vec!["failure", "heart"]);
    }
}
