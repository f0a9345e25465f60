//! Text normalization, vocabulary construction and segment encoding.
//!
//! Segments arrive already split (one sentence or discourse unit per line).
//! The teacher path lowercases, strips punctuation, drops stopwords and rare
//! words; the student path reuses the same tokenizer with stopword removal
//! turned off.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{create_file, open_file};

const BUILTIN_STOPWORDS: &str = include_str!("stopwords.txt");

/// Token normalization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub lowercase: bool,
    pub remove_stopwords: bool,
    /// Rule-based plural / verb-ending normalization.
    pub normalize_suffixes: bool,
    pub stopwords: BTreeSet<String>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { lowercase: true, remove_stopwords: true, normalize_suffixes: false, stopwords: builtin_stopwords() }
    }
}

impl PreprocessOptions {
    /// Tokenization for the student encoder: punctuation stripped, stopwords kept.
    pub fn minimal() -> Self {
        Self { remove_stopwords: false, ..Self::default() }
    }

    /// Replace the stopword list with the words in `path`, one per line.
    pub fn with_stopword_file(mut self, path: &Path) -> Result<Self> {
        let reader = open_file(path)?;
        let mut words = BTreeSet::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let w = line.trim();
            if !w.is_empty() && !w.starts_with('#') {
                words.insert(w.to_lowercase());
            }
        }
        self.stopwords = words;
        Ok(self)
    }
}

pub fn builtin_stopwords() -> BTreeSet<String> {
    BUILTIN_STOPWORDS.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
}

/// Normalize raw text into a token list. An empty result is legal.
pub fn preprocess(raw_text: &str, options: &PreprocessOptions) -> Vec<String> {
    let mut cleaned = String::with_capacity(raw_text.len());
    for ch in raw_text.chars() {
        if ch.is_alphanumeric() {
            if options.lowercase {
                cleaned.extend(ch.to_lowercase());
            } else {
                cleaned.push(ch);
            }
        } else if ch == '\'' || ch == '\u{2019}' {
            // apostrophes join: "don't" -> "dont"
        } else {
            cleaned.push(' ');
        }
    }
    cleaned
        .split_whitespace()
        .filter(|w| !(options.remove_stopwords && options.stopwords.contains(*w)))
        .map(|w| if options.normalize_suffixes { normalize_suffix(w) } else { w.to_string() })
        .filter(|w| !(options.remove_stopwords && options.stopwords.contains(w.as_str())))
        .collect()
}

/// Strip common English inflections. Deliberately conservative: short words
/// and words without a vowel in the remaining stem are left alone.
pub fn normalize_suffix(word: &str) -> String {
    let has_vowel = |s: &str| s.chars().any(|c| "aeiouy".contains(c));
    let n = word.chars().count();
    if !word.is_ascii() || n <= 3 {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if n > 4 {
            return format!("{stem}y");
        }
    }
    if word.ends_with("sses") {
        return word[..word.len() - 2].to_string();
    }
    if let Some(stem) = word.strip_suffix("ing") {
        if n > 5 && has_vowel(stem) {
            return stem.to_string();
        }
    }
    if let Some(stem) = word.strip_suffix("ed") {
        if n > 4 && has_vowel(stem) {
            return stem.to_string();
        }
    }
    if word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Dense token index space `0..V`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_index: HashMap<String, usize>,
    index_to_word: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Keep tokens with frequency ≥ `min_count`, ordered by descending
    /// frequency with lexicographic tie-breaking.
    pub fn build<I, S>(token_lists: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut any = false;
        for list in token_lists {
            for tok in list.as_ref() {
                any = true;
                *freq.entry(tok.as_ref().to_string()).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(String, u64)> = freq.into_iter().filter(|(_, c)| *c >= min_count).collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_entries(kept))
    }

    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let mut word_to_index = HashMap::with_capacity(entries.len());
        let mut index_to_word = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (i, (w, c)) in entries.into_iter().enumerate() {
            word_to_index.insert(w.clone(), i);
            index_to_word.push(w);
            counts.push(c);
        }
        Self { word_to_index, index_to_word, counts }
    }

    pub fn len(&self) -> usize {
        self.index_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_word.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.word_to_index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.index_to_word.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.index_to_word
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Map tokens to indices, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.index(t.as_ref())).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().filter_map(|&i| self.word(i)).map(String::from).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (w, c)) in self.index_to_word.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{i}\t{w}\t{c}\n"));
        }
        out
    }

    /// SHA-256 of the TSV serialization; identifies the index space in checkpoints.
    pub fn hash(&self) -> String {
        crate::io_util::sha256_hex(self.to_tsv().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = create_file(path)?;
        f.write_all(self.to_tsv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = open_file(path)?;
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { what: "vocabulary", line: n + 1, msg: msg.to_string() };
            let mut parts = line.split('\t');
            let (Some(idx), Some(word), Some(count), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected index<TAB>token<TAB>count"));
            };
            let idx: usize = idx.parse().map_err(|_| bad("bad index"))?;
            if idx != entries.len() {
                return Err(bad("indices must be dense and ascending"));
            }
            let count: u64 = count.parse().map_err(|_| bad("bad count"))?;
            entries.push((word.to_string(), count));
        }
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary { min_count: 0 });
        }
        Ok(Self::from_entries(entries))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// A raw input segment before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub segment_id: String,
    pub split: Split,
    pub text: String,
    pub gold_aspect: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: String,
    pub split: Split,
    pub tokens: Vec<usize>,
    pub raw_text: String,
    pub gold_aspect: Option<usize>,
}

/// Ordered gold-standard aspect names, with at most one flagged General.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAspects {
    pub names: Vec<String>,
    pub general: Option<usize>,
}

impl GoldAspects {
    pub fn new(names: Vec<String>, general: Option<&str>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate gold aspect name {n:?}")));
            }
        }
        let general = match general {
            None => None,
            Some(g) => Some(
                names
                    .iter()
                    .position(|n| n == g)
                    .ok_or_else(|| Error::Schema(format!("General aspect {g:?} is not among the gold aspects")))?,
            ),
        };
        if names.is_empty() {
            return Err(Error::Schema("no gold aspects".into()));
        }
        Ok(Self { names, general })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn general_name(&self) -> Option<&str> {
        self.general.map(|g| self.names[g].as_str())
    }
}

/// A segment removed from training because nothing survived preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Quarantined {
    pub segment_id: String,
    pub split: Split,
    pub raw_text: String,
    pub gold_aspect: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CorpusBundle {
    pub vocabulary: Vocabulary,
    pub segments: Vec<Segment>,
    pub quarantine: Vec<Quarantined>,
    pub gold_aspects: GoldAspects,
}

impl CorpusBundle {
    /// Preprocess, build the vocabulary over the train split, and encode every split.
    pub fn build(
        raw: &[RawSegment],
        gold_aspects: GoldAspects,
        options: &PreprocessOptions,
        min_count: u64,
    ) -> Result<Self> {
        let tokenized: Vec<Vec<String>> = raw.iter().map(|r| preprocess(&r.text, options)).collect();
        let vocabulary = Vocabulary::build(
            raw.iter().zip(&tokenized).filter(|(r, _)| r.split == Split::Train).map(|(_, t)| t.as_slice()),
            min_count,
        )?;
        let (segments, quarantine) = encode_segments(&vocabulary, &gold_aspects, raw, &tokenized)?;
        Ok(Self { vocabulary, segments, quarantine, gold_aspects })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.split == split)
    }
}

/// Encode tokenized segments; OOV tokens are dropped and segments left empty
/// are routed to the quarantine list.
pub fn encode_segments(
    vocabulary: &Vocabulary,
    gold_aspects: &GoldAspects,
    raw: &[RawSegment],
    tokenized: &[Vec<String>],
) -> Result<(Vec<Segment>, Vec<Quarantined>)> {
    if raw.len() != tokenized.len() {
        return Err(Error::InvalidArgument("raw and tokenized segment counts differ".into()));
    }
    let mut segments = Vec::with_capacity(raw.len());
    let mut quarantine = Vec::new();
    for (r, toks) in raw.iter().zip(tokenized) {
        let gold_aspect = match &r.gold_aspect {
            None => None,
            Some(name) => Some(
                gold_aspects
                    .index(name)
                    .ok_or_else(|| Error::Schema(format!("segment {}: unknown gold aspect {name:?}", r.segment_id)))?,
            ),
        };
        let tokens = vocabulary.encode(toks);
        if tokens.is_empty() {
            quarantine.push(Quarantined {
                segment_id: r.segment_id.clone(),
                split: r.split,
                raw_text: r.text.clone(),
                gold_aspect,
            });
        } else {
            segments.push(Segment {
                segment_id: r.segment_id.clone(),
                split: r.split,
                tokens,
                raw_text: r.text.clone(),
                gold_aspect,
            });
        }
    }
    Ok((segments, quarantine))
}

/// Read unlabeled segments, one per line. Ids are `<prefix>-<line number>`.
pub fn read_unlabeled(path: &Path, split: Split, prefix: &str) -> Result<Vec<RawSegment>> {
    let reader = open_file(path)?;
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        out.push(RawSegment { segment_id: format!("{prefix}-{}", n + 1), split, text: line, gold_aspect: None });
    }
    Ok(out)
}

/// Read `segment_id<TAB>gold_aspect_name<TAB>text` records.
pub fn read_labeled(path: &Path, split: Split) -> Result<Vec<RawSegment>> {
    let reader = open_file(path)?;
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(gold), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                what: "labeled segments",
                line: n + 1,
                msg: "expected segment_id<TAB>aspect<TAB>text".into(),
            });
        };
        out.push(RawSegment {
            segment_id: id.to_string(),
            split,
            text: text.to_string(),
            gold_aspect: Some(gold.to_string()),
        });
    }
    Ok(out)
}

/// Encoded corpus record file: `segment_id<TAB>split<TAB>space-separated indices`.
pub fn write_encoded(path: &Path, segments: &[Segment]) -> Result<()> {
    let mut f = create_file(path)?;
    for s in segments {
        let idx: Vec<String> = s.tokens.iter().map(|t| t.to_string()).collect();
        writeln!(f, "{}\t{}\t{}", s.segment_id, s.split, idx.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// One record of the encoded corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRecord {
    pub segment_id: String,
    pub split: Split,
    pub tokens: Vec<usize>,
}

pub fn read_encoded(path: &Path) -> Result<Vec<EncodedRecord>> {
    let reader = open_file(path)?;
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { what: "encoded corpus", line: n + 1, msg: msg.to_string() };
        let mut parts = line.split('\t');
        let (Some(id), Some(split), Some(toks), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected segment_id<TAB>split<TAB>indices"));
        };
        let split = split.parse().map_err(|_| bad("bad split"))?;
        let tokens = toks
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad("bad token index")))
            .collect::<Result<Vec<_>>>()?;
        out.push(EncodedRecord { segment_id: id.to_string(), split, tokens });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn preprocess_examples() {
        let opts = PreprocessOptions::default();
        assert_eq!(preprocess("Good picture.", &opts), vec!["good", "picture"]);
        assert!(preprocess("", &opts).is_empty());
        assert!(preprocess("The the the", &opts).is_empty());
        assert_eq!(preprocess("Sizes: 32 42, 37!", &opts), vec!["sizes", "32", "42", "37"]);
        assert_eq!(preprocess("don't", &PreprocessOptions::minimal()), vec!["dont"]);
    }

    #[test]
    fn suffix_normalizer() {
        assert_eq!(normalize_suffix("speakers"), "speaker");
        assert_eq!(normalize_suffix("batteries"), "battery");
        assert_eq!(normalize_suffix("streaming"), "stream");
        assert_eq!(normalize_suffix("contacted"), "contact");
        assert_eq!(normalize_suffix("glass"), "glass");
        assert_eq!(normalize_suffix("bus"), "bus");
        let opts = PreprocessOptions { normalize_suffixes: true, ..Default::default() };
        assert_eq!(preprocess("Great speakers", &opts), vec!["great", "speaker"]);
    }

    #[test]
    fn vocabulary_threshold() {
        let mut lists = vec![toks("sound"); 12];
        lists.extend(vec![toks("zzz"); 3]);
        let v = Vocabulary::build(&lists, 10).unwrap();
        assert!(v.index("sound").is_some());
        assert!(v.index("zzz").is_none());
        assert_eq!(v.len(), 1);

        let v = Vocabulary::build([toks("a b")], 1).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn vocabulary_order_and_errors() {
        let v = Vocabulary::build([toks("b a c c a d")], 1).unwrap();
        assert_eq!(v.words(), &["a", "c", "b", "d"]);
        assert_eq!(v.counts(), &[2, 2, 1, 1]);
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.index(w), Some(i));
        }
        assert!(matches!(Vocabulary::build([toks("a")], 2), Err(Error::EmptyVocabulary { .. })));
        assert!(matches!(Vocabulary::build(Vec::<Vec<String>>::new(), 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn encode_and_quarantine() {
        let v = Vocabulary::build([toks("good picture good picture")], 1).unwrap();
        let gold = GoldAspects::new(vec!["Image".into()], None).unwrap();
        let raw = vec![
            RawSegment { segment_id: "s1".into(), split: Split::Train, text: "good picture".into(), gold_aspect: None },
            RawSegment { segment_id: "s2".into(), split: Split::Train, text: "zzz".into(), gold_aspect: None },
            RawSegment {
                segment_id: "s3".into(),
                split: Split::Dev,
                text: "good zzz".into(),
                gold_aspect: Some("Image".into()),
            },
        ];
        let tokenized: Vec<_> = raw.iter().map(|r| toks(&r.text)).collect();
        let (segs, quarantine) = encode_segments(&v, &gold, &raw, &tokenized).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].tokens, vec![v.index("good").unwrap(), v.index("picture").unwrap()]);
        assert_eq!(segs[1].tokens, vec![v.index("good").unwrap()]);
        assert_eq!(segs[1].gold_aspect, Some(0));
        assert_eq!(quarantine.len(), 1);
        assert_eq!(quarantine[0].segment_id, "s2");
    }

    #[test]
    fn unknown_gold_name_is_schema_error() {
        let v = Vocabulary::build([toks("a")], 1).unwrap();
        let gold = GoldAspects::new(vec!["Price".into()], None).unwrap();
        let raw = vec![RawSegment {
            segment_id: "x".into(),
            split: Split::Dev,
            text: "a".into(),
            gold_aspect: Some("Pricey".into()),
        }];
        assert!(matches!(encode_segments(&v, &gold, &raw, &[toks("a")]), Err(Error::Schema(_))));
    }

    #[test]
    fn general_flag() {
        let g = GoldAspects::new(vec!["Sound".into(), "General".into()], Some("General")).unwrap();
        assert_eq!(g.general, Some(1));
        assert!(GoldAspects::new(vec!["Sound".into()], Some("General")).is_err());
    }
}
