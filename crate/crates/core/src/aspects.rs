//! Interpreting model-inferred aspects and mapping them onto gold aspects.
//!
//! Each model-inferred aspect (MIA) is described by the vocabulary words with
//! the largest inner product against its embedding. A person then assigns
//! every MIA to one gold-standard aspect or leaves it unmapped; the segment's
//! MIA distribution `β` is folded through that table into a gold-aspect
//! distribution `γ`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldAspects, Vocabulary};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::io_util::{create_file, open_file, read_to_string, write_atomic};
use crate::ops::{argmax, entropy};
use crate::scalar::Scalar;
use crate::sscl::SsclModel;

/// Label written for segments with no mapped aspect mass and no General aspect.
pub const UNKNOWN_LABEL: &str = "Unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectKeywords {
    pub aspect_index: usize,
    pub keywords: Vec<Keyword>,
}

/// Top `top_k` words per aspect by inner product `A_n · E_w`, ties broken by
/// vocabulary index.
pub fn top_keywords<T: Scalar>(
    aspects: &Array2<T>,
    word_embeddings: &EmbeddingMatrix<T>,
    vocabulary: &Vocabulary,
    top_k: usize,
) -> Result<Vec<AspectKeywords>> {
    ranked_keywords(aspects, word_embeddings, vocabulary, top_k, false)
}

/// Same as [`top_keywords`] but ranked by cosine similarity.
pub fn top_keywords_cosine<T: Scalar>(
    aspects: &Array2<T>,
    word_embeddings: &EmbeddingMatrix<T>,
    vocabulary: &Vocabulary,
    top_k: usize,
) -> Result<Vec<AspectKeywords>> {
    ranked_keywords(aspects, word_embeddings, vocabulary, top_k, true)
}

fn ranked_keywords<T: Scalar>(
    aspects: &Array2<T>,
    word_embeddings: &EmbeddingMatrix<T>,
    vocabulary: &Vocabulary,
    top_k: usize,
    cosine: bool,
) -> Result<Vec<AspectKeywords>> {
    if word_embeddings.rows() != vocabulary.len() {
        return Err(Error::ShapeMismatch {
            what: "word embeddings vs vocabulary",
            expected: vec![vocabulary.len()],
            found: vec![word_embeddings.rows()],
        });
    }
    if aspects.ncols() != word_embeddings.dim() {
        return Err(Error::DimensionMismatch { expected: word_embeddings.dim(), found: aspects.ncols() });
    }
    // G = A Eᵀ, N×V
    let mut scores = aspects.dot(&word_embeddings.data().t());
    if cosine {
        let word_norms: Vec<T> = word_embeddings.data().rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        for (n, mut row) in scores.rows_mut().into_iter().enumerate() {
            let an = aspects.row(n).dot(&aspects.row(n)).sqrt();
            for (v, &wn) in row.iter_mut().zip(&word_norms) {
                let denom = an * wn;
                *v = if denom > T::zero() { *v / denom } else { T::zero() };
            }
        }
    }
    let k = top_k.min(vocabulary.len());
    Ok(scores
        .rows()
        .into_iter()
        .enumerate()
        .map(|(n, row)| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            let keywords = idx[..k]
                .iter()
                .map(|&w| Keyword { token: vocabulary.words()[w].clone(), score: row[w].to_f64_lossy() })
                .collect();
            AspectKeywords { aspect_index: n, keywords }
        })
        .collect())
}

/// Canonical keywords.json serialization shared by the CLI and the server.
pub fn keywords_to_json(keywords: &[AspectKeywords]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(keywords)?;
    s.push('\n');
    Ok(s)
}

pub fn keywords_from_json(text: &str) -> Result<Vec<AspectKeywords>> {
    Ok(serde_json::from_str(text)?)
}

/// The selective mapping `f`: MIA index → gold aspect index, or unmapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    entries: Vec<Option<usize>>,
    gold: GoldAspects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingEntryFile {
    mia: usize,
    gsa: Option<String>,
    /// Read-only context for the person editing the file; ignored on load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingFile {
    gsa_names: Vec<String>,
    general: Option<String>,
    entries: Vec<MappingEntryFile>,
}

/// A partial update: set `mia` to `gsa` (a gold aspect name) or unmap it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEdit {
    pub mia: usize,
    pub gsa: Option<String>,
}

impl MappingTable {
    pub fn unmapped(n_aspects: usize, gold: GoldAspects) -> Self {
        Self { entries: vec![None; n_aspects], gold }
    }

    pub fn from_entries(entries: Vec<Option<usize>>, gold: GoldAspects) -> Result<Self> {
        if let Some(bad) = entries.iter().flatten().find(|&&g| g >= gold.len()) {
            return Err(Error::Schema(format!("mapping target {bad} outside {} gold aspects", gold.len())));
        }
        Ok(Self { entries, gold })
    }

    pub fn n_aspects(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Option<usize>] {
        &self.entries
    }

    pub fn gold(&self) -> &GoldAspects {
        &self.gold
    }

    pub fn get(&self, mia: usize) -> Option<usize> {
        self.entries.get(mia).copied().flatten()
    }

    pub fn mapped_count(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    /// Refuse inference unless at least one MIA is mapped.
    pub fn ensure_usable(&self) -> Result<()> {
        if self.mapped_count() == 0 {
            return Err(Error::NothingMapped);
        }
        Ok(())
    }

    /// Apply edits all-or-nothing.
    pub fn apply(&mut self, edits: &[MappingEdit]) -> Result<()> {
        let mut next = self.entries.clone();
        for e in edits {
            if e.mia >= next.len() {
                return Err(Error::Schema(format!("unknown MIA index {}", e.mia)));
            }
            next[e.mia] = match &e.gsa {
                None => None,
                Some(name) => {
                    Some(self.gold.index(name).ok_or_else(|| Error::Schema(format!("unknown gold aspect {name:?}")))?)
                }
            };
        }
        self.entries = next;
        Ok(())
    }

    /// Serialize to mapping.json; `keywords` (if given) are embedded per entry.
    pub fn to_json(&self, keywords: Option<&[AspectKeywords]>) -> Result<String> {
        let kw: HashMap<usize, Vec<String>> = keywords
            .unwrap_or_default()
            .iter()
            .map(|a| (a.aspect_index, a.keywords.iter().map(|k| k.token.clone()).collect()))
            .collect();
        let file = MappingFile {
            gsa_names: self.gold.names.clone(),
            general: self.gold.general_name().map(String::from),
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(mia, g)| MappingEntryFile {
                    mia,
                    gsa: g.map(|g| self.gold.names[g].clone()),
                    keywords: kw.get(&mia).cloned().unwrap_or_default(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    /// Parse mapping.json. Every MIA `0..N` must appear exactly once.
    pub fn from_json(text: &str, expected_aspects: Option<usize>) -> Result<Self> {
        let file: MappingFile = serde_json::from_str(text).map_err(|e| Error::Schema(format!("mapping.json: {e}")))?;
        let gold = GoldAspects::new(file.gsa_names, file.general.as_deref())?;
        let n = file.entries.len();
        if let Some(expected) = expected_aspects {
            if n != expected {
                return Err(Error::Schema(format!("mapping has {n} entries, model has {expected} aspects")));
            }
        }
        let mut entries: Vec<Option<Option<usize>>> = vec![None; n];
        for e in file.entries {
            if e.mia >= n {
                return Err(Error::Schema(format!("MIA index {} out of range 0..{n}", e.mia)));
            }
            if entries[e.mia].is_some() {
                return Err(Error::Schema(format!("MIA {} listed twice", e.mia)));
            }
            let target = match e.gsa {
                None => None,
                Some(name) => {
                    Some(gold.index(&name).ok_or_else(|| Error::Schema(format!("unknown gold aspect {name:?}")))?)
                }
            };
            entries[e.mia] = Some(target);
        }
        let entries = entries.into_iter().map(|e| e.expect("every index seen once")).collect();
        Ok(Self { entries, gold })
    }

    pub fn save(&self, path: &Path, keywords: Option<&[AspectKeywords]>) -> Result<()> {
        write_atomic(path, self.to_json(keywords)?.as_bytes())
    }

    pub fn load(path: &Path, expected_aspects: Option<usize>) -> Result<Self> {
        Self::from_json(&read_to_string(path)?, expected_aspects)
    }

    /// Reorder MIAs: entry `n` of the result is entry `perm[n]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { entries: perm.iter().map(|&p| self.entries[p]).collect(), gold: self.gold.clone() }
    }
}

/// Gold-aspect soft and hard label for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabel {
    /// Renormalized distribution over the K gold aspects.
    pub gamma: Vec<f64>,
    /// β mass per gold aspect before renormalization.
    pub raw_gamma: Vec<f64>,
    /// Hard label; `None` is the explicit Unknown label.
    pub y_hat: Option<usize>,
    /// Entropy of `gamma` in nats.
    pub entropy: f64,
    /// No β mass landed on a mapped aspect.
    pub unmappable: bool,
}

impl GoldLabel {
    /// Label for segments that cannot be scored: General when defined,
    /// otherwise Unknown, with a uniform (maximally uncertain) γ.
    pub fn degenerate(gold: &GoldAspects) -> Self {
        let k = gold.len();
        let gamma = vec![1.0 / k as f64; k];
        Self { entropy: entropy(&gamma), gamma, raw_gamma: vec![0.0; k], y_hat: gold.general, unmappable: true }
    }

    pub fn mapped_mass(&self) -> f64 {
        self.raw_gamma.iter().sum()
    }

    pub fn label_name<'a>(&self, gold: &'a GoldAspects) -> &'a str {
        self.y_hat.map_or(UNKNOWN_LABEL, |k| gold.names[k].as_str())
    }
}

/// Fold `β` through the mapping: `γ_k = Σ_{f(n)=k} β_n`, renormalized; hard
/// label is the lowest-index argmax.
pub fn aggregate_gamma<T: Scalar>(beta: &[T], mapping: &MappingTable) -> Result<GoldLabel> {
    if beta.len() != mapping.n_aspects() {
        return Err(Error::ShapeMismatch {
            what: "beta vs mapping",
            expected: vec![mapping.n_aspects()],
            found: vec![beta.len()],
        });
    }
    let k = mapping.gold().len();
    let mut raw = vec![0.0f64; k];
    for (b, target) in beta.iter().zip(mapping.entries()) {
        if let Some(g) = target {
            raw[*g] += b.to_f64_lossy();
        }
    }
    let mass: f64 = raw.iter().sum();
    if mass <= 0.0 || !mass.is_finite() {
        let mut label = GoldLabel::degenerate(mapping.gold());
        label.raw_gamma = raw;
        return Ok(label);
    }
    let gamma: Vec<f64> = raw.iter().map(|v| v / mass).collect();
    let y_hat = argmax(&gamma);
    Ok(GoldLabel { entropy: entropy(&gamma), gamma, raw_gamma: raw, y_hat, unmappable: false })
}

/// Teacher inference for one encoded segment.
pub fn infer_segment<T: Scalar>(tokens: &[usize], model: &SsclModel<T>, mapping: &MappingTable) -> Result<GoldLabel> {
    mapping.ensure_usable()?;
    if tokens.is_empty() {
        return Ok(GoldLabel::degenerate(mapping.gold()));
    }
    let beta = model.aspect_distribution(tokens)?;
    aggregate_gamma(beta.as_slice().expect("contiguous"), mapping)
}

pub fn infer_batch<T: Scalar>(
    segments: &[&[usize]],
    model: &SsclModel<T>,
    mapping: &MappingTable,
) -> Result<Vec<GoldLabel>> {
    segments.iter().map(|s| infer_segment(s, model, mapping)).collect()
}

/// For each MIA, the `m` segments with the highest `β_n`, as `(segment
/// position, β_n)` in non-increasing order.
pub fn example_segments<T: Scalar>(betas: &[Array1<T>], n_aspects: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    (0..n_aspects)
        .map(|n| {
            let mut scored: Vec<(usize, f64)> =
                betas.iter().enumerate().map(|(i, b)| (i, b[n].to_f64_lossy())).collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
            scored.truncate(m);
            scored
        })
        .collect()
}

/// Scripted mapping from a word → gold-aspect lexicon: an MIA is mapped to a
/// gold aspect when at least `min_share` of its keywords belong to it;
/// otherwise it is left unmapped.
pub fn mapping_from_lexicon(
    keywords: &[AspectKeywords],
    lexicon: &BTreeMap<String, String>,
    gold: &GoldAspects,
    min_share: f64,
) -> Result<MappingTable> {
    let mut entries = vec![None; keywords.len()];
    for a in keywords {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for kw in &a.keywords {
            if let Some(name) = lexicon.get(&kw.token) {
                let g =
                    gold.index(name).ok_or_else(|| Error::Schema(format!("lexicon names unknown aspect {name:?}")))?;
                *votes.entry(g).or_default() += 1;
            }
        }
        let total = a.keywords.len().max(1) as f64;
        if let Some((&g, &count)) = votes.iter().max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0))) {
            if count as f64 / total >= min_share {
                entries[a.aspect_index] = Some(g);
            }
        }
    }
    MappingTable::from_entries(entries, gold.clone())
}

/// Read a `token<TAB>aspect` lexicon.
pub fn read_lexicon(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in open_file(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (tok, asp) = line.split_once('\t').ok_or(Error::Parse {
            what: "lexicon",
            line: n + 1,
            msg: "expected token<TAB>aspect".into(),
        })?;
        out.insert(tok.to_string(), asp.to_string());
    }
    Ok(out)
}

/// One row of predictions.tsv.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub segment_id: String,
    pub label: GoldLabel,
}

/// predictions.tsv: header, then `segment_id, y_hat name, entropy, γ_1..γ_K`.
pub fn write_predictions(path: &Path, predictions: &[Prediction], gold: &GoldAspects) -> Result<()> {
    let mut f = create_file(path)?;
    let io = |e| Error::io(path, e);
    writeln!(f, "segment_id\ty_hat\tentropy\t{}", gold.names.join("\t")).map_err(io)?;
    for p in predictions {
        let gammas: Vec<String> = p.label.gamma.iter().map(|g| g.to_string()).collect();
        writeln!(f, "{}\t{}\t{}\t{}", p.segment_id, p.label.label_name(gold), p.label.entropy, gammas.join("\t"))
            .map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Rows of predictions.tsv as `(segment_id, y_hat, entropy, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub segment_id: String,
    pub y_hat: Option<usize>,
    pub entropy: f64,
    pub gamma: Vec<f64>,
}

pub fn read_predictions(path: &Path, gold: &GoldAspects) -> Result<Vec<PredictionRow>> {
    let mut lines = open_file(path)?.lines();
    let header = lines.next().ok_or(Error::Parse { what: "predictions", line: 1, msg: "missing header".into() })?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let expected = format!("segment_id\ty_hat\tentropy\t{}", gold.names.join("\t"));
    if header != expected {
        return Err(Error::Schema(format!("predictions header {header:?} does not match gold aspects")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { what: "predictions", line: n + 2, msg: msg.to_string() };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 + gold.len() {
            return Err(bad("wrong column count"));
        }
        let y_hat = match cols[1] {
            UNKNOWN_LABEL if gold.index(UNKNOWN_LABEL).is_none() => None,
            name => Some(gold.index(name).ok_or_else(|| bad("unknown aspect name"))?),
        };
        let entropy = cols[2].parse().map_err(|_| bad("bad entropy"))?;
        let gamma = cols[3..].iter().map(|v| v.parse::<f64>().map_err(|_| bad("bad gamma"))).collect::<Result<_>>()?;
        rows.push(PredictionRow { segment_id: cols[0].to_string(), y_hat, entropy, gamma });
    }
    Ok(rows)
}
