//! On-disk layout of a working directory and the prepared-corpus store
//! shared by the command-line tool and the mapping server.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusBundle, GoldAspects, Quarantined, Segment, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn vocabulary(&self) -> PathBuf {
        self.root.join("corpus/vocab.tsv")
    }

    pub fn segments(&self) -> PathBuf {
        self.root.join("corpus/segments.jsonl")
    }

    pub fn encoded(&self) -> PathBuf {
        self.root.join("corpus/encoded.tsv")
    }

    pub fn quarantine(&self) -> PathBuf {
        self.root.join("corpus/quarantine.jsonl")
    }

    pub fn gold_aspects(&self) -> PathBuf {
        self.root.join("corpus/aspects.json")
    }

    pub fn word_vectors(&self) -> PathBuf {
        self.root.join("embeddings/vectors.txt")
    }

    pub fn initial_aspects(&self) -> PathBuf {
        self.root.join("aspects/initial.txt")
    }

    pub fn teacher(&self) -> PathBuf {
        self.root.join("teacher/teacher.json")
    }

    pub fn keywords(&self) -> PathBuf {
        self.root.join("keywords.json")
    }

    pub fn mapping(&self) -> PathBuf {
        self.root.join("mapping.json")
    }

    pub fn audit_log(&self) -> PathBuf {
        self.root.join("mapping.audit.jsonl")
    }

    pub fn labels(&self, split: Split) -> PathBuf {
        self.root.join(format!("labels/{split}.tsv"))
    }

    pub fn student(&self) -> PathBuf {
        self.root.join("student/student.json")
    }

    pub fn student_vocabulary(&self) -> PathBuf {
        self.root.join("student/vocab.tsv")
    }

    pub fn student_predictions(&self, split: Split) -> PathBuf {
        self.root.join(format!("student/{split}.tsv"))
    }

    pub fn evaluation(&self, name: &str) -> PathBuf {
        self.root.join(format!("eval/{name}.json"))
    }

    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation/results.tsv")
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.root.join(format!("manifests/{stage}.json"))
    }

    pub fn lock_file(&self) -> PathBuf {
        self.root.join(".sscl.lock")
    }

    pub fn static_dir(&self) -> PathBuf {
        self.root.join("static")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    segment_id: String,
    split: Split,
    tokens: Vec<usize>,
    text: String,
    gold_aspect: Option<String>,
}

fn jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", serde_json::to_string(&r)?);
    }
    Ok(out)
}

/// Write vocabulary, gold aspects, segments (with raw text), the encoded
/// index file and the quarantine list.
pub fn save_bundle(ws: &Workspace, bundle: &CorpusBundle) -> Result<()> {
    let name = |g: Option<usize>| g.map(|k| bundle.gold_aspects.names[k].clone());
    bundle.vocabulary.save(&ws.vocabulary())?;
    write_atomic(&ws.gold_aspects(), (serde_json::to_string_pretty(&bundle.gold_aspects)? + "\n").as_bytes())?;
    let segments = jsonl(bundle.segments.iter().map(|s| SegmentRecord {
        segment_id: s.segment_id.clone(),
        split: s.split,
        tokens: s.tokens.clone(),
        text: s.raw_text.clone(),
        gold_aspect: name(s.gold_aspect),
    }))?;
    write_atomic(&ws.segments(), segments.as_bytes())?;
    crate::corpus::write_encoded(&ws.encoded(), &bundle.segments)?;
    let quarantine = jsonl(bundle.quarantine.iter().map(|q| SegmentRecord {
        segment_id: q.segment_id.clone(),
        split: q.split,
        tokens: Vec::new(),
        text: q.raw_text.clone(),
        gold_aspect: name(q.gold_aspect),
    }))?;
    write_atomic(&ws.quarantine(), quarantine.as_bytes())
}

pub fn load_gold_aspects(path: &Path) -> Result<GoldAspects> {
    let gold: GoldAspects =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if gold.general.is_some_and(|g| g >= gold.len()) {
        return Err(Error::Schema(format!("{}: General index out of range", path.display())));
    }
    GoldAspects::new(gold.names.clone(), gold.general_name())
}

fn read_records(path: &Path) -> Result<Vec<SegmentRecord>> {
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { what: "segment store", line: n + 1, msg: e.to_string() })
        })
        .collect()
}

/// Inverse of [`save_bundle`]; checks token indices against the vocabulary
/// and gold names against the aspect list.
pub fn load_bundle(ws: &Workspace) -> Result<CorpusBundle> {
    let vocabulary = Vocabulary::load(&ws.vocabulary())?;
    let gold_aspects = load_gold_aspects(&ws.gold_aspects())?;
    let gold_index = |id: &str, name: &Option<String>| -> Result<Option<usize>> {
        name.as_ref()
            .map(|n| {
                gold_aspects.index(n).ok_or_else(|| Error::Schema(format!("segment {id}: unknown gold aspect {n:?}")))
            })
            .transpose()
    };
    let mut segments = Vec::new();
    for r in read_records(&ws.segments())? {
        if r.tokens.is_empty() {
            return Err(Error::Schema(format!("segment {} has no tokens", r.segment_id)));
        }
        if let Some(&bad) = r.tokens.iter().find(|&&t| t >= vocabulary.len()) {
            return Err(Error::Schema(format!("segment {}: token {bad} outside vocabulary", r.segment_id)));
        }
        let gold_aspect = gold_index(&r.segment_id, &r.gold_aspect)?;
        segments.push(Segment {
            segment_id: r.segment_id,
            split: r.split,
            tokens: r.tokens,
            raw_text: r.text,
            gold_aspect,
        });
    }
    let quarantine = match ws.quarantine().exists() {
        false => Vec::new(),
        true => read_records(&ws.quarantine())?
            .into_iter()
            .map(|r| {
                Ok(Quarantined {
                    gold_aspect: gold_index(&r.segment_id, &r.gold_aspect)?,
                    segment_id: r.segment_id,
                    split: r.split,
                    raw_text: r.text,
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(CorpusBundle { vocabulary, segments, quarantine, gold_aspects })
}
