//! Mapping session state: the loaded teacher's aspect cards, the cached dev
//! β, the draft mapping and its audit log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sscl_core::aspects::{
    aggregate_gamma, example_segments, keywords_from_json, top_keywords, AspectKeywords, Keyword, MappingEdit,
    MappingTable,
};
use sscl_core::checkpoint::{Checkpoint, ModelKind};
use sscl_core::corpus::{GoldAspects, Split};
use sscl_core::eval::{evaluate, EvalReport};
use sscl_core::sscl::SsclModel;
use sscl_core::workspace::{load_bundle, Workspace};
use sscl_core::{read_to_string, sha256_hex, write_atomic, Scalar};

pub const TOP_KEYWORDS: usize = 10;
pub const TOP_EXAMPLES: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("no checkpoint loaded")]
    NoCheckpoint,
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] sscl_core::Error),
}

pub type SessionResult<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub segment_id: String,
    pub text: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectCard {
    pub mia: usize,
    pub keywords: Vec<Keyword>,
    /// Training segments with the highest β for this MIA, best first.
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectsView {
    pub gold_aspects: Vec<String>,
    pub general: Option<String>,
    pub aspects: Vec<AspectCard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mapped_aspects: usize,
    pub unmappable_segments: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitReceipt {
    pub path: PathBuf,
    pub sha256: String,
    pub mapped_aspects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum AuditEvent {
    Edit { edits: Vec<MappingEdit> },
    Commit { sha256: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub event: AuditEvent,
}

/// Append-only JSON-lines log; each entry is synced before the call returns.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    next_seq: u64,
}

impl AuditLog {
    pub fn read(path: &Path) -> SessionResult<Vec<AuditEntry>> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_to_string(path)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| SessionError::Invalid(format!("{} line {}: {e}", path.display(), n + 1)))
            })
            .collect()
    }

    fn append(&mut self, event: AuditEvent) -> SessionResult<AuditEntry> {
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let entry = AuditEntry { seq: self.next_seq, timestamp_ms, event };
        let line = serde_json::to_string(&entry).map_err(sscl_core::Error::from)? + "\n";
        let io = |e| SessionError::Core(sscl_core::Error::io(&self.path, e));
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        f.write_all(line.as_bytes()).map_err(io)?;
        f.sync_data().map_err(io)?;
        self.next_seq += 1;
        Ok(entry)
    }
}

struct Draft {
    mapping: MappingTable,
    audit: AuditLog,
}

pub struct Loaded {
    pub checkpoint: PathBuf,
    gold: GoldAspects,
    keywords: Vec<AspectKeywords>,
    view: AspectsView,
    dev_betas: Vec<Vec<f64>>,
    dev_gold: Vec<usize>,
    mapping_path: PathBuf,
    /// Single-writer gate for the draft and its log.
    draft: Mutex<Draft>,
}

pub struct Session {
    loaded: Option<Loaded>,
}

fn scalar_of(text: &str) -> SessionResult<String> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| SessionError::Invalid(format!("checkpoint is not JSON: {e}")))?;
    v.get("scalar")
        .and_then(|s| s.as_str())
        .map(String::from)
        .ok_or_else(|| SessionError::Invalid("checkpoint has no scalar field".into()))
}

impl Session {
    pub fn empty() -> Self {
        Self { loaded: None }
    }

    /// Load the teacher at `checkpoint` against the corpus in `ws`, restore the
    /// committed mapping and replay later audit edits onto it.
    pub fn open(ws: &Workspace, checkpoint: &Path) -> SessionResult<Self> {
        let text = read_to_string(checkpoint)?;
        let loaded = match scalar_of(&text)?.as_str() {
            "f32" => Loaded::build::<f32>(ws, checkpoint, &text)?,
            _ => Loaded::build::<f64>(ws, checkpoint, &text)?,
        };
        Ok(Self { loaded: Some(loaded) })
    }

    pub fn loaded(&self) -> SessionResult<&Loaded> {
        self.loaded.as_ref().ok_or(SessionError::NoCheckpoint)
    }
}

impl Loaded {
    fn build<T: Scalar>(ws: &Workspace, checkpoint: &Path, text: &str) -> SessionResult<Self> {
        let ck = Checkpoint::<SsclModel<T>>::from_json::<T>(text, ModelKind::Teacher)?;
        let bundle = load_bundle(ws)?;
        ck.ensure_vocab(&bundle.vocabulary.hash())?;
        let model = ck.model;
        let n = model.n_aspects();
        let gold = bundle.gold_aspects.clone();

        let keywords = if ws.keywords().exists() {
            let kw = keywords_from_json(&read_to_string(&ws.keywords())?)?;
            if kw.len() != n {
                return Err(SessionError::Invalid(format!("keywords.json lists {} aspects, model has {n}", kw.len())));
            }
            kw
        } else {
            top_keywords(&model.params.aspects, &model.word_embeddings, &bundle.vocabulary, TOP_KEYWORDS)?
        };

        let train: Vec<_> = bundle.split(Split::Train).collect();
        let train_betas =
            train.iter().map(|s| model.aspect_distribution(&s.tokens)).collect::<sscl_core::Result<Vec<_>>>()?;
        let examples = example_segments(&train_betas, n, TOP_EXAMPLES);
        let aspects = keywords
            .iter()
            .zip(examples)
            .map(|(kw, ex)| AspectCard {
                mia: kw.aspect_index,
                keywords: kw.keywords.clone(),
                examples: ex
                    .into_iter()
                    .map(|(i, beta)| Example {
                        segment_id: train[i].segment_id.clone(),
                        text: train[i].raw_text.clone(),
                        beta,
                    })
                    .collect(),
            })
            .collect();

        let mut dev_betas = Vec::new();
        let mut dev_gold = Vec::new();
        for s in bundle.split(Split::Dev) {
            if let Some(g) = s.gold_aspect {
                let beta = model.aspect_distribution(&s.tokens)?;
                dev_betas.push(beta.iter().map(|b| b.to_f64_lossy()).collect());
                dev_gold.push(g);
            }
        }

        let mapping_path = ws.mapping();
        let mapping = restore_draft(&mapping_path, &ws.audit_log(), n, &gold)?;
        let entries = AuditLog::read(&ws.audit_log())?;
        let audit = AuditLog { path: ws.audit_log(), next_seq: entries.last().map_or(0, |e| e.seq + 1) };
        let view =
            AspectsView { gold_aspects: gold.names.clone(), general: gold.general_name().map(String::from), aspects };
        Ok(Self {
            checkpoint: checkpoint.to_path_buf(),
            gold,
            keywords,
            view,
            dev_betas,
            dev_gold,
            mapping_path,
            draft: Mutex::new(Draft { mapping, audit }),
        })
    }

    pub fn aspects(&self) -> &AspectsView {
        &self.view
    }

    pub fn keywords(&self) -> &[AspectKeywords] {
        &self.keywords
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Draft> {
        self.draft.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn draft(&self) -> MappingTable {
        self.lock().mapping.clone()
    }

    /// Apply edits all-or-nothing and log them.
    pub fn edit(&self, edits: &[MappingEdit]) -> SessionResult<MappingTable> {
        let mut draft = self.lock();
        let mut next = draft.mapping.clone();
        next.apply(edits).map_err(|e| SessionError::Invalid(e.to_string()))?;
        draft.audit.append(AuditEvent::Edit { edits: edits.to_vec() })?;
        draft.mapping = next;
        Ok(draft.mapping.clone())
    }

    /// Dev-split metrics under the current draft. Reads the draft only.
    pub fn validate(&self) -> SessionResult<ValidationReport> {
        let mapping = self.draft();
        if mapping.mapped_count() == 0 {
            return Err(SessionError::Conflict("no MIA is mapped".into()));
        }
        if self.dev_gold.is_empty() {
            return Err(SessionError::Conflict("the dev split has no gold-labeled segments".into()));
        }
        let mut preds = Vec::with_capacity(self.dev_betas.len());
        let mut unmappable = 0;
        for beta in &self.dev_betas {
            let label = aggregate_gamma(beta, &mapping)?;
            unmappable += usize::from(label.unmappable);
            preds.push(label.y_hat);
        }
        let report = evaluate(&self.dev_gold, &preds, &self.gold.names)?;
        Ok(ValidationReport { mapped_aspects: mapping.mapped_count(), unmappable_segments: unmappable, report })
    }

    /// Persist the draft to mapping.json and log the file hash.
    pub fn commit(&self) -> SessionResult<CommitReceipt> {
        let mut draft = self.lock();
        if draft.mapping.mapped_count() == 0 {
            return Err(SessionError::Conflict("refusing to commit a mapping with no mapped MIA".into()));
        }
        let json = draft.mapping.to_json(Some(&self.keywords))?;
        write_atomic(&self.mapping_path, json.as_bytes())?;
        let sha256 = sha256_hex(json.as_bytes());
        draft.audit.append(AuditEvent::Commit { sha256: sha256.clone() })?;
        Ok(CommitReceipt { path: self.mapping_path.clone(), sha256, mapped_aspects: draft.mapping.mapped_count() })
    }
}

/// Committed mapping (or an all-unmapped table) plus every edit logged after
/// the last commit.
fn restore_draft(mapping_path: &Path, audit_path: &Path, n: usize, gold: &GoldAspects) -> SessionResult<MappingTable> {
    let mut mapping = if mapping_path.exists() {
        let bytes = read_to_string(mapping_path)?;
        let m = MappingTable::from_json(&bytes, Some(n))?;
        if m.gold() != gold {
            return Err(SessionError::Invalid("mapping.json gold aspects differ from the corpus".into()));
        }
        m
    } else {
        MappingTable::unmapped(n, gold.clone())
    };
    let entries = AuditLog::read(audit_path)?;
    let last_commit = entries.iter().rposition(|e| matches!(e.event, AuditEvent::Commit { .. }));
    if let Some(i) = last_commit {
        if let AuditEvent::Commit { sha256 } = &entries[i].event {
            let on_disk =
                if mapping_path.exists() { Some(sha256_hex(read_to_string(mapping_path)?.as_bytes())) } else { None };
            if on_disk.as_deref() != Some(sha256.as_str()) {
                log::warn!("mapping.json does not match the last committed hash; replaying onto the file as found");
            }
        }
    }
    let start = last_commit.map_or(0, |i| i + 1);
    for e in &entries[start..] {
        if let AuditEvent::Edit { edits } = &e.event {
            mapping.apply(edits).map_err(|err| SessionError::Invalid(format!("audit entry {}: {err}", e.seq)))?;
        }
    }
    Ok(mapping)
}
