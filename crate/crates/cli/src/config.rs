//! Layered configuration: built-in defaults, then a TOML file, then
//! `--set key=value` overrides. Unknown keys are rejected at every layer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sscl_core::distill::DistillConfig;
use sscl_core::embed::{KMeansConfig, SkipGramConfig};
use sscl_core::eval::AblationGrid;
use sscl_core::pipeline::{KeywordConfig, PipelineConfig, PreprocessConfig, SCRIPTED_MAPPING_SHARE};
use sscl_core::sscl::SsclConfig;
use sscl_core::synthetic::SyntheticConfig;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    #[default]
    F64,
}

/// Input files. Output locations are fixed by the working-directory layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Unlabeled training segments, one per line.
    pub train: Option<PathBuf>,
    /// `segment_id<TAB>aspect<TAB>text`.
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Gold aspect names, one per line.
    pub aspects: Option<PathBuf>,
    /// Name of the General aspect, if the label set has one.
    pub general: Option<String>,
    /// Pretrained word vectors replacing skip-gram training.
    pub pretrained: Option<PathBuf>,
    /// `token<TAB>aspect` lexicon for scripted mapping.
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Share of an aspect's keywords that must agree for scripted mapping.
    pub min_share: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self { min_share: SCRIPTED_MAPPING_SHARE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub scalar: ScalarKind,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub embeddings: SkipGramConfig,
    pub kmeans: KMeansConfig,
    pub teacher: SsclConfig,
    pub keywords: KeywordConfig,
    pub mapping: MappingConfig,
    pub distill: DistillConfig,
    pub ablation: AblationGrid,
    pub synthetic: SyntheticConfig,
}

impl Default for Config {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            seed: p.seed,
            scalar: ScalarKind::default(),
            paths: Paths::default(),
            preprocess: p.preprocess,
            embeddings: p.embeddings,
            kmeans: p.kmeans,
            teacher: p.teacher,
            keywords: p.keywords,
            mapping: MappingConfig::default(),
            distill: p.distill,
            ablation: AblationGrid::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl Config {
    /// Defaults, overlaid with `file` (if any), overlaid with `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match Value::try_from(Config::default()) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
            let overlay: Table =
                toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            merge(&mut table, overlay);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Config =
            Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> CliResult<()> {
        self.distill.filter.validate().map_err(|e| CliError::config(e.to_string()))?;
        if self.teacher.n_aspects == 0 || self.teacher.batch_size < 2 {
            return Err(CliError::config("teacher needs n_aspects >= 1 and batch_size >= 2"));
        }
        if !(0.0..=1.0).contains(&self.mapping.min_share) {
            return Err(CliError::config("mapping.min_share must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got {assignment:?}")))?;
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad --set key {key:?}")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cursor =
            entry.as_table_mut().ok_or_else(|| CliError::config(format!("--set {key}: {part} is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 9\n[teacher]\nlambda = 2.0\nepochs = 3\n").unwrap();
        let c = Config::load(Some(&file), &["teacher.lambda=4".into(), "paths.general=General".into()]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.teacher.lambda, 4.0);
        assert_eq!(c.teacher.epochs, 3);
        assert_eq!(c.teacher.mu, 1.0);
        assert_eq!(c.paths.general.as_deref(), Some("General"));
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = Config::load(None, &[]).unwrap();
        assert_eq!(c.embeddings.dim, 128);
        assert_eq!((c.embeddings.window, c.embeddings.negatives, c.preprocess.min_count), (5, 5, 10));
        assert_eq!((c.teacher.n_aspects, c.teacher.batch_size), (30, 50));
        assert_eq!((c.teacher.lambda, c.teacher.mu), (0.5, 1.0));
        let o = &c.teacher.optimizer;
        assert_eq!((o.warmup_steps, o.model_size, o.clip_norm), (2000, 1e5, 2.0));
        assert_eq!(c.keywords.top_k, 10);
        assert_eq!((c.distill.filter.chi_g, c.distill.filter.chi_ng), (0.8, 1.4));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(Config::load(None, &["teacher.lamda=1".into()]).is_err());
        assert!(Config::load(None, &["nonsense=1".into()]).is_err());
        assert!(Config::load(None, &["teacher.lambda=fast".into()]).is_err());
        assert!(Config::load(None, &["distill.filter.chi_g=2.0".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "[teacher]\nwarmup = 10\n").unwrap();
        assert!(Config::load(Some(&file), &[]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config::load(None, &["scalar=f32".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, c.to_toml()).unwrap();
        assert_eq!(Config::load(Some(&file), &[]).unwrap(), c);
    }
}
