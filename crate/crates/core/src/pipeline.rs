//! Stage functions shared by the command-line tool and the end-to-end runs
//! on synthetic data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aspects::{
    infer_segment, mapping_from_lexicon, top_keywords, write_predictions, AspectKeywords, GoldLabel, MappingTable,
    Prediction,
};
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::corpus::{preprocess, CorpusBundle, GoldAspects, PreprocessOptions, RawSegment, Segment, Split, Vocabulary};
use crate::distill::{distill_train, select_confident, DistillConfig, DistillReport, StudentModel};
use crate::embed::{kmeans_init, train_skipgram, EmbeddingMatrix, KMeansConfig, SkipGramConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, micro_f1, AblationPoint, AblationScores, EvalReport};
use crate::io_util::write_atomic;
use crate::ops::argmax;
use crate::scalar::Scalar;
use crate::sscl::{train, SsclConfig, SsclModel, TrainReport};
use crate::synthetic::{generate, SyntheticConfig, SyntheticCorpus};

/// Text normalization settings for the teacher path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub remove_stopwords: bool,
    pub normalize_suffixes: bool,
    /// Replaces the built-in stopword list when set.
    pub stopword_file: Option<PathBuf>,
    pub min_count: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { lowercase: true, remove_stopwords: true, normalize_suffixes: false, stopword_file: None, min_count: 10 }
    }
}

impl PreprocessConfig {
    pub fn options(&self) -> Result<PreprocessOptions> {
        let opts = PreprocessOptions {
            lowercase: self.lowercase,
            remove_stopwords: self.remove_stopwords,
            normalize_suffixes: self.normalize_suffixes,
            ..PreprocessOptions::default()
        };
        match &self.stopword_file {
            Some(p) => opts.with_stopword_file(p),
            None => Ok(opts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordConfig {
    pub top_k: usize,
    /// Example segments shown per aspect in the mapping workbench.
    pub examples: usize,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        Self { top_k: 10, examples: 5 }
    }
}

/// Every hyperparameter of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub embeddings: SkipGramConfig,
    pub kmeans: KMeansConfig,
    pub teacher: SsclConfig,
    pub keywords: KeywordConfig,
    pub distill: DistillConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            preprocess: PreprocessConfig::default(),
            embeddings: SkipGramConfig::default(),
            kmeans: KMeansConfig::default(),
            teacher: SsclConfig::default(),
            keywords: KeywordConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    WordVectors,
    Aspects,
    TeacherInit,
    TeacherShuffle,
    StudentVectors,
    StudentInit,
    StudentShuffle,
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(stage as u64 + 1)
}

pub fn prepare_corpus(raw: &[RawSegment], gold: GoldAspects, config: &PreprocessConfig) -> Result<CorpusBundle> {
    let bundle = CorpusBundle::build(raw, gold, &config.options()?, config.min_count)?;
    if !bundle.quarantine.is_empty() {
        log::warn!("{} segments empty after preprocessing were quarantined", bundle.quarantine.len());
    }
    Ok(bundle)
}

pub fn train_segments(segments: &[Segment]) -> Vec<Vec<usize>> {
    segments.iter().filter(|s| s.split == Split::Train).map(|s| s.tokens.clone()).collect()
}

pub fn train_word_vectors<T: Scalar>(
    sentences: &[Vec<usize>],
    vocab_size: usize,
    config: &SkipGramConfig,
    seed: u64,
) -> Result<EmbeddingMatrix<T>> {
    let cfg = SkipGramConfig { seed, ..config.clone() };
    Ok(train_skipgram(sentences, vocab_size, &cfg)?.embeddings)
}

pub fn initial_aspects<T: Scalar>(
    word_vectors: &EmbeddingMatrix<T>,
    n_aspects: usize,
    config: &KMeansConfig,
    seed: u64,
) -> Result<EmbeddingMatrix<T>> {
    Ok(kmeans_init(word_vectors, n_aspects, seed, config)?.centroids)
}

pub fn train_teacher<T: Scalar>(
    word_vectors: EmbeddingMatrix<T>,
    aspects: EmbeddingMatrix<T>,
    sentences: &[Vec<usize>],
    config: &SsclConfig,
    seed: u64,
) -> Result<(SsclModel<T>, TrainReport)> {
    let mut model = SsclModel::new(
        word_vectors,
        aspects,
        config.hyper(),
        config.projection_init,
        stage_seed(seed, Stage::TeacherInit),
    )?;
    let report = train(&mut model, sentences, config, stage_seed(seed, Stage::TeacherShuffle), None)?;
    Ok((model, report))
}

/// Teacher labels for a list of encoded segments.
pub fn label_segments<T: Scalar>(
    model: &SsclModel<T>,
    segments: &[&Segment],
    mapping: &MappingTable,
) -> Result<Vec<GoldLabel>> {
    segments.iter().map(|s| infer_segment(&s.tokens, model, mapping)).collect()
}

/// Gold indices and hard predictions of the segments that carry a gold label.
pub fn gold_and_pred(segments: &[&Segment], predictions: &[Option<usize>]) -> (Vec<usize>, Vec<Option<usize>>) {
    segments.iter().zip(predictions).filter_map(|(s, p)| s.gold_aspect.map(|g| (g, *p))).unzip()
}

/// Student text path: minimal normalization (stopwords kept).
pub fn student_options() -> PreprocessOptions {
    PreprocessOptions::minimal()
}

/// Student vocabulary over the train split of the raw segments.
pub fn student_vocabulary(segments: &[Segment], min_count: u64) -> Result<Vocabulary> {
    let opts = student_options();
    Vocabulary::build(
        segments.iter().filter(|s| s.split == Split::Train).map(|s| preprocess(&s.raw_text, &opts)),
        min_count,
    )
}

pub fn student_encode(vocabulary: &Vocabulary, raw_text: &str) -> Vec<usize> {
    vocabulary.encode(&preprocess(raw_text, &student_options()))
}

/// Agreement of student argmax with teacher hard labels on the teacher-confident subset.
pub fn confident_agreement(
    teacher: &[GoldLabel],
    student: &[Option<usize>],
    config: &DistillConfig,
    general: Option<usize>,
) -> (f64, usize) {
    let idx = select_confident(teacher, &config.filter, general);
    if idx.is_empty() {
        return (f64::NAN, 0);
    }
    let agree = idx.iter().filter(|&&i| teacher[i].y_hat == student[i]).count();
    (agree as f64 / idx.len() as f64, idx.len())
}

/// Train the student on teacher labels of the train split, stopping early on
/// dev micro-F1.
pub fn run_distillation<T: Scalar>(
    bundle: &CorpusBundle,
    teacher_train_labels: &[GoldLabel],
    embedding_config: &SkipGramConfig,
    config: &DistillConfig,
    seed: u64,
) -> Result<(StudentModel<T>, Vocabulary, DistillReport)> {
    let vocab = student_vocabulary(&bundle.segments, config.min_count)?;
    let train: Vec<&Segment> = bundle.split(Split::Train).collect();
    let train_tokens: Vec<Vec<usize>> = train.iter().map(|s| student_encode(&vocab, &s.raw_text)).collect();
    let vectors =
        train_word_vectors::<T>(&train_tokens, vocab.len(), embedding_config, stage_seed(seed, Stage::StudentVectors))?;
    let mut student = StudentModel::new(
        vectors,
        bundle.gold_aspects.len(),
        config.lambda,
        config.attention,
        stage_seed(seed, Stage::StudentInit),
    )?;

    let dev: Vec<&Segment> = bundle.split(Split::Dev).filter(|s| s.gold_aspect.is_some()).collect();
    let dev_tokens: Vec<Vec<usize>> = dev.iter().map(|s| student_encode(&vocab, &s.raw_text)).collect();
    let dev_gold: Vec<usize> = dev.iter().filter_map(|s| s.gold_aspect).collect();
    let mut monitor = |m: &StudentModel<T>| -> f64 {
        let preds: Vec<Option<usize>> =
            dev_tokens.iter().map(|t| m.predict(t).ok().and_then(|p| argmax(&p.probs))).collect();
        micro_f1(&dev_gold, &preds).unwrap_or(0.0)
    };
    let monitor: Option<&mut dyn FnMut(&StudentModel<T>) -> f64> =
        if dev.is_empty() { None } else { Some(&mut monitor) };
    let report = distill_train(
        &mut student,
        &train_tokens,
        teacher_train_labels,
        bundle.gold_aspects.general,
        config,
        stage_seed(seed, Stage::StudentShuffle),
        monitor,
    )?;
    Ok((student, vocab, report))
}

/// Highest fraction of one MIA's keywords drawn from each topic's vocabulary.
pub fn keyword_coverage(
    keywords: &[AspectKeywords],
    lexicon: &BTreeMap<String, String>,
    gold: &GoldAspects,
) -> Vec<f64> {
    let mut best = vec![0.0f64; gold.len()];
    for a in keywords {
        for (k, name) in gold.names.iter().enumerate() {
            let hits = a.keywords.iter().filter(|kw| lexicon.get(&kw.token) == Some(name)).count();
            best[k] = best[k].max(hits as f64 / a.keywords.len().max(1) as f64);
        }
    }
    best
}

/// Share of an MIA's keywords that must come from one topic for the scripted
/// mapping to assign it.
pub const SCRIPTED_MAPPING_SHARE: f64 = 0.5;

/// Corpus, word vectors and k-means seeds for one synthetic run; reused
/// across teacher variants so ablation comparisons are paired.
pub struct PreparedSynthetic<T> {
    pub corpus: SyntheticCorpus,
    pub bundle: CorpusBundle,
    pub word_vectors: EmbeddingMatrix<T>,
    pub initial_aspects: EmbeddingMatrix<T>,
    pub seed: u64,
}

pub fn prepare_synthetic<T: Scalar>(
    synthetic: &SyntheticConfig,
    config: &PipelineConfig,
) -> Result<PreparedSynthetic<T>> {
    let corpus = generate(synthetic)?;
    let bundle = prepare_corpus(&corpus.segments, corpus.gold.clone(), &config.preprocess)?;
    let sentences = train_segments(&bundle.segments);
    let seed = config.seed;
    let word_vectors = train_word_vectors::<T>(
        &sentences,
        bundle.vocabulary.len(),
        &config.embeddings,
        stage_seed(seed, Stage::WordVectors),
    )?;
    let initial_aspects =
        initial_aspects(&word_vectors, config.teacher.n_aspects, &config.kmeans, stage_seed(seed, Stage::Aspects))?;
    Ok(PreparedSynthetic { corpus, bundle, word_vectors, initial_aspects, seed })
}

/// A trained teacher with its scripted mapping and dev scores.
pub struct TeacherRun<T> {
    pub model: SsclModel<T>,
    pub report: TrainReport,
    pub keywords: Vec<AspectKeywords>,
    pub mapping: MappingTable,
    pub dev_labels: Vec<GoldLabel>,
    pub dev: EvalReport,
}

/// Train a teacher, map its aspects with a word → aspect lexicon and score
/// the mapped labels on the dev split.
#[allow(clippy::too_many_arguments)]
pub fn run_scripted_teacher<T: Scalar>(
    bundle: &CorpusBundle,
    word_vectors: &EmbeddingMatrix<T>,
    initial_aspects: &EmbeddingMatrix<T>,
    lexicon: &BTreeMap<String, String>,
    min_share: f64,
    config: &SsclConfig,
    seed: u64,
    top_k: usize,
) -> Result<TeacherRun<T>> {
    let sentences = train_segments(&bundle.segments);
    let (model, report) = train_teacher(word_vectors.clone(), initial_aspects.clone(), &sentences, config, seed)?;
    let keywords = top_keywords(&model.params.aspects, &model.word_embeddings, &bundle.vocabulary, top_k)?;
    let mapping = mapping_from_lexicon(&keywords, lexicon, &bundle.gold_aspects, min_share)?;
    mapping.ensure_usable()?;
    let dev: Vec<&Segment> = bundle.split(Split::Dev).collect();
    let dev_labels = label_segments(&model, &dev, &mapping)?;
    let preds: Vec<Option<usize>> = dev_labels.iter().map(|l| l.y_hat).collect();
    let (gold, pred) = gold_and_pred(&dev, &preds);
    let dev_report = evaluate(&gold, &pred, &bundle.gold_aspects.names)?;
    Ok(TeacherRun { model, report, keywords, mapping, dev_labels, dev: dev_report })
}

/// Dev scores of one ablation grid point: `base` with the point's attention,
/// λ and batch size, trained from the point's seed.
#[allow(clippy::too_many_arguments)]
pub fn scripted_ablation_scores<T: Scalar>(
    bundle: &CorpusBundle,
    word_vectors: &EmbeddingMatrix<T>,
    initial_aspects: &EmbeddingMatrix<T>,
    lexicon: &BTreeMap<String, String>,
    min_share: f64,
    base: &SsclConfig,
    point: &AblationPoint,
    top_k: usize,
) -> Result<AblationScores> {
    let cfg =
        SsclConfig { attention: point.attention, lambda: point.lambda, batch_size: point.batch_size, ..base.clone() };
    let run = run_scripted_teacher(bundle, word_vectors, initial_aspects, lexicon, min_share, &cfg, point.seed, top_k)?;
    Ok(AblationScores { micro_f1: run.dev.micro_f1, weighted_f1: run.dev.weighted_macro.f1 })
}

impl<T: Scalar> PreparedSynthetic<T> {
    pub fn run_teacher(&self, config: &SsclConfig, top_k: usize) -> Result<TeacherRun<T>> {
        run_scripted_teacher(
            &self.bundle,
            &self.word_vectors,
            &self.initial_aspects,
            &self.corpus.lexicon,
            SCRIPTED_MAPPING_SHARE,
            config,
            self.seed,
            top_k,
        )
    }

    /// Teacher dev scores for one ablation grid point.
    pub fn ablation_scores(&self, base: &SsclConfig, point: &AblationPoint, top_k: usize) -> Result<AblationScores> {
        let cfg = SsclConfig {
            attention: point.attention,
            lambda: point.lambda,
            batch_size: point.batch_size,
            ..base.clone()
        };
        let run = self.run_teacher(&cfg, top_k)?;
        Ok(AblationScores { micro_f1: run.dev.micro_f1, weighted_f1: run.dev.weighted_macro.f1 })
    }
}

/// Summary of an end-to-end synthetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOutcome {
    pub vocab_size: usize,
    pub teacher_dev_micro_f1: f64,
    pub student_dev_micro_f1: f64,
    /// Best keyword purity per topic.
    pub keyword_coverage: Vec<f64>,
    pub mapped_aspects: usize,
    pub confident_train: usize,
    pub confident_dev: usize,
    /// Student/teacher agreement on the teacher-confident dev subset.
    pub confident_dev_agreement: f64,
    pub teacher_epoch_losses: Vec<f64>,
    pub student_epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// Generate a synthetic corpus and run every stage; when `out_dir` is given
/// the checkpoints, predictions and metrics are written there.
pub fn run_synthetic<T: Scalar>(
    synthetic: &SyntheticConfig,
    config: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<SyntheticOutcome> {
    let start = Instant::now();
    let prepared = prepare_synthetic::<T>(synthetic, config)?;
    let teacher = prepared.run_teacher(&config.teacher, config.keywords.top_k)?;
    let bundle = &prepared.bundle;
    let gold = &bundle.gold_aspects;

    let train: Vec<&Segment> = bundle.split(Split::Train).collect();
    let train_labels = label_segments(&teacher.model, &train, &teacher.mapping)?;
    let (student, student_vocab, distill_report) =
        run_distillation::<T>(bundle, &train_labels, &config.embeddings, &config.distill, config.seed)?;

    let dev: Vec<&Segment> = bundle.split(Split::Dev).collect();
    let student_dev: Vec<Option<usize>> = dev
        .iter()
        .map(|s| Ok(argmax(&student.predict(&student_encode(&student_vocab, &s.raw_text))?.probs)))
        .collect::<Result<_>>()?;
    let (dev_gold, student_pred) = gold_and_pred(&dev, &student_dev);
    let student_f1 = micro_f1(&dev_gold, &student_pred)?;
    let (agreement, confident_dev) =
        confident_agreement(&teacher.dev_labels, &student_dev, &config.distill, gold.general);
    let confident_train = select_confident(&train_labels, &config.distill.filter, gold.general).len();

    let outcome = SyntheticOutcome {
        vocab_size: bundle.vocabulary.len(),
        teacher_dev_micro_f1: teacher.dev.micro_f1,
        student_dev_micro_f1: student_f1,
        keyword_coverage: keyword_coverage(&teacher.keywords, &prepared.corpus.lexicon, gold),
        mapped_aspects: teacher.mapping.mapped_count(),
        confident_train,
        confident_dev,
        confident_dev_agreement: agreement,
        teacher_epoch_losses: teacher.report.epoch_losses.clone(),
        student_epoch_losses: distill_report.epoch_losses.clone(),
        seconds: start.elapsed().as_secs_f64(),
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let seed = config.seed;
        Checkpoint::new::<T>(
            ModelKind::Teacher,
            &bundle.vocabulary.hash(),
            seed,
            &config.teacher,
            teacher.model.clone(),
        )?
        .save(&dir.join("teacher.json"))?;
        Checkpoint::new::<T>(ModelKind::Student, &student_vocab.hash(), seed, &config.distill, student)?
            .save(&dir.join("student.json"))?;
        teacher.mapping.save(&dir.join("mapping.json"), Some(&teacher.keywords))?;
        let predictions: Vec<Prediction> = dev
            .iter()
            .zip(&teacher.dev_labels)
            .map(|(s, l)| Prediction { segment_id: s.segment_id.clone(), label: l.clone() })
            .collect();
        write_predictions(&dir.join("predictions.tsv"), &predictions, gold)?;
        // timing is the only nondeterministic field
        let metrics = SyntheticOutcome { seconds: 0.0, ..outcome.clone() };
        write_atomic(&dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    }
    Ok(outcome)
}

impl PipelineConfig {
    /// Settings for the generated planted-topic corpora: 15 aspects, word
    /// vectors trained long enough for a ~15k-token corpus without frequency
    /// subsampling, and learning-rate multipliers that let a few hundred
    /// optimizer steps make progress under the warmup schedule.
    pub fn synthetic(seed: u64) -> Self {
        let mut cfg = Self { seed, ..Self::default() };
        cfg.teacher.n_aspects = 15;
        cfg.embeddings.epochs = 20;
        cfg.embeddings.subsample = 0.0;
        cfg.teacher.optimizer.lr_scale = 100.0;
        cfg.distill.optimizer.lr_scale = 30.0;
        cfg
    }
}

impl SyntheticConfig {
    /// A harder corpus where a quarter of the content words come from other
    /// topics; used for the attention ablations.
    pub fn noisy(seed: u64) -> Self {
        Self { topic_share: 0.45, cross_topic_rate: 0.25, seed, ..Self::default() }
    }
}
