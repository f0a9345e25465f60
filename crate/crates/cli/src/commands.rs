//! One function per subcommand. Each returns a JSON summary and the lines
//! printed in human mode.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sscl_core::aspects::{
    keywords_from_json, keywords_to_json, mapping_from_lexicon, read_lexicon, read_predictions, top_keywords,
    GoldLabel, MappingTable, Prediction,
};
use sscl_core::checkpoint::{Checkpoint, ModelKind};
use sscl_core::corpus::{
    read_labeled, read_unlabeled, CorpusBundle, GoldAspects, RawSegment, Segment, Split, Vocabulary,
};
use sscl_core::distill::select_confident;
use sscl_core::embed::{load_embeddings, read_embedding_file, write_embedding_file, EmbeddingMatrix};
use sscl_core::eval::{ablation_run, evaluate, write_results, AblationScores, EvalReport};
use sscl_core::ops::{argmax, entropy};
use sscl_core::pipeline::{
    gold_and_pred, initial_aspects, label_segments, prepare_corpus, run_distillation, scripted_ablation_scores,
    stage_seed, student_encode, train_segments, train_teacher, train_word_vectors, Stage,
};
use sscl_core::sscl::SsclModel;
use sscl_core::synthetic::generate;
use sscl_core::workspace::{load_bundle, load_gold_aspects, save_bundle, Workspace};
use sscl_core::{read_to_string, write_atomic, Scalar};

use crate::config::{Config, ScalarKind};
use crate::error::{CliError, CliResult};
use crate::manifest::{Decision, StagePlan};

pub struct Ctx {
    pub ws: Workspace,
    pub config: Config,
    pub force: bool,
}

#[derive(Debug, Default)]
pub struct Report {
    pub summary: Value,
    pub lines: Vec<String>,
}

type StageOutput = (Value, Vec<String>);

macro_rules! by_scalar {
    ($ctx:expr, $f:ident ( $($arg:expr),* )) => {
        match $ctx.config.scalar {
            ScalarKind::F32 => $f::<f32>($($arg),*),
            ScalarKind::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run_stage(ctx: &Ctx, plan: StagePlan, body: impl FnOnce() -> CliResult<StageOutput>) -> CliResult<Report> {
    let stage = plan.stage.clone();
    match plan.decide(ctx.force)? {
        Decision::UpToDate(m) => Ok(Report {
            summary: json!({ "stage": stage, "status": "up-to-date", "config_hash": m.config_hash }),
            lines: vec![format!("{stage}: up to date (use --force to rerun)")],
        }),
        Decision::Run(plan) => {
            let (mut summary, lines) = body()?;
            let manifest = plan.finish()?;
            if let Value::Object(map) = &mut summary {
                map.insert("stage".into(), json!(stage));
                map.insert("status".into(), json!("done"));
                map.insert("config_hash".into(), json!(manifest.config_hash));
            }
            Ok(Report { summary, lines })
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| CliError::config(format!("{key} is not set (use --set {key}=PATH or the config file)")))
}

fn to_json_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn read_names(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn load_vectors<T: Scalar>(path: &Path, expected: &[String], what: &str) -> CliResult<EmbeddingMatrix<T>> {
    let (names, matrix) = read_embedding_file::<T>(path)?;
    if names != expected {
        return Err(CliError::schema(format!("{} rows do not match the {what}", path.display())));
    }
    Ok(matrix)
}

fn load_teacher<T: Scalar>(ws: &Workspace, bundle: &CorpusBundle) -> CliResult<SsclModel<T>> {
    let ck = Checkpoint::<SsclModel<T>>::load::<T>(&ws.teacher(), ModelKind::Teacher)?;
    ck.ensure_vocab(&bundle.vocabulary.hash())?;
    Ok(ck.model)
}

fn load_mapping(ws: &Workspace, n_aspects: usize, gold: &GoldAspects) -> CliResult<MappingTable> {
    let mapping = MappingTable::load(&ws.mapping(), Some(n_aspects))?;
    if mapping.gold() != gold {
        return Err(CliError::schema("mapping.json gold aspects differ from the corpus"));
    }
    mapping.ensure_usable()?;
    Ok(mapping)
}

fn split_counts(bundle: &CorpusBundle) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in &bundle.segments {
        *counts.entry(s.split.to_string()).or_default() += 1;
    }
    counts
}

pub fn preprocess(ctx: &Ctx) -> CliResult<Report> {
    let p = &ctx.config.paths;
    let train = required(&p.train, "paths.train")?;
    let aspects = required(&p.aspects, "paths.aspects")?;
    let mut inputs = vec![train.clone(), aspects.clone()];
    inputs.extend(p.dev.iter().chain(&p.test).cloned());
    inputs.extend(ctx.config.preprocess.stopword_file.iter().cloned());
    let ws = &ctx.ws;
    let outputs = vec![ws.vocabulary(), ws.segments(), ws.encoded(), ws.quarantine(), ws.gold_aspects()];
    let cfg = json!({ "preprocess": ctx.config.preprocess, "general": p.general });
    let plan = StagePlan::new(ws, "preprocess", &cfg, inputs, outputs)?;
    run_stage(ctx, plan, || {
        let gold = GoldAspects::new(read_names(aspects)?, p.general.as_deref())?;
        let mut raw: Vec<RawSegment> = read_unlabeled(train, Split::Train, "train")?;
        if let Some(dev) = &p.dev {
            raw.extend(read_labeled(dev, Split::Dev)?);
        }
        if let Some(test) = &p.test {
            raw.extend(read_labeled(test, Split::Test)?);
        }
        let bundle = prepare_corpus(&raw, gold, &ctx.config.preprocess)?;
        save_bundle(ws, &bundle)?;
        let counts = split_counts(&bundle);
        let lines = vec![
            format!("vocabulary: {} tokens (min_count {})", bundle.vocabulary.len(), ctx.config.preprocess.min_count),
            format!("segments: {counts:?}, quarantined: {}", bundle.quarantine.len()),
        ];
        Ok((
            json!({ "vocab_size": bundle.vocabulary.len(), "segments": counts, "quarantined": bundle.quarantine.len() }),
            lines,
        ))
    })
}

pub fn train_embeddings(ctx: &Ctx) -> CliResult<Report> {
    by_scalar!(ctx, train_embeddings_as(ctx))
}

fn train_embeddings_as<T: Scalar>(ctx: &Ctx) -> CliResult<Report> {
    let ws = &ctx.ws;
    let c = &ctx.config;
    let mut inputs = vec![ws.vocabulary(), ws.segments()];
    inputs.extend(c.paths.pretrained.iter().cloned());
    let cfg =
        json!({ "seed": c.seed, "scalar": c.scalar, "embeddings": c.embeddings, "pretrained": c.paths.pretrained });
    let plan = StagePlan::new(ws, "train-embeddings", &cfg, inputs, vec![ws.word_vectors()])?;
    run_stage(ctx, plan, || {
        let bundle = load_bundle(ws)?;
        let seed = stage_seed(c.seed, Stage::WordVectors);
        let (matrix, missing) = match &c.paths.pretrained {
            Some(path) => {
                let loaded = load_embeddings::<T>(path, &bundle.vocabulary, c.embeddings.dim, seed)?;
                (loaded.embeddings, loaded.missing.len())
            }
            None => (
                train_word_vectors::<T>(
                    &train_segments(&bundle.segments),
                    bundle.vocabulary.len(),
                    &c.embeddings,
                    seed,
                )?,
                0,
            ),
        };
        write_embedding_file(&ws.word_vectors(), bundle.vocabulary.words(), &matrix)?;
        let lines =
            vec![format!("word vectors: {} × {} ({} randomly initialized)", matrix.rows(), matrix.dim(), missing)];
        Ok((json!({ "rows": matrix.rows(), "dim": matrix.dim(), "missing_pretrained": missing }), lines))
    })
}

fn aspect_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("aspect{i}")).collect()
}

pub fn init_aspects(ctx: &Ctx) -> CliResult<Report> {
    by_scalar!(ctx, init_aspects_as(ctx))
}

fn init_aspects_as<T: Scalar>(ctx: &Ctx) -> CliResult<Report> {
    let ws = &ctx.ws;
    let c = &ctx.config;
    let cfg = json!({ "seed": c.seed, "scalar": c.scalar, "kmeans": c.kmeans, "n_aspects": c.teacher.n_aspects });
    let plan =
        StagePlan::new(ws, "init-aspects", &cfg, vec![ws.vocabulary(), ws.word_vectors()], vec![ws.initial_aspects()])?;
    run_stage(ctx, plan, || {
        let vocab = Vocabulary::load(&ws.vocabulary())?;
        let vectors = load_vectors::<T>(&ws.word_vectors(), vocab.words(), "vocabulary")?;
        let aspects = initial_aspects(&vectors, c.teacher.n_aspects, &c.kmeans, stage_seed(c.seed, Stage::Aspects))?;
        write_embedding_file(&ws.initial_aspects(), &aspect_names(aspects.rows()), &aspects)?;
        Ok((
            json!({ "n_aspects": aspects.rows() }),
            vec![format!("initial aspects: {} k-means centroids", aspects.rows())],
        ))
    })
}

pub fn train_teacher_cmd(ctx: &Ctx) -> CliResult<Report> {
    by_scalar!(ctx, train_teacher_as(ctx))
}

fn train_teacher_as<T: Scalar>(ctx: &Ctx) -> CliResult<Report> {
    let ws = &ctx.ws;
    let c = &ctx.config;
    let inputs = vec![ws.vocabulary(), ws.segments(), ws.word_vectors(), ws.initial_aspects()];
    let cfg = json!({ "seed": c.seed, "scalar": c.scalar, "teacher": c.teacher });
    let plan = StagePlan::new(ws, "train-teacher", &cfg, inputs, vec![ws.teacher()])?;
    run_stage(ctx, plan, || {
        let bundle = load_bundle(ws)?;
        let vectors = load_vectors::<T>(&ws.word_vectors(), bundle.vocabulary.words(), "vocabulary")?;
        let aspects =
            load_vectors::<T>(&ws.initial_aspects(), &aspect_names(c.teacher.n_aspects), "configured aspect count")?;
        let (model, report) = train_teacher(vectors, aspects, &train_segments(&bundle.segments), &c.teacher, c.seed)?;
        Checkpoint::new::<T>(ModelKind::Teacher, &bundle.vocabulary.hash(), c.seed, &c.teacher, model)?
            .save(&ws.teacher())?;
        let lines =
            report.epoch_losses.iter().enumerate().map(|(e, l)| format!("epoch {:>3}: loss {l:.6}", e + 1)).collect();
        Ok((json!({ "epoch_losses": report.epoch_losses, "steps": report.steps.len() }), lines))
    })
}

pub fn keywords(ctx: &Ctx) -> CliResult<Report> {
    by_scalar!(ctx, keywords_as(ctx))
}

fn keywords_as<T: Scalar>(ctx: &Ctx) -> CliResult<Report> {
    let ws = &ctx.ws;
    let cfg = json!({ "top_k": ctx.config.keywords.top_k });
    let plan =
        StagePlan::new(ws, "keywords", &cfg, vec![ws.vocabulary(), ws.segments(), ws.teacher()], vec![ws.keywords()])?;
    run_stage(ctx, plan, || {
        let bundle = load_bundle(ws)?;
        let model = load_teacher::<T>(ws, &bundle)?;
        let kw =
            top_keywords(&model.params.aspects, &model.word_embeddings, &bundle.vocabulary, ctx.config.keywords.top_k)?;
        write_atomic(&ws.keywords(), keywords_to_json(&kw)?.as_bytes())?;
        let lines = kw
            .iter()
            .map(|a| {
                format!(
                    "MIA {:>2}: {}",
                    a.aspect_index,
                    a.keywords.iter().map(|k| k.token.as_str()).collect::<Vec<_>>().join(" ")
                )
            })
            .collect();
        Ok((json!({ "aspects": to_json_value(&kw) }), lines))
    })
}

pub fn map_auto(ctx: &Ctx) -> CliResult<Report> {
    let ws = &ctx.ws;
    let lexicon = required(&ctx.config.paths.lexicon, "paths.lexicon")?;
    let plan = StagePlan::new(
        ws,
        "map-auto",
        &ctx.config.mapping,
        vec![ws.keywords(), ws.gold_aspects(), lexicon.clone()],
        vec![ws.mapping()],
    )?;
    run_stage(ctx, plan, || {
        let kw = keywords_from_json(&read_to_string(&ws.keywords())?)?;
        let gold = load_gold_aspects(&ws.gold_aspects())?;
        let mapping = mapping_from_lexicon(&kw, &read_lexicon(lexicon)?, &gold, ctx.config.mapping.min_share)?;
        mapping.ensure_usable()?;
        mapping.save(&ws.mapping(), Some(&kw))?;
        let lines = mapping
            .entries()
            .iter()
            .enumerate()
            .map(|(i, g)| format!("MIA {i:>2} → {}", g.map_or("(unmapped)", |g| gold.names[g].as_str())))
            .collect();
        Ok((json!({ "mapped": mapping.mapped_count(), "n_aspects": mapping.n_aspects() }), lines))
    })
}

pub struct ServeArgs {
    pub port: u16,
    pub host: IpAddr,
    pub checkpoint: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

pub fn serve_map(ctx: &Ctx, args: ServeArgs) -> CliResult<Report> {
    let config = map_server::ServerConfig {
        workdir: ctx.ws.root().to_path_buf(),
        checkpoint: args.checkpoint,
        static_dir: args.static_dir,
        addr: SocketAddr::new(args.host, args.port),
    };
    map_server::serve_blocking(config)?;
    Ok(Report { summary: json!({ "status": "stopped" }), lines: vec!["server stopped".into()] })
}

fn label_summary(labels: &[(String, GoldLabel)], gold: &GoldAspects, ctx: &Ctx) -> Value {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, l) in labels {
        *counts.entry(l.label_name(gold).to_string()).or_default() += 1;
    }
    let all: Vec<GoldLabel> = labels.iter().map(|(_, l)| l.clone()).collect();
    let confident = select_confident(&all, &ctx.config.distill.filter, gold.general).len();
    json!({ "segments": labels.len(), "labels": counts, "confident": confident })
}

pub fn infer(ctx: &Ctx, split: Split) -> CliResult<Report> {
    by_scalar!(ctx, infer_as(ctx, split))
}

fn infer_as<T: Scalar>(ctx: &Ctx, split: Split) -> CliResult<Report> {
    let ws = &ctx.ws;
    let inputs = vec![ws.vocabulary(), ws.segments(), ws.teacher(), ws.mapping()];
    let plan =
        StagePlan::new(ws, &format!("infer-{split}"), &json!({ "split": split }), inputs, vec![ws.labels(split)])?;
    run_stage(ctx, plan, || {
        let bundle = load_bundle(ws)?;
        let model = load_teacher::<T>(ws, &bundle)?;
        let gold = &bundle.gold_aspects;
        let mapping = load_mapping(ws, model.n_aspects(), gold)?;
        let segments: Vec<&Segment> = bundle.split(split).collect();
        let mut labels: Vec<(String, GoldLabel)> =
            segments.iter().map(|s| s.segment_id.clone()).zip(label_segments(&model, &segments, &mapping)?).collect();
        // Segments emptied by preprocessing still get a (maximally uncertain) label.
        labels.extend(
            bundle
                .quarantine
                .iter()
                .filter(|q| q.split == split)
                .map(|q| (q.segment_id.clone(), GoldLabel::degenerate(gold))),
        );
        let rows: Vec<Prediction> =
            labels.iter().map(|(id, l)| Prediction { segment_id: id.clone(), label: l.clone() }).collect();
        sscl_core::aspects::write_predictions(&ws.labels(split), &rows, gold)?;
        let mut summary = label_summary(&labels, gold, ctx);
        let preds: Vec<Option<usize>> = labels[..segments.len()].iter().map(|(_, l)| l.y_hat).collect();
        let (g, p) = gold_and_pred(&segments, &preds);
        let mut lines = vec![format!("{} {split} segments labeled → {}", labels.len(), ws.labels(split).display())];
        if !g.is_empty() {
            let f1 = sscl_core::eval::micro_f1(&g, &p)?;
            summary["micro_f1"] = json!(f1);
            lines.push(format!("micro-F1 against gold: {f1:.4}"));
        }
        Ok((summary, lines))
    })
}

fn student_label(probs: &[f64]) -> GoldLabel {
    GoldLabel {
        gamma: probs.to_vec(),
        raw_gamma: probs.to_vec(),
        y_hat: argmax(probs),
        entropy: entropy(probs),
        unmappable: false,
    }
}

pub fn distill(ctx: &Ctx) -> CliResult<Report> {
    by_scalar!(ctx, distill_as(ctx))
}

fn distill_as<T: Scalar>(ctx: &Ctx) -> CliResult<Report> {
    let ws = &ctx.ws;
    let c = &ctx.config;
    let inputs = vec![ws.vocabulary(), ws.segments(), ws.teacher(), ws.mapping()];
    let outputs = vec![
        ws.student(),
        ws.student_vocabulary(),
        ws.student_predictions(Split::Dev),
        ws.student_predictions(Split::Test),
    ];
    let cfg = json!({ "seed": c.seed, "scalar": c.scalar, "distill": c.distill, "embeddings": c.embeddings });
    let plan = StagePlan::new(ws, "distill", &cfg, inputs, outputs)?;
    run_stage(ctx, plan, || {
        let bundle = load_bundle(ws)?;
        let teacher = load_teacher::<T>(ws, &bundle)?;
        let gold = &bundle.gold_aspects;
        let mapping = load_mapping(ws, teacher.n_aspects(), gold)?;
        let train: Vec<&Segment> = bundle.split(Split::Train).collect();
        let train_labels = label_segments(&teacher, &train, &mapping)?;
        let (student, vocab, report) =
            run_distillation::<T>(&bundle, &train_labels, &c.embeddings, &c.distill, c.seed)?;

        let mut summary =
            json!({ "n_train": report.n_train, "epoch_losses": report.epoch_losses, "best_epoch": report.best_epoch });
        let mut lines = vec![format!(
            "student trained on {} confident segments, best epoch {}",
            report.n_train,
            report.best_epoch.map_or("-".to_string(), |e| (e + 1).to_string())
        )];
        for split in [Split::Dev, Split::Test] {
            let mut rows = Vec::new();
            let mut pairs = (Vec::new(), Vec::new());
            let texts = bundle.split(split).map(|s| (&s.segment_id, &s.raw_text, s.gold_aspect)).chain(
                bundle
                    .quarantine
                    .iter()
                    .filter(|q| q.split == split)
                    .map(|q| (&q.segment_id, &q.raw_text, q.gold_aspect)),
            );
            for (id, text, g) in texts {
                let probs = student.predict(&student_encode(&vocab, text))?.probs;
                let label = student_label(&probs);
                if let Some(g) = g {
                    pairs.0.push(g);
                    pairs.1.push(label.y_hat);
                }
                rows.push(Prediction { segment_id: id.clone(), label });
            }
            sscl_core::aspects::write_predictions(&ws.student_predictions(split), &rows, gold)?;
            if !pairs.0.is_empty() {
                let f1 = sscl_core::eval::micro_f1(&pairs.0, &pairs.1)?;
                summary[format!("{split}_micro_f1")] = json!(f1);
                lines.push(format!("student {split} micro-F1: {f1:.4}"));
            }
        }
        Checkpoint::new::<T>(ModelKind::Student, &vocab.hash(), c.seed, &c.distill, student)?.save(&ws.student())?;
        vocab.save(&ws.student_vocabulary())?;
        Ok((summary, lines))
    })
}

pub struct EvaluateArgs {
    pub predictions: PathBuf,
    pub gold: Option<PathBuf>,
    pub aspects: Option<PathBuf>,
    pub general: Option<String>,
    pub name: Option<String>,
}

fn report_lines(report: &EvalReport) -> Vec<String> {
    let w = &report.weighted_macro;
    let mut lines = vec![
        format!("segments: {}", report.n_segments),
        format!("micro-F1: {:.4}", report.micro_f1),
        format!("weighted macro P/R/F: {:.4} / {:.4} / {:.4}", w.precision, w.recall, w.f1),
    ];
    for (name, prf) in &report.per_aspect {
        lines.push(format!("  {name:<16} P {:.4}  R {:.4}  F {:.4}", prf.precision, prf.recall, prf.f1));
    }
    lines
}

pub fn evaluate_cmd(ctx: &Ctx, args: EvaluateArgs) -> CliResult<Report> {
    let ws = &ctx.ws;
    let name = match &args.name {
        Some(n) => n.clone(),
        None => args
            .predictions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "predictions".into()),
    };
    let mut inputs = vec![args.predictions.clone()];
    match (&args.gold, &args.aspects) {
        (Some(g), Some(a)) => inputs.extend([g.clone(), a.clone()]),
        (None, None) => inputs.extend([ws.segments(), ws.gold_aspects()]),
        _ => return Err(CliError::config("--gold and --aspects must be given together")),
    }
    let out = ws.evaluation(&name);
    let confusion = out.with_extension("confusion.tsv");
    let plan = StagePlan::new(
        ws,
        &format!("evaluate-{name}"),
        &json!({ "general": args.general }),
        inputs,
        vec![out.clone(), confusion.clone()],
    )?;
    run_stage(ctx, plan, || {
        let (gold, labels): (GoldAspects, BTreeMap<String, usize>) = match (&args.gold, &args.aspects) {
            (Some(g), Some(a)) => {
                let gold = GoldAspects::new(read_names(a)?, args.general.as_deref())?;
                let mut labels = BTreeMap::new();
                for r in read_labeled(g, Split::Dev)? {
                    let name = r.gold_aspect.expect("labeled");
                    let k = gold
                        .index(&name)
                        .ok_or_else(|| CliError::schema(format!("{}: unknown aspect {name:?}", r.segment_id)))?;
                    labels.insert(r.segment_id, k);
                }
                (gold, labels)
            }
            _ => {
                let bundle = load_bundle(ws)?;
                let mut labels: BTreeMap<String, usize> =
                    bundle.segments.iter().filter_map(|s| s.gold_aspect.map(|g| (s.segment_id.clone(), g))).collect();
                labels
                    .extend(bundle.quarantine.iter().filter_map(|q| q.gold_aspect.map(|g| (q.segment_id.clone(), g))));
                (bundle.gold_aspects, labels)
            }
        };
        let rows = read_predictions(&args.predictions, &gold)?;
        let mut g = Vec::new();
        let mut p = Vec::new();
        for r in &rows {
            if let Some(&k) = labels.get(&r.segment_id) {
                g.push(k);
                p.push(r.y_hat);
            }
        }
        if g.is_empty() {
            return Err(CliError::schema("no prediction has a gold label"));
        }
        let report = evaluate(&g, &p, &gold.names)?;
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::schema(e.to_string()))? + "\n";
        write_atomic(&out, text.as_bytes())?;
        write_atomic(&confusion, report.confusion.to_tsv().as_bytes())?;
        let mut lines = report_lines(&report);
        if rows.len() > g.len() {
            lines.push(format!("{} predictions without a gold label were skipped", rows.len() - g.len()));
        }
        Ok((to_json_value(&report), lines))
    })
}

pub fn ablate(ctx: &Ctx) -> CliResult<Report> {
    by_scalar!(ctx, ablate_as(ctx))
}

fn ablate_as<T: Scalar>(ctx: &Ctx) -> CliResult<Report> {
    let ws = &ctx.ws;
    let c = &ctx.config;
    let lexicon = required(&c.paths.lexicon, "paths.lexicon")?;
    let inputs = vec![ws.vocabulary(), ws.segments(), ws.word_vectors(), ws.initial_aspects(), lexicon.clone()];
    let cfg = json!({ "scalar": c.scalar, "teacher": c.teacher, "ablation": c.ablation, "mapping": c.mapping, "top_k": c.keywords.top_k });
    let plan = StagePlan::new(ws, "ablate", &cfg, inputs, vec![ws.ablation()])?;
    run_stage(ctx, plan, || {
        let bundle = load_bundle(ws)?;
        let vectors = load_vectors::<T>(&ws.word_vectors(), bundle.vocabulary.words(), "vocabulary")?;
        let aspects =
            load_vectors::<T>(&ws.initial_aspects(), &aspect_names(c.teacher.n_aspects), "configured aspect count")?;
        let lex = read_lexicon(lexicon)?;
        let rows = ablation_run(&c.ablation, |point| {
            match scripted_ablation_scores(
                &bundle,
                &vectors,
                &aspects,
                &lex,
                c.mapping.min_share,
                &c.teacher,
                point,
                c.keywords.top_k,
            ) {
                Err(sscl_core::Error::NothingMapped) => {
                    log::warn!("{point:?}: no aspect could be mapped; scored as 0");
                    Ok(AblationScores { micro_f1: 0.0, weighted_f1: 0.0 })
                }
                other => other,
            }
        })?;
        write_results(&ws.ablation(), &rows)?;
        let lines = rows
            .iter()
            .map(|r| {
                let p = &r.point;
                format!(
                    "{} λ={} batch={} seed={}: micro-F1 {:.4}",
                    p.attention, p.lambda, p.batch_size, p.seed, r.scores.micro_f1
                )
            })
            .collect();
        Ok((json!({ "rows": to_json_value(&rows) }), lines))
    })
}

/// Write a planted-topic corpus plus an `sscl.toml` pointing at it.
pub fn synth(ctx: &Ctx, out: &Path, noisy: bool) -> CliResult<Report> {
    let mut cfg = ctx.config.synthetic.clone();
    if noisy {
        cfg = sscl_core::synthetic::SyntheticConfig { topic_share: 0.45, cross_topic_rate: 0.25, ..cfg };
    }
    let corpus = generate(&cfg)?;
    corpus.write(out)?;
    let abs = std::fs::canonicalize(out).map_err(|e| CliError::from(sscl_core::Error::io(out, e)))?;
    let s = |f: &str| abs.join(f).display().to_string().replace('\\', "/");
    let profile = sscl_core::pipeline::PipelineConfig::synthetic(ctx.config.seed);
    let toml = format!(
        "seed = {seed}\n\n[paths]\ntrain = {train:?}\ndev = {dev:?}\ntest = {test:?}\naspects = {aspects:?}\nlexicon = {lexicon:?}\n\n\
         [embeddings]\nepochs = {epochs}\nsubsample = 0.0\n\n[teacher]\nn_aspects = {n}\n\n[teacher.optimizer]\nlr_scale = {tl:?}\n\n\
         [distill.optimizer]\nlr_scale = {dl:?}\n",
        seed = ctx.config.seed,
        train = s("train.txt"),
        dev = s("dev.tsv"),
        test = s("test.tsv"),
        aspects = s("aspects.txt"),
        lexicon = s("lexicon.tsv"),
        epochs = profile.embeddings.epochs,
        n = profile.teacher.n_aspects,
        tl = profile.teacher.optimizer.lr_scale,
        dl = profile.distill.optimizer.lr_scale,
    );
    write_atomic(&out.join("sscl.toml"), toml.as_bytes())?;
    Ok(Report {
        summary: json!({ "segments": corpus.segments.len(), "topics": corpus.gold.len(), "dir": abs }),
        lines: vec![format!(
            "{} segments over {} topics written to {}",
            corpus.segments.len(),
            corpus.gold.len(),
            abs.display()
        )],
    })
}

pub fn show_config(ctx: &Ctx) -> CliResult<Report> {
    Ok(Report { summary: to_json_value(&ctx.config), lines: vec![ctx.config.to_toml()] })
}
