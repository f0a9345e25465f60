use sscl_core::aspects::infer_segment;
use sscl_core::checkpoint::{Checkpoint, ModelKind};
use sscl_core::corpus::Split;
use sscl_core::distill::{distill_train, DistillConfig, FilterConfig, StudentModel};
use sscl_core::pipeline::{
    label_segments, prepare_synthetic, run_synthetic, stage_seed, student_encode, student_vocabulary,
    train_word_vectors, PipelineConfig, Stage,
};
use sscl_core::sscl::SsclModel;
use sscl_core::synthetic::SyntheticConfig;

#[test]
fn teacher_loss_falls_and_keyword_segments_map_to_their_topic() {
    let cfg = PipelineConfig::synthetic(2);
    let prepared = prepare_synthetic::<f64>(&SyntheticConfig::default(), &cfg).unwrap();
    let run = prepared.run_teacher(&cfg.teacher, cfg.keywords.top_k).unwrap();
    let losses = &run.report.epoch_losses;
    assert!(losses[2] < losses[0], "{losses:?}");

    let vocab = &prepared.bundle.vocabulary;
    let mut checked = 0;
    for kw in &run.keywords {
        let Some(target) = run.mapping.get(kw.aspect_index) else { continue };
        let tokens: Vec<usize> = kw.keywords.iter().filter_map(|k| vocab.index(&k.token)).collect();
        let label = infer_segment(&tokens, &run.model, &run.mapping).unwrap();
        assert_eq!(label.y_hat, Some(target), "MIA {} keywords", kw.aspect_index);
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn filtered_training_set_is_easier_than_unfiltered() {
    let cfg = PipelineConfig::synthetic(4);
    let prepared = prepare_synthetic::<f64>(&SyntheticConfig::noisy(4), &cfg).unwrap();
    let run = prepared.run_teacher(&cfg.teacher, cfg.keywords.top_k).unwrap();
    let bundle = &prepared.bundle;
    let train: Vec<_> = bundle.split(Split::Train).collect();
    let labels = label_segments(&run.model, &train, &run.mapping).unwrap();

    let vocab = student_vocabulary(&bundle.segments, 2).unwrap();
    let tokens: Vec<Vec<usize>> = train.iter().map(|s| student_encode(&vocab, &s.raw_text)).collect();
    let vectors =
        train_word_vectors::<f64>(&tokens, vocab.len(), &cfg.embeddings, stage_seed(4, Stage::StudentVectors)).unwrap();

    let final_loss = |filter: FilterConfig| {
        let mut config = DistillConfig { filter, epochs: 20, ..cfg.distill.clone() };
        config.optimizer.lr_scale = 100.0;
        let mut student =
            StudentModel::new(vectors.clone(), bundle.gold_aspects.len(), 0.5, config.attention, 9).unwrap();
        let report = distill_train(&mut student, &tokens, &labels, None, &config, 10, None).unwrap();
        (report.n_train, *report.epoch_losses.last().unwrap())
    };
    let (n_conf, confident) = final_loss(FilterConfig::default());
    let (n_all, everything) = final_loss(FilterConfig::disabled());
    assert!(n_conf < n_all);
    assert_eq!(n_all, labels.iter().filter(|l| l.y_hat.is_some() && !l.unmappable).count());
    assert!(everything >= confident, "unfiltered {everything} ({n_all}) vs confident {confident} ({n_conf})");
}

#[test]
fn f32_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = SyntheticConfig { n_segments: 1000, ..SyntheticConfig::default() };
    let out = run_synthetic::<f32>(&synthetic, &PipelineConfig::synthetic(3), Some(dir.path())).unwrap();
    assert!(out.teacher_dev_micro_f1 >= 0.85, "{out:?}");
    assert!(out.student_dev_micro_f1 >= 0.85, "{out:?}");
    let teacher =
        Checkpoint::<SsclModel<f32>>::load::<f32>(&dir.path().join("teacher.json"), ModelKind::Teacher).unwrap();
    assert_eq!(teacher.scalar, "f32");
    assert!(Checkpoint::<SsclModel<f64>>::load::<f64>(&dir.path().join("teacher.json"), ModelKind::Teacher).is_err());
}
