//! Planted-topic corpus generator.
//!
//! Every segment is drawn from a single topic: most tokens come from that
//! topic's private vocabulary (Zipf-weighted), the rest are shared background
//! words, common stopwords, and occasional words from another topic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldAspects, RawSegment, Split};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

const FILLER: &[&str] = &["the", "a", "it", "is", "and", "was", "this", "very", "of", "to"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub background_words: usize,
    pub n_segments: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a content token comes from the segment's own topic.
    pub topic_share: f64,
    /// Probability that a content token comes from a different topic.
    pub cross_topic_rate: f64,
    /// Probability that a token is a stopword.
    pub stopword_rate: f64,
    pub zipf_exponent: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_topics: 5,
            words_per_topic: 50,
            background_words: 30,
            n_segments: 2000,
            min_len: 6,
            max_len: 14,
            topic_share: 0.6,
            cross_topic_rate: 0.05,
            stopword_rate: 0.2,
            zipf_exponent: 0.6,
            dev_fraction: 0.1,
            test_fraction: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub segments: Vec<RawSegment>,
    pub gold: GoldAspects,
    /// Topic word → topic name.
    pub lexicon: BTreeMap<String, String>,
    pub topic_words: Vec<Vec<String>>,
}

pub fn topic_name(k: usize) -> String {
    format!("topic{k}")
}

fn topic_word(k: usize, i: usize) -> String {
    format!("t{k}w{i}")
}

fn background_word(i: usize) -> String {
    format!("bg{i}")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.n_topics < 2 || config.words_per_topic == 0 || config.n_segments == 0 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs ≥ 2 topics, ≥ 1 word per topic and ≥ 1 segment".into(),
        ));
    }
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::InvalidArgument("segment length range must satisfy 1 ≤ min_len ≤ max_len".into()));
    }
    let probs =
        [config.topic_share, config.cross_topic_rate, config.stopword_rate, config.dev_fraction, config.test_fraction];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || config.topic_share + config.cross_topic_rate > 1.0 {
        return Err(Error::InvalidArgument("synthetic corpus rates must be probabilities".into()));
    }
    if config.dev_fraction + config.test_fraction >= 1.0 {
        return Err(Error::InvalidArgument("dev and test fractions leave no training data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let topic_words: Vec<Vec<String>> =
        (0..config.n_topics).map(|k| (0..config.words_per_topic).map(|i| topic_word(k, i)).collect()).collect();
    let background: Vec<String> = (0..config.background_words).map(background_word).collect();
    let zipf = WeightedIndex::new((0..config.words_per_topic).map(|i| (i as f64 + 1.0).powf(-config.zipf_exponent)))
        .expect("positive weights");

    let names: Vec<String> = (0..config.n_topics).map(topic_name).collect();
    let lexicon =
        topic_words.iter().enumerate().flat_map(|(k, ws)| ws.iter().map(move |w| (w.clone(), topic_name(k)))).collect();

    let n_dev = (config.n_segments as f64 * config.dev_fraction).round() as usize;
    let n_test = (config.n_segments as f64 * config.test_fraction).round() as usize;
    let n_train = config.n_segments - n_dev - n_test;
    let mut segments = Vec::with_capacity(config.n_segments);
    for s in 0..config.n_segments {
        let topic = s % config.n_topics;
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut words: Vec<&str> = Vec::with_capacity(len);
        let mut has_topic_word = false;
        for _ in 0..len {
            if rng.random::<f64>() < config.stopword_rate {
                words.push(FILLER[rng.random_range(0..FILLER.len())]);
                continue;
            }
            let r = rng.random::<f64>();
            if r < config.topic_share || background.is_empty() && r >= config.topic_share + config.cross_topic_rate {
                words.push(&topic_words[topic][zipf.sample(&mut rng)]);
                has_topic_word = true;
            } else if r < config.topic_share + config.cross_topic_rate {
                let other = (topic + rng.random_range(1..config.n_topics)) % config.n_topics;
                words.push(&topic_words[other][zipf.sample(&mut rng)]);
            } else {
                words.push(&background[rng.random_range(0..background.len())]);
            }
        }
        if !has_topic_word {
            let pos = rng.random_range(0..words.len());
            words[pos] = &topic_words[topic][zipf.sample(&mut rng)];
        }
        let split = if s < n_train {
            Split::Train
        } else if s < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        segments.push(RawSegment {
            segment_id: format!("syn-{s:05}"),
            split,
            text: capitalize_sentence(&words),
            gold_aspect: Some(topic_name(topic)),
        });
    }
    let gold = GoldAspects::new(names, None)?;
    Ok(SyntheticCorpus { segments, gold, lexicon, topic_words })
}

fn capitalize_sentence(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push('.');
    s
}

impl SyntheticCorpus {
    /// Write the corpus in the CLI's input formats: `train.txt` (one segment
    /// per line), `dev.tsv` and `test.tsv` (`id<TAB>aspect<TAB>text`),
    /// `aspects.txt` (one gold aspect name per line) and `lexicon.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut train = String::new();
        let mut dev = String::new();
        let mut test = String::new();
        for s in &self.segments {
            let gold = s.gold_aspect.as_deref().unwrap_or_default();
            match s.split {
                Split::Train => {
                    let _ = writeln!(train, "{}", s.text);
                }
                Split::Dev => {
                    let _ = writeln!(dev, "{}\t{gold}\t{}", s.segment_id, s.text);
                }
                Split::Test => {
                    let _ = writeln!(test, "{}\t{gold}\t{}", s.segment_id, s.text);
                }
            }
        }
        let aspects: String = self.gold.names.iter().map(|n| format!("{n}\n")).collect();
        let lexicon: String = self.lexicon.iter().map(|(w, a)| format!("{w}\t{a}\n")).collect();
        write_atomic(&dir.join("train.txt"), train.as_bytes())?;
        write_atomic(&dir.join("dev.tsv"), dev.as_bytes())?;
        write_atomic(&dir.join("test.tsv"), test.as_bytes())?;
        write_atomic(&dir.join("aspects.txt"), aspects.as_bytes())?;
        write_atomic(&dir.join("lexicon.tsv"), lexicon.as_bytes())
    }
}
