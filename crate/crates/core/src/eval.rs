//! Segment-level metrics and the ablation grid driver.
//!
//! Predictions are `Option<usize>`: `None` is the Unknown label, which is
//! never correct and is not counted as a prediction of any aspect.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

fn check_lengths(gold: &[usize], pred: &[Option<usize>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            what: "gold vs predicted labels",
            expected: vec![gold.len()],
            found: vec![pred.len()],
        });
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("no segments to evaluate".into()));
    }
    Ok(())
}

/// Micro-averaged F1 for single-label multi-class data, which equals accuracy.
pub fn micro_f1(gold: &[usize], pred: &[Option<usize>]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let correct = gold.iter().zip(pred).filter(|(g, p)| Some(**g) == **p).count();
    Ok(correct as f64 / gold.len() as f64)
}

pub fn accuracy(gold: &[usize], pred: &[Option<usize>]) -> Result<f64> {
    check_lengths(gold, pred)?;
    Ok(gold.iter().zip(pred).filter(|(g, p)| Some(**g) == **p).count() as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: u64, predicted: u64, actual: u64) -> Self {
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// Counts indexed `[gold][pred]`, plus one Unknown column per gold aspect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub unknown: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(gold: &[usize], pred: &[Option<usize>], labels: &[String]) -> Result<Self> {
        check_lengths(gold, pred)?;
        let k = labels.len();
        let mut counts = vec![vec![0u64; k]; k];
        let mut unknown = vec![0u64; k];
        for (&g, p) in gold.iter().zip(pred) {
            if g >= k || p.is_some_and(|p| p >= k) {
                return Err(Error::InvalidArgument(format!("label outside 0..{k}")));
            }
            match p {
                Some(p) => counts[g][*p] += 1,
                None => unknown[g] += 1,
            }
        }
        Ok(Self { labels: labels.to_vec(), counts, unknown })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unknown.iter().sum::<u64>()
    }

    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum::<u64>() + self.unknown[k]
    }

    pub fn prf(&self, k: usize) -> Result<Prf> {
        if k >= self.labels.len() {
            return Err(Error::InvalidArgument(format!("unknown aspect index {k}")));
        }
        let tp = self.counts[k][k];
        let predicted: u64 = self.counts.iter().map(|row| row[k]).sum();
        Ok(Prf::from_counts(tp, predicted, self.support(k)))
    }

    /// Support-weighted average of per-aspect P, R and F.
    pub fn weighted_macro(&self) -> Prf {
        let total = self.total() as f64;
        let mut out = Prf { precision: 0.0, recall: 0.0, f1: 0.0 };
        for k in 0..self.labels.len() {
            let w = self.support(k) as f64 / total;
            let p = self.prf(k).expect("index in range");
            out.precision += w * p.precision;
            out.recall += w * p.recall;
            out.f1 += w * p.f1;
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("gold\\pred\t{}\t{}\n", self.labels.join("\t"), crate::aspects::UNKNOWN_LABEL);
        for (k, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{}\t{}\t{}", self.labels[k], cells.join("\t"), self.unknown[k]);
        }
        s
    }
}

/// One-vs-rest precision, recall and F1 for aspect `k`.
pub fn per_aspect_prf(gold: &[usize], pred: &[Option<usize>], k: usize, n_labels: usize) -> Result<Prf> {
    check_lengths(gold, pred)?;
    if k >= n_labels {
        return Err(Error::InvalidArgument(format!("unknown aspect index {k}")));
    }
    let tp = gold.iter().zip(pred).filter(|(g, p)| **g == k && **p == Some(k)).count() as u64;
    let predicted = pred.iter().filter(|p| **p == Some(k)).count() as u64;
    let actual = gold.iter().filter(|g| **g == k).count() as u64;
    Ok(Prf::from_counts(tp, predicted, actual))
}

pub fn weighted_macro_prf(gold: &[usize], pred: &[Option<usize>], n_labels: usize) -> Result<Prf> {
    let names: Vec<String> = (0..n_labels).map(|k| k.to_string()).collect();
    Ok(ConfusionMatrix::new(gold, pred, &names)?.weighted_macro())
}

/// Everything reported for one evaluated prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_segments: usize,
    pub micro_f1: f64,
    pub weighted_macro: Prf,
    pub per_aspect: Vec<(String, Prf)>,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(gold: &[usize], pred: &[Option<usize>], labels: &[String]) -> Result<EvalReport> {
    let confusion = ConfusionMatrix::new(gold, pred, labels)?;
    let per_aspect = (0..labels.len()).map(|k| Ok((labels[k].clone(), confusion.prf(k)?))).collect::<Result<_>>()?;
    Ok(EvalReport {
        n_segments: gold.len(),
        micro_f1: micro_f1(gold, pred)?,
        weighted_macro: confusion.weighted_macro(),
        per_aspect,
        confusion,
    })
}

/// Axes of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub attention: Vec<AttentionKind>,
    pub lambda: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            attention: vec![AttentionKind::Smooth, AttentionKind::Regular, AttentionKind::Average],
            lambda: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            batch_size: vec![10, 20, 50, 100, 200],
            seeds: vec![1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub attention: AttentionKind,
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl AblationGrid {
    /// Grid points in a fixed order. λ only varies for smooth attention; the
    /// other kinds ignore it and run once per batch size and seed.
    pub fn points(&self) -> Vec<AblationPoint> {
        let mut out = Vec::new();
        for &attention in &self.attention {
            let lambdas: &[f64] = if attention == AttentionKind::Smooth {
                &self.lambda
            } else {
                &self.lambda[..self.lambda.len().min(1)]
            };
            for &lambda in lambdas {
                for &batch_size in &self.batch_size {
                    for &seed in &self.seeds {
                        out.push(AblationPoint { attention, lambda, batch_size, seed });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationScores {
    pub micro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub point: AblationPoint,
    pub scores: AblationScores,
}

/// Run `runner` on every grid point in order.
pub fn ablation_run(
    grid: &AblationGrid,
    mut runner: impl FnMut(&AblationPoint) -> Result<AblationScores>,
) -> Result<Vec<AblationRow>> {
    grid.points()
        .into_iter()
        .map(|point| {
            let scores = runner(&point)?;
            log::info!(
                "ablation {} λ={} batch={} seed={}: micro-F1 {:.4}",
                point.attention,
                point.lambda,
                point.batch_size,
                point.seed,
                scores.micro_f1
            );
            Ok(AblationRow { point, scores })
        })
        .collect()
}

pub const RESULTS_HEADER: &str = "attention\tlambda\tbatch_size\tseed\tmicro_f1\tweighted_f1";

pub fn results_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        let p = &r.point;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            p.attention, p.lambda, p.batch_size, p.seed, r.scores.micro_f1, r.scores.weighted_f1
        );
    }
    s
}

pub fn write_results(path: &Path, rows: &[AblationRow]) -> Result<()> {
    write_atomic(path, results_tsv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn micro_examples() {
        assert_eq!(micro_f1(&[0, 1, 2], &[Some(0), Some(1), Some(2)]).unwrap(), 1.0);
        assert!((micro_f1(&[0, 1, 1], &[Some(0), Some(0), Some(1)]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(micro_f1(&[], &[]).is_err());
        assert!(micro_f1(&[0], &[]).is_err());
    }

    #[test]
    fn degenerate_conventions() {
        let p = per_aspect_prf(&[0, 0], &[Some(0), Some(0)], 1, 2).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = per_aspect_prf(&[0, 0], &[Some(0), Some(0)], 0, 2).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        assert!(per_aspect_prf(&[0], &[Some(0)], 5, 2).is_err());
    }

    #[test]
    fn three_class_hand_count() {
        // gold:  0 0 0 1 1 2 2 2 2
        // pred:  0 1 0 1 2 2 2 0 ?
        let gold = [0, 0, 0, 1, 1, 2, 2, 2, 2];
        let pred = [Some(0), Some(1), Some(0), Some(1), Some(2), Some(2), Some(2), Some(0), None];
        // aspect 0: tp 2, predicted 3, actual 3
        // aspect 1: tp 1, predicted 2, actual 2
        // aspect 2: tp 2, predicted 3, actual 4
        let expect = [(2.0 / 3.0, 2.0 / 3.0), (0.5, 0.5), (2.0 / 3.0, 0.5)];
        let cm = ConfusionMatrix::new(&gold, &pred, &names(3)).unwrap();
        assert_eq!(cm.total(), 9);
        let mut wp = 0.0;
        let mut wr = 0.0;
        let mut wf = 0.0;
        for (k, &(p, r)) in expect.iter().enumerate() {
            let got = per_aspect_prf(&gold, &pred, k, 3).unwrap();
            let f = 2.0 * p * r / (p + r);
            assert!((got.precision - p).abs() < 1e-15 && (got.recall - r).abs() < 1e-15 && (got.f1 - f).abs() < 1e-15);
            assert_eq!(cm.prf(k).unwrap(), got);
            let w = [3.0, 2.0, 4.0][k] / 9.0;
            wp += w * p;
            wr += w * r;
            wf += w * f;
        }
        let m = weighted_macro_prf(&gold, &pred, 3).unwrap();
        assert!((m.precision - wp).abs() < 1e-15 && (m.recall - wr).abs() < 1e-15 && (m.f1 - wf).abs() < 1e-15);
        assert!((micro_f1(&gold, &pred).unwrap() - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_macro_special_cases() {
        // uniform support equals the plain mean
        let gold = [0, 0, 1, 1, 2, 2];
        let pred = [Some(0), Some(1), Some(1), Some(1), Some(0), Some(2)];
        let cm = ConfusionMatrix::new(&gold, &pred, &names(3)).unwrap();
        let mean_f = (0..3).map(|k| cm.prf(k).unwrap().f1).sum::<f64>() / 3.0;
        assert!((cm.weighted_macro().f1 - mean_f).abs() < 1e-15);
        // single-class gold equals that class
        let gold = [1, 1, 1];
        let pred = [Some(1), Some(0), Some(1)];
        let m = weighted_macro_prf(&gold, &pred, 3).unwrap();
        assert_eq!(m, per_aspect_prf(&gold, &pred, 1, 3).unwrap());
    }

    #[test]
    fn grid_row_count() {
        let grid = AblationGrid {
            attention: vec![AttentionKind::Smooth, AttentionKind::Regular],
            lambda: vec![0.5, 5.0],
            batch_size: vec![10, 50],
            seeds: vec![1, 2],
        };
        let rows = ablation_run(&grid, |_| Ok(AblationScores { micro_f1: 0.5, weighted_f1: 0.5 })).unwrap();
        assert_eq!(rows.len(), grid.points().len());
        assert_eq!(rows.len(), (2 + 1) * 2 * 2);
        assert_eq!(results_tsv(&rows).lines().count(), rows.len() + 1);
    }

    proptest! {
        #[test]
        fn metric_identities(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60), shift in 1usize..4) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.1)).collect();
            let micro = micro_f1(&gold, &pred).unwrap();
            prop_assert_eq!(micro, accuracy(&gold, &pred).unwrap());
            let m = weighted_macro_prf(&gold, &pred, 4).unwrap();
            prop_assert!((m.recall - micro).abs() < 1e-12);
            // relabel consistently
            let g2: Vec<usize> = gold.iter().map(|g| (g + shift) % 4).collect();
            let p2: Vec<Option<usize>> = pred.iter().map(|p| p.map(|p| (p + shift) % 4)).collect();
            prop_assert_eq!(micro_f1(&g2, &p2).unwrap(), micro);
            let m2 = weighted_macro_prf(&g2, &p2, 4).unwrap();
            prop_assert!((m2.f1 - m.f1).abs() < 1e-12 && (m2.precision - m.precision).abs() < 1e-12);
        }
    }
}
