use serde::{Deserialize, Serialize};

use crate::error::{check_dim, out_of_range, Error, Result};
use crate::world::Variant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    /// 0 clean, 1 NSFW.
    pub label: u8,
    pub variant: Variant,
    pub concept_id: usize,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8, variant: Variant, concept_id: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(out_of_range("score", score, "[0, 1]"));
        }
        if label > 1 {
            return Err(out_of_range("label", label, "{0, 1}"));
        }
        Ok(Self {
            score,
            label,
            variant,
            concept_id,
        })
    }
}

fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Config(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Fraction of samples where `score >= threshold` agrees with the label.
pub fn accuracy(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("accuracy of an empty set".into()));
    }
    let hits = samples
        .iter()
        .filter(|s| (s.score >= threshold) == (s.label == 1))
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Scores grouped by value in ascending order, with per-group (pos, neg) counts.
fn tie_groups(samples: &[ScoredSample]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<(f64, u8)> = samples.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (score, label) in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == score => {
                if label == 1 {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((score, usize::from(label == 1), usize::from(label != 1))),
        }
    }
    groups
}

/// Probability a random positive outscores a random negative, ties counted half.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    let mut neg_below = 0usize;
    // Twice the Mann-Whitney U, kept integral.
    let mut u2: u128 = 0;
    for (_, p, n) in tie_groups(samples) {
        u2 += (2 * p * neg_below + p * n) as u128;
        neg_below += n;
    }
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Lowest FPR over thresholds `{scores} ∪ {-inf}` (rule `score >= θ`) whose
/// TPR is at least 0.95.
pub fn fpr_at_tpr95(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    let mut best = neg; // θ = -inf admits everything.
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in tie_groups(samples).into_iter().rev() {
        tp += p;
        fp += n;
        if tp * 100 >= 95 * pos {
            best = best.min(fp);
        }
    }
    Ok(best as f64 / neg as f64)
}

/// `counts[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_dim("confusion inputs", labels.len(), predictions.len())?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(out_of_range("class", p.max(t), format!("[0, {n_classes})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auroc: f64,
    pub fpr_at_tpr95: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn compute(samples: &[ScoredSample], threshold: f64) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(samples)?;
        let preds: Vec<usize> = samples.iter().map(|s| usize::from(s.score >= threshold)).collect();
        let labels: Vec<usize> = samples.iter().map(|s| usize::from(s.label)).collect();
        Ok(Self {
            accuracy: accuracy(samples, threshold)?,
            auroc: auroc(samples)?,
            fpr_at_tpr95: fpr_at_tpr95(samples)?,
            n_pos,
            n_neg,
            confusion: confusion_matrix(&preds, &labels, 2)?,
        })
    }
}

#[cfg(test)]
pub(crate) fn samples(labels: &[u8], scores: &[f64]) -> Vec<ScoredSample> {
    labels
        .iter()
        .zip(scores)
        .map(|(&l, &s)| ScoredSample {
            score: s,
            label: l,
            variant: if l == 1 { Variant::Naive } else { Variant::Clean },
            concept_id: 0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            accuracy(&samples(&[1, 0, 1], &[0.9, 0.1, 0.2]), 0.5).unwrap(),
            2.0 / 3.0
        );
        assert_eq!(accuracy(&samples(&[1, 0], &[0.9, 0.1]), 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&samples(&[1, 0, 1, 0, 0], &[0.5; 5]), 0.5).unwrap(), 0.4);
        assert!(accuracy(&[], 0.5).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&samples(&[1, 1, 0, 0], &[0.8, 0.4, 0.6, 0.2])).unwrap(), 0.75);
        assert_eq!(auroc(&samples(&[1, 1, 0, 0], &[0.9, 0.8, 0.2, 0.1])).unwrap(), 1.0);
        assert_eq!(auroc(&samples(&[1, 0, 0, 1], &[0.3; 4])).unwrap(), 0.5);
        assert!(auroc(&samples(&[1, 1], &[0.3, 0.4])).is_err());
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(
            fpr_at_tpr95(&samples(&[1, 1, 0, 0], &[0.9, 0.8, 0.2, 0.1])).unwrap(),
            0.0
        );
        assert_eq!(fpr_at_tpr95(&samples(&[1, 0, 0, 1], &[0.3; 4])).unwrap(), 1.0);
        let mut labels = vec![1u8; 20];
        labels.extend([0u8; 20]);
        let mut scores = vec![0.6; 19];
        scores.push(0.1);
        scores.extend([0.5; 10]);
        scores.extend([0.7; 10]);
        assert_eq!(fpr_at_tpr95(&samples(&labels, &scores)).unwrap(), 0.5);
        assert!(fpr_at_tpr95(&samples(&[0], &[0.3])).is_err());
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(
            confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap(),
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]
        );
        assert_eq!(confusion_matrix(&[1], &[0], 2).unwrap(), vec![vec![0, 1], vec![0, 0]]);
        assert!(confusion_matrix(&[2], &[0], 2).is_err());
        assert!(confusion_matrix(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn report_counts() {
        let s = samples(&[1, 0, 1, 0, 0], &[0.9, 0.6, 0.2, 0.1, 0.3]);
        let r = EvalReport::compute(&s, 0.5).unwrap();
        assert_eq!((r.n_pos, r.n_neg), (2, 3));
        assert_eq!(r.confusion, vec![vec![2, 1], vec![1, 1]]);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 5);
        assert!(ScoredSample::new(1.5, 0, Variant::Clean, 0).is_err());
    }
}
