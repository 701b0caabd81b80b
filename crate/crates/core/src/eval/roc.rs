use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::ScoredSample;
use crate::error::{Error, Result};
use crate::io::write_text;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per unique score in descending order, preceded by `(+inf, 0, 0)`.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<Vec<RocPoint>> {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Config("ROC needs both classes".into()));
    }
    let mut sorted: Vec<(f64, u8)> = samples.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, (score, label)) in sorted.iter().enumerate() {
        if *label == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        if sorted.get(i + 1).is_none_or(|n| n.0 != *score) {
            pts.push(RocPoint {
                threshold: *score,
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
            });
        }
    }
    Ok(pts)
}

/// Trapezoidal area under a curve ordered by ascending FPR.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).expect("write to string");
    }
    out
}

pub fn roc_export(samples: &[ScoredSample], path: &Path) -> Result<Vec<RocPoint>> {
    let pts = roc_curve(samples)?;
    write_text(path, &roc_csv(&pts))?;
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::{auroc, samples};

    #[test]
    fn separated_pair() {
        let pts = roc_curve(&samples(&[1, 0], &[0.9, 0.1])).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[1].fpr, pts[1].tpr), (0.0, 1.0));
        assert_eq!(roc_area(&pts), 1.0);
    }

    #[test]
    fn monotone_and_area_matches() {
        let s = samples(&[1, 0, 1, 1, 0, 0, 1], &[0.4, 0.4, 0.9, 0.2, 0.5, 0.1, 0.4]);
        let pts = roc_curve(&s).unwrap();
        assert!(pts.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        assert!(pts.windows(2).all(|w| w[1].threshold < w[0].threshold));
        assert!((roc_area(&pts) - auroc(&s).unwrap()).abs() < 1e-12);
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/roc.csv");
        roc_export(&samples(&[1, 0], &[0.75, 0.25]), &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "threshold,fpr,tpr\ninf,0,0\n0.75,0,1\n0.25,1,1\n");
    }
}
