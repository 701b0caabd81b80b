use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::world::PromptRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `n x k` projected coordinates.
    pub points: Vec<Vec<f64>>,
    pub explained_ratio: Vec<f64>,
    /// Unit-norm principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
}

/// Projects centred data onto the top `k` eigenvectors of its covariance.
/// Each axis is signed so that its first non-negligible loading is positive.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Projection> {
    if vectors.len() < 2 {
        return Err(Error::Config("PCA needs at least 2 points".into()));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Config("PCA input has ragged rows".into()));
    }
    if k == 0 || k > d {
        return Err(out_of_range("k", k, format!("[1, {d}]")));
    }
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let mut components = Vec::with_capacity(k);
    let mut explained_ratio = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        if axis.iter().find(|v| v.abs() > 1e-12).is_some_and(|v| *v < 0.0) {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        let lambda = eig.eigenvalues[c].max(0.0);
        explained_ratio.push(if total > 0.0 { lambda / total } else { 0.0 });
    }
    let points = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|a| (0..d).map(|j| centred[(i, j)] * a[j]).sum())
                .collect()
        })
        .collect();
    Ok(Projection {
        points,
        explained_ratio,
        components,
    })
}

/// CSV with header `x,y,label,variant,concept_id`.
pub fn projection_csv(points: &[Vec<f64>], prompts: &[PromptRecord]) -> Result<String> {
    if points.len() != prompts.len() || points.iter().any(|p| p.len() < 2) {
        return Err(Error::Config("projection rows and prompts disagree".into()));
    }
    let mut out = String::from("x,y,label,variant,concept_id\n");
    for (p, r) in points.iter().zip(prompts) {
        let label = match r.label {
            crate::world::Label::Clean => "clean",
            crate::world::Label::Nsfw => "nsfw",
        };
        writeln!(out, "{},{},{},{},{}", p[0], p[1], label, r.variant, r.concept_id).expect("write to string");
    }
    Ok(out)
}
