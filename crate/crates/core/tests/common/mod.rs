//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use igd::eval::ScoredSample;
use igd::nn::{Gradients, Mlp};
use igd::rng::SeedStream;
use igd::world::Variant;

/// Largest relative error between `grads` and central differences of `loss`.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn fd_max_rel_err(net: &Mlp, grads: &Gradients, h: f64, loss: impl Fn(&Mlp) -> f64) -> f64 {
    let base = net.params_flat();
    let analytic = grads.flat();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_params_flat(&p).unwrap();
        let up = loss(&probe);
        p[k] = base[k] - h;
        probe.set_params_flat(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * h);
        let denom = numeric.abs().max(analytic[k].abs()).max(1e-6);
        worst = worst.max((numeric - analytic[k]).abs() / denom);
    }
    worst
}

/// Random net with 1..=max_layers weight layers and widths in 1..=max_width.
pub fn random_net(rng: &mut SeedStream, max_layers: usize, max_width: usize, out: usize) -> Mlp {
    let layers = rng.below(1, max_layers + 1);
    let mut dims: Vec<usize> = (0..layers).map(|_| rng.below(1, max_width + 1)).collect();
    dims.push(out);
    let mut net = Mlp::glorot(&dims, rng.next_u64()).unwrap();
    // Non-zero biases so hidden units sit away from the ReLU kink more often.
    for b in net.biases_mut() {
        for v in b.iter_mut() {
            *v = 0.1 * rng.normal();
        }
    }
    net
}

/// Pairwise definition: mean over (pos, neg) of 1 / 0.5 / 0.
pub fn brute_auroc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                total += 1.0;
            } else if scores[i] == scores[j] {
                total += 0.5;
            }
        }
    }
    total / pairs as f64
}

/// Threshold scan in ascending order, recounting TPR/FPR from scratch at each
/// candidate.
pub fn scan_fpr_at_tpr95(labels: &[u8], scores: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(f64::NEG_INFINITY);
    candidates.sort_by(f64::total_cmp);
    let pos = labels.iter().filter(|l| **l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut best = f64::INFINITY;
    for th in candidates {
        let tp = labels.iter().zip(scores).filter(|(l, s)| **l == 1 && **s >= th).count() as f64;
        let fp = labels.iter().zip(scores).filter(|(l, s)| **l == 0 && **s >= th).count() as f64;
        if tp / pos >= 0.95 - 1e-12 {
            best = best.min(fp / neg);
        }
    }
    best
}

pub fn to_samples(labels: &[u8], scores: &[f64]) -> Vec<ScoredSample> {
    labels
        .iter()
        .zip(scores)
        .map(|(&l, &s)| ScoredSample::new(s, l, if l == 1 { Variant::Naive } else { Variant::Clean }, 0).unwrap())
        .collect()
}

/// Random labelled score set with both classes; half the sets use a coarse
/// grid so ties are common.
pub fn random_scored_set(rng: &mut SeedStream, max_n: usize) -> (Vec<u8>, Vec<f64>) {
    let n = rng.below(2, max_n + 1);
    let coarse = rng.below(0, 2) == 0;
    let mut labels: Vec<u8> = (0..n).map(|_| rng.below(0, 2) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n)
        .map(|_| {
            let u = rng.uniform(0.0, 1.0);
            if coarse {
                (u * 10.0).floor() / 10.0
            } else {
                u
            }
        })
        .collect();
    (labels, scores)
}
