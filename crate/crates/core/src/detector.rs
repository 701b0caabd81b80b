//! Predicted-noise features and the classifier that reads them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, out_of_range, Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::{softmax, Adam, AdamConfig, BatchGrad, Mlp, MlpCheckpoint};
use crate::par::Exec;
use crate::rng::{derive_seed, SeedStream};
use crate::sampler::{NoisePredictor, ReverseLoop};
use crate::schedule::{InferenceStepMap, NoiseSchedule};

/// Predicted noise at the given 1-based inference steps, concatenated in step order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFeature {
    pub steps: Vec<usize>,
    pub vector: Vec<f64>,
}

/// Steps must be non-empty, strictly ascending and within `[1, s]`.
pub fn validate_steps(steps: &[usize], s: usize) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::Config("no feature steps given".into()));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "feature steps must be strictly ascending: {steps:?}"
        )));
    }
    if steps[0] == 0 || steps[steps.len() - 1] > s {
        return Err(out_of_range("feature step", format!("{steps:?}"), format!("[1, {s}]")));
    }
    Ok(())
}

/// Predicted noise at steps `1..=max_step` of the seeded trajectory.
pub fn record_trajectory<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    map: &InferenceStepMap,
    cond: &[f64],
    max_step: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    map.check_step(max_step)?;
    let mut lp = ReverseLoop::start(predictor, schedule, map, cond, seed)?;
    (0..max_step).map(|_| lp.step()).collect()
}

impl NoiseFeature {
    /// Picks `steps` out of a trajectory recorded from step 1.
    pub fn from_trajectory(traj: &[Vec<f64>], steps: &[usize]) -> Result<Self> {
        validate_steps(steps, traj.len())?;
        let vector = steps.iter().flat_map(|&k| traj[k - 1].iter().copied()).collect();
        Ok(Self {
            steps: steps.to_vec(),
            vector,
        })
    }
}

/// Runs the reverse loop for `max(steps)` steps and collects the feature.
pub fn extract_feature<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    map: &InferenceStepMap,
    cond: &[f64],
    steps: &[usize],
    seed: u64,
) -> Result<NoiseFeature> {
    validate_steps(steps, map.num_steps())?;
    let traj = record_trajectory(predictor, schedule, map, cond, steps[steps.len() - 1], seed)?;
    NoiseFeature::from_trajectory(&traj, steps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64, 32, 16],
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            threshold: 0.5,
        }
    }
}

impl ClassifierConfig {
    /// Hidden widths for a network with `layers` weight layers: halving from
    /// 128 down to 16, then 16 repeated.
    pub fn hidden_for_depth(layers: usize) -> Result<Vec<usize>> {
        if layers == 0 {
            return Err(Error::Config("a classifier needs at least one layer".into()));
        }
        Ok((0..layers - 1).map(|i| (128usize >> i.min(3)).max(16)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_accuracy: f64,
    /// Mean cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
}

/// Cross-entropy training with per-epoch seeded shuffles; the last partial
/// batch of an epoch is kept.
pub fn train_mlp_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &ClassifierConfig,
    seed: u64,
    exec: Exec,
) -> Result<(Mlp, TrainSummary)> {
    check_dim("labels", features.len(), labels.len())?;
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    let Some(first) = features.first() else {
        return Err(Error::Config("empty training set".into()));
    };
    let width = first.len();
    if let Some(f) = features.iter().find(|f| f.len() != width) {
        return Err(Error::Dimension {
            context: "feature length",
            expected: width,
            got: f.len(),
        });
    }
    if let Some(l) = labels.iter().find(|l| **l >= n_classes) {
        return Err(out_of_range("label", l, format!("[0, {n_classes})")));
    }
    if labels.iter().all(|l| *l == labels[0]) {
        return Err(Error::Config("training set has a single class".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut dims = vec![width];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(n_classes);
    let mut net = Mlp::glorot(&dims, derive_seed(seed, 0))?;
    let mut opt = Adam::new(&net, cfg.adam)?;
    let mut bg = BatchGrad::new(&net);
    let mut rng = SeedStream::new(derive_seed(seed, 1));
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let current = &net;
            let loss = bg.compute(current, batch.len(), exec, |i, ws, g| {
                let j = batch[i];
                current.accumulate_xent(&features[j], labels[j], ws, g)
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: epoch, loss });
            }
            opt.step(&mut net, bg.grads())?;
            total += loss * batch.len() as f64;
        }
        loss_trace.push(total / features.len() as f64);
    }
    let correct = features
        .iter()
        .zip(labels)
        .map(|(f, l)| net.forward(f).map(|z| usize::from(argmax(&z) == *l)))
        .sum::<Result<usize>>()?;
    Ok((
        net,
        TrainSummary {
            train_accuracy: correct as f64 / features.len() as f64,
            loss_trace,
        },
    ))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: usize,
    /// NSFW probability in binary mode; the winning probability otherwise.
    pub score: f64,
    pub logits: Vec<f64>,
}

impl Verdict {
    /// Binary: label 1 iff `P(class 1) >= threshold`. Otherwise argmax.
    pub fn from_logits(logits: Vec<f64>, threshold: f64) -> Self {
        let p = softmax(&logits);
        let (label, score) = if logits.len() == 2 {
            (usize::from(p[1] >= threshold), p[1])
        } else {
            let k = argmax(&logits);
            (k, p[k])
        };
        Self { label, score, logits }
    }

    /// Any class other than 0 (clean) counts as unsafe.
    pub fn is_unsafe(&self) -> bool {
        self.label != 0
    }
}

pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    net: Mlp,
    n_classes: usize,
    feature_steps: Vec<usize>,
    threshold: f64,
    dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    #[serde(flatten)]
    pub net: MlpCheckpoint,
    pub n_classes: usize,
    pub feature_steps: Vec<usize>,
    pub threshold: f64,
    #[serde(rename = "D")]
    pub dim: usize,
}

impl Classifier {
    pub fn new(net: Mlp, feature_steps: Vec<usize>, threshold: f64, dim: usize) -> Result<Self> {
        if feature_steps.is_empty() || feature_steps.windows(2).any(|w| w[0] >= w[1]) || feature_steps[0] == 0 {
            return Err(Error::Config(format!("bad feature steps {feature_steps:?}")));
        }
        check_dim("classifier input", dim * feature_steps.len(), net.input_dim())?;
        let n_classes = net.output_dim();
        if n_classes < 2 {
            return Err(Error::Config("a classifier needs at least 2 outputs".into()));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(out_of_range("threshold", threshold, "(0, 1)"));
        }
        Ok(Self {
            net,
            n_classes,
            feature_steps,
            threshold,
            dim,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_steps(&self) -> &[usize] {
        &self.feature_steps
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(out_of_range("threshold", threshold, "(0, 1)"));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn classify(&self, f: &NoiseFeature) -> Result<Verdict> {
        if f.steps != self.feature_steps {
            return Err(Error::Config(format!(
                "feature steps {:?} do not match classifier steps {:?}",
                f.steps, self.feature_steps
            )));
        }
        self.classify_vector(&f.vector)
    }

    pub fn classify_vector(&self, v: &[f64]) -> Result<Verdict> {
        Ok(Verdict::from_logits(self.net.forward(v)?, self.threshold))
    }

    pub fn to_checkpoint(&self) -> ClassifierCheckpoint {
        ClassifierCheckpoint {
            net: MlpCheckpoint::from(&self.net),
            n_classes: self.n_classes,
            feature_steps: self.feature_steps.clone(),
            threshold: self.threshold,
            dim: self.dim,
        }
    }

    pub fn from_checkpoint(ck: &ClassifierCheckpoint) -> Result<Self> {
        let c = Self::new(ck.net.to_mlp()?, ck.feature_steps.clone(), ck.threshold, ck.dim)?;
        check_dim("n_classes", ck.n_classes, c.n_classes)?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&read_json(path)?)
    }
}

/// Trains a noise-feature classifier. `features[i].steps` must all equal `steps`.
pub fn train_classifier(
    features: &[NoiseFeature],
    labels: &[usize],
    n_classes: usize,
    dim: usize,
    cfg: &ClassifierConfig,
    seed: u64,
    exec: Exec,
) -> Result<(Classifier, TrainSummary)> {
    let Some(first) = features.first() else {
        return Err(Error::Config("empty training set".into()));
    };
    let steps = first.steps.clone();
    if features.iter().any(|f| f.steps != steps) {
        return Err(Error::Config("features were extracted at different steps".into()));
    }
    let vectors: Vec<Vec<f64>> = features.iter().map(|f| f.vector.clone()).collect();
    let (net, summary) = train_mlp_classifier(&vectors, labels, n_classes, cfg, seed, exec)?;
    Ok((Classifier::new(net, steps, cfg.threshold, dim)?, summary))
}
