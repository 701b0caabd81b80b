//! Metrics, ROC and projection export, transfer checks and ablations.

pub mod ablation;
pub mod metrics;
pub mod pca;
pub mod roc;

pub use ablation::{
    confusion_csv, permuted_label_control, rows_csv, run_ablation_concat, run_ablation_depth, run_ablation_timesteps,
    run_multiclass, score_bank, AblationContext, AblationRow, MulticlassReport,
};
pub use metrics::{accuracy, auroc, confusion_matrix, fpr_at_tpr95, EvalReport, ScoredSample};
pub use pca::{pca_project, projection_csv, Projection};
pub use roc::{roc_area, roc_csv, roc_curve, roc_export, RocPoint};

use serde::{Deserialize, Serialize};

use crate::detector::{train_mlp_classifier, Classifier, ClassifierConfig, Verdict};
use crate::error::{Error, Result};
use crate::experiment::FeatureBank;
use crate::par::Exec;
use crate::world::{Label, PromptRecord, Variant};

/// Clean-vs-naive and clean-vs-adversarial metrics of one scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReports {
    pub naive: EvalReport,
    pub adversarial: EvalReport,
}

impl VariantReports {
    pub fn from_samples(samples: &[ScoredSample], threshold: f64) -> Result<Self> {
        let pick = |v: Variant| -> Vec<ScoredSample> {
            samples
                .iter()
                .filter(|s| s.variant == Variant::Clean || s.variant == v)
                .cloned()
                .collect()
        };
        Ok(Self {
            naive: EvalReport::compute(&pick(Variant::Naive), threshold)?,
            adversarial: EvalReport::compute(&pick(Variant::Adversarial), threshold)?,
        })
    }
}

/// Scores a held-out bank with a noise-feature classifier.
pub fn evaluate_classifier(cls: &Classifier, eval: &FeatureBank) -> Result<(Vec<ScoredSample>, VariantReports)> {
    let samples = score_bank(cls, eval)?;
    let reports = VariantReports::from_samples(&samples, cls.threshold())?;
    Ok((samples, reports))
}

/// Mean pairwise feature distances between variant groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistances {
    /// Naive vs adversarial features of the same NSFW concept, averaged over concepts.
    pub naive_vs_adversarial: f64,
    /// All naive vs all clean features.
    pub naive_vs_clean: f64,
}

fn mean_cross_distance(a: &[&Vec<f64>], b: &[&Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += x
                .iter()
                .zip(y.iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
        }
    }
    total / (a.len() * b.len()).max(1) as f64
}

pub fn feature_distances(prompts: &[PromptRecord], vectors: &[Vec<f64>]) -> Result<FeatureDistances> {
    let group = |keep: &dyn Fn(&PromptRecord) -> bool| -> Vec<&Vec<f64>> {
        prompts
            .iter()
            .zip(vectors)
            .filter(|(p, _)| keep(p))
            .map(|(_, v)| v)
            .collect()
    };
    let clean = group(&|p| p.variant == Variant::Clean);
    let naive = group(&|p| p.variant == Variant::Naive);
    let mut concepts: Vec<usize> = prompts
        .iter()
        .filter(|p| p.label == Label::Nsfw)
        .map(|p| p.concept_id)
        .collect();
    concepts.sort_unstable();
    concepts.dedup();
    let mut same = Vec::new();
    for c in concepts {
        let n = group(&|p| p.concept_id == c && p.variant == Variant::Naive);
        let a = group(&|p| p.concept_id == c && p.variant == Variant::Adversarial);
        if !n.is_empty() && !a.is_empty() {
            same.push(mean_cross_distance(&n, &a));
        }
    }
    if same.is_empty() || clean.is_empty() || naive.is_empty() {
        return Err(Error::Config(
            "distance check needs clean, naive and adversarial prompts".into(),
        ));
    }
    Ok(FeatureDistances {
        naive_vs_adversarial: same.iter().sum::<f64>() / same.len() as f64,
        naive_vs_clean: mean_cross_distance(&naive, &clean),
    })
}

/// Trains the same classifier architecture on raw prompt embeddings of clean
/// and naive training prompts and scores held-out prompts of every variant.
pub fn embedding_contrast(
    train: &[PromptRecord],
    eval: &[PromptRecord],
    cfg: &ClassifierConfig,
    seed: u64,
    exec: Exec,
) -> Result<VariantReports> {
    let train: Vec<&PromptRecord> = train.iter().filter(|p| p.variant != Variant::Adversarial).collect();
    let xs: Vec<Vec<f64>> = train.iter().map(|p| p.embedding.clone()).collect();
    let ys: Vec<usize> = train.iter().map(|p| p.label.index()).collect();
    let (net, _) = train_mlp_classifier(&xs, &ys, 2, cfg, seed, exec)?;
    let samples = eval
        .iter()
        .map(|p| {
            let v = Verdict::from_logits(net.forward(&p.embedding)?, cfg.threshold);
            ScoredSample::new(v.score, p.label.index() as u8, p.variant, p.concept_id)
        })
        .collect::<Result<Vec<_>>>()?;
    VariantReports::from_samples(&samples, cfg.threshold)
}
