//! Classifier sweeps over feature steps, concatenations, depth and class count.
//!
//! Every configuration trains a fresh classifier on the training bank (clean
//! and naive prompts) and is scored on the held-out clean and naive prompts.
//! Configuration `i` is seeded with `derive_seed(seed, i)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion_matrix, EvalReport, ScoredSample};
use crate::detector::{train_classifier, Classifier, ClassifierConfig};
use crate::error::{Error, Result};
use crate::experiment::{Banks, FeatureBank};
use crate::par::{self, Exec};
use crate::rng::{derive_seed, SeedStream};
use crate::world::{PromptRecord, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub feature_dim: usize,
    pub accuracy: f64,
    pub auroc: f64,
    pub fpr_at_tpr95: f64,
}

pub struct AblationContext<'a> {
    pub banks: &'a Banks,
    pub dim: usize,
    pub classifier: &'a ClassifierConfig,
    pub seed: u64,
    pub exec: Exec,
}

/// Scores every prompt in `bank` with the classifier's NSFW probability.
pub fn score_bank(cls: &Classifier, bank: &FeatureBank) -> Result<Vec<ScoredSample>> {
    (0..bank.len())
        .map(|i| {
            let p = &bank.prompts[i];
            let v = cls.classify(&bank.feature(i, cls.feature_steps())?)?;
            ScoredSample::new(v.score, p.label.index() as u8, p.variant, p.concept_id)
        })
        .collect()
}

impl AblationContext<'_> {
    fn train(&self, steps: &[usize], hidden: Option<Vec<usize>>, permute: bool, index: u64) -> Result<Classifier> {
        let bank = &self.banks.train;
        let features = (0..bank.len())
            .map(|i| bank.feature(i, steps))
            .collect::<Result<Vec<_>>>()?;
        let mut labels = bank.binary_labels();
        let seed = derive_seed(self.seed, index);
        if permute {
            SeedStream::new(derive_seed(seed, 99)).shuffle(&mut labels);
        }
        let mut cfg = self.classifier.clone();
        if let Some(h) = hidden {
            cfg.hidden = h;
        }
        Ok(train_classifier(&features, &labels, 2, self.dim, &cfg, seed, self.exec)?.0)
    }

    fn row(&self, name: String, cls: &Classifier) -> Result<AblationRow> {
        let bank = self.banks.eval.with_variants(&[Variant::Clean, Variant::Naive]);
        let r = EvalReport::compute(&score_bank(cls, &bank)?, cls.threshold())?;
        Ok(AblationRow {
            config: name,
            feature_dim: cls.net().input_dim(),
            accuracy: r.accuracy,
            auroc: r.auroc,
            fpr_at_tpr95: r.fpr_at_tpr95,
        })
    }
}

/// One row per single feature step.
pub fn run_ablation_timesteps(ctx: &AblationContext, steps_list: &[usize]) -> Result<Vec<AblationRow>> {
    par::try_map(ctx.exec, steps_list.len(), |i| {
        let k = steps_list[i];
        let cls = ctx.train(&[k], None, false, i as u64)?;
        ctx.row(format!("step_{k}"), &cls)
    })
}

/// Same as a timestep row but trained on shuffled labels.
pub fn permuted_label_control(ctx: &AblationContext, step: usize) -> Result<AblationRow> {
    let cls = ctx.train(&[step], None, true, 1_000)?;
    ctx.row(format!("step_{step}_permuted"), &cls)
}

fn set_name(steps: &[usize], all: usize) -> String {
    if steps.len() == all && steps.iter().copied().eq(1..=all) {
        "all".to_string()
    } else {
        let parts: Vec<String> = steps.iter().map(usize::to_string).collect();
        format!("steps_{}", parts.join("+"))
    }
}

/// One row per set of concatenated steps.
pub fn run_ablation_concat(ctx: &AblationContext, step_sets: &[Vec<usize>]) -> Result<Vec<AblationRow>> {
    let all = ctx.banks.train.max_step();
    par::try_map(ctx.exec, step_sets.len(), |i| {
        let cls = ctx.train(&step_sets[i], None, false, 100 + i as u64)?;
        ctx.row(set_name(&step_sets[i], all), &cls)
    })
}

/// One row per classifier depth (number of weight layers).
pub fn run_ablation_depth(ctx: &AblationContext, layer_counts: &[usize], steps: &[usize]) -> Result<Vec<AblationRow>> {
    par::try_map(ctx.exec, layer_counts.len(), |i| {
        let hidden = ClassifierConfig::hidden_for_depth(layer_counts[i])?;
        let cls = ctx.train(steps, Some(hidden), false, 200 + i as u64)?;
        ctx.row(format!("layers_{}", layer_counts[i]), &cls)
    })
}

pub fn rows_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("config,feature_dim,accuracy,auroc,fpr_at_tpr95\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.config, r.feature_dim, r.accuracy, r.auroc, r.fpr_at_tpr95
        )
        .expect("write to string");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassReport {
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub accuracy: f64,
    pub chance: f64,
    /// Held-out accuracy of each true class.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]` on held-out clean and naive prompts.
    pub confusion: Vec<Vec<usize>>,
}

/// `n_classes`-way classification with `class_of` assigning targets.
pub fn run_multiclass(
    ctx: &AblationContext,
    steps: &[usize],
    class_names: Vec<String>,
    class_of: impl Fn(&PromptRecord) -> usize,
) -> Result<MulticlassReport> {
    let n_classes = class_names.len();
    let train = &ctx.banks.train;
    let features = (0..train.len())
        .map(|i| train.feature(i, steps))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = train.prompts.iter().map(&class_of).collect();
    let (cls, _) = train_classifier(
        &features,
        &labels,
        n_classes,
        ctx.dim,
        ctx.classifier,
        derive_seed(ctx.seed, 300),
        ctx.exec,
    )?;
    let eval = ctx.banks.eval.with_variants(&[Variant::Clean, Variant::Naive]);
    let mut preds = Vec::with_capacity(eval.len());
    for i in 0..eval.len() {
        let logits = cls.net().forward(&eval.feature(i, steps)?.vector)?;
        preds.push(crate::detector::argmax(&logits));
    }
    let truth: Vec<usize> = eval.prompts.iter().map(&class_of).collect();
    let confusion = confusion_matrix(&preds, &truth, n_classes)?;
    if eval.is_empty() {
        return Err(Error::Config("no held-out prompts".into()));
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                0.0
            } else {
                row[c] as f64 / n as f64
            }
        })
        .collect();
    Ok(MulticlassReport {
        n_classes,
        class_names,
        accuracy: correct as f64 / eval.len() as f64,
        chance: 1.0 / n_classes as f64,
        per_class_accuracy,
        confusion,
    })
}

pub fn confusion_csv(report: &MulticlassReport) -> String {
    let mut out = String::from("true\\predicted");
    for n in &report.class_names {
        write!(out, ",{n}").expect("write to string");
    }
    out.push('\n');
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        out.push_str(name);
        for c in row {
            write!(out, ",{c}").expect("write to string");
        }
        out.push('\n');
    }
    out
}
