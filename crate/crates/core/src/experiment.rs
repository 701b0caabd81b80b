//! The reference pipeline: world, dataset, denoiser, and recorded trajectories.

use serde::{Deserialize, Serialize};

use crate::denoiser::{train_denoiser, Denoiser, DenoiserConfig};
use crate::detector::{train_classifier, Classifier, ClassifierConfig, NoiseFeature, TrainSummary};
use crate::error::{check_dim, Error, Result};
use crate::eval::{embedding_contrast, AblationContext, VariantReports};
use crate::gate::GateConfig;
use crate::par::{self, Exec};
use crate::rng::derive_seed;
use crate::sampler::NoisePredictor;
use crate::schedule::{make_inference_map, InferenceStepMap, NoiseSchedule, ScheduleConfig};
use crate::world::{
    build_dataset, build_world, sample_prompts, Dataset, Label, PromptRecord, Variant, World, WorldConfig,
};

/// Held-out prompt ids start here so their seeds never collide with training ids.
pub const EVAL_FIRST_ID: u64 = 1 << 32;
/// First id of the classifier's training prompts.
pub const CLASSIFIER_FIRST_ID: u64 = 1 << 33;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub world_seed: u64,
    pub train_per_variant: usize,
    pub dataset_seed: u64,
    pub eval_per_variant: usize,
    pub eval_seed: u64,
    pub classifier_per_variant: usize,
    pub classifier_prompt_seed: u64,
    pub schedule: ScheduleConfig,
    pub inference_steps: usize,
    pub denoiser: DenoiserConfig,
    pub denoiser_seed: u64,
    pub classifier: ClassifierConfig,
    pub classifier_seed: u64,
    pub feature_seed: u64,
    pub gate_steps: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            world_seed: 0,
            train_per_variant: 134,
            dataset_seed: 1,
            eval_per_variant: 100,
            eval_seed: 2,
            classifier_per_variant: 134,
            classifier_prompt_seed: 6,
            schedule: ScheduleConfig::default(),
            inference_steps: 50,
            denoiser: DenoiserConfig::default(),
            denoiser_seed: 3,
            classifier: ClassifierConfig::default(),
            classifier_seed: 4,
            feature_seed: 5,
            gate_steps: vec![5],
        }
    }
}

/// Per-prompt predicted noise at steps `1..=max_step`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    pub prompts: Vec<PromptRecord>,
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

impl FeatureBank {
    /// Each prompt's trajectory is seeded with `derive_seed(seed, prompt_id)`.
    pub fn record<P: NoisePredictor + ?Sized>(
        predictor: &P,
        schedule: &NoiseSchedule,
        map: &InferenceStepMap,
        prompts: Vec<PromptRecord>,
        max_step: usize,
        seed: u64,
        exec: Exec,
    ) -> Result<Self> {
        map.check_step(max_step)?;
        let trajectories = par::try_map(exec, prompts.len(), |i| {
            let p = &prompts[i];
            crate::detector::record_trajectory(
                predictor,
                schedule,
                map,
                &p.embedding,
                max_step,
                derive_seed(seed, p.prompt_id),
            )
        })?;
        Ok(Self { prompts, trajectories })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn max_step(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }

    pub fn feature(&self, i: usize, steps: &[usize]) -> Result<NoiseFeature> {
        NoiseFeature::from_trajectory(&self.trajectories[i], steps)
    }

    pub fn vectors(&self, steps: &[usize]) -> Result<Vec<Vec<f64>>> {
        (0..self.len())
            .map(|i| self.feature(i, steps).map(|f| f.vector))
            .collect()
    }

    /// 1 for NSFW prompts, 0 for clean.
    pub fn binary_labels(&self) -> Vec<usize> {
        self.prompts.iter().map(|p| p.label.index()).collect()
    }

    pub fn select(&self, keep: impl Fn(&PromptRecord) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.prompts[i])).collect();
        Self {
            prompts: idx.iter().map(|&i| self.prompts[i].clone()).collect(),
            trajectories: idx.iter().map(|&i| self.trajectories[i].clone()).collect(),
        }
    }

    pub fn with_variants(&self, variants: &[Variant]) -> Self {
        self.select(|p| variants.contains(&p.variant))
    }
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub world: World,
    pub dataset: Dataset,
    pub schedule: NoiseSchedule,
    pub map: InferenceStepMap,
    pub denoiser: Denoiser,
    pub denoiser_loss: Vec<f64>,
}

impl Experiment {
    /// Builds the world and dataset and trains the denoiser.
    pub fn prepare(config: ExperimentConfig, exec: Exec) -> Result<Self> {
        let world = build_world(&config.world, config.world_seed)?;
        let dataset = build_dataset(&world, config.train_per_variant, config.dataset_seed)?;
        let (denoiser, loss) = train_denoiser(&dataset, config.schedule, &config.denoiser, config.denoiser_seed, exec)?;
        let mut exp = Self::from_parts(config, world, dataset, denoiser)?;
        exp.denoiser_loss = loss;
        Ok(exp)
    }

    /// Assembles an experiment from existing artifacts.
    pub fn from_parts(
        mut config: ExperimentConfig,
        world: World,
        dataset: Dataset,
        denoiser: Denoiser,
    ) -> Result<Self> {
        world.validate()?;
        check_dim("dataset D", world.dim(), dataset.dim)?;
        check_dim("dataset d_e", world.embed_dim(), dataset.embed_dim)?;
        check_dim("denoiser D", world.dim(), denoiser.dim())?;
        check_dim("denoiser d_e", world.embed_dim(), denoiser.embed_dim())?;
        config.world = world.config.clone();
        config.schedule = *denoiser.schedule();
        let schedule = config.schedule.build()?;
        let map = make_inference_map(schedule.len(), config.inference_steps)?;
        if config.gate_steps.iter().any(|&k| k == 0 || k > map.num_steps()) {
            return Err(Error::Config(format!(
                "gate steps {:?} outside [1, S]",
                config.gate_steps
            )));
        }
        Ok(Self {
            config,
            world,
            dataset,
            schedule,
            map,
            denoiser,
            denoiser_loss: Vec::new(),
        })
    }

    pub fn num_steps(&self) -> usize {
        self.map.num_steps()
    }

    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            gate_steps: self.config.gate_steps.clone(),
            threshold: self.config.classifier.threshold,
            num_inference_steps: self.num_steps(),
        }
    }

    /// Clean and naive prompts for classifier training, drawn fresh rather
    /// than reused from the denoiser's dataset: late-step predictions on
    /// prompts the denoiser was fit on are shifted relative to unseen ones.
    /// Adversarial prompts are never shown to the classifier.
    pub fn classifier_prompts(&self) -> Result<Vec<PromptRecord>> {
        let all = sample_prompts(
            &self.world,
            self.config.classifier_per_variant,
            self.config.classifier_prompt_seed,
            CLASSIFIER_FIRST_ID,
        )?;
        Ok(all.into_iter().filter(|p| p.variant != Variant::Adversarial).collect())
    }

    /// Held-out prompts of every variant.
    pub fn eval_prompts(&self) -> Result<Vec<PromptRecord>> {
        sample_prompts(
            &self.world,
            self.config.eval_per_variant,
            self.config.eval_seed,
            EVAL_FIRST_ID,
        )
    }

    pub fn record(&self, prompts: Vec<PromptRecord>, max_step: usize, exec: Exec) -> Result<FeatureBank> {
        FeatureBank::record(
            &self.denoiser,
            &self.schedule,
            &self.map,
            prompts,
            max_step,
            self.config.feature_seed,
            exec,
        )
    }

    /// Training and held-out banks recorded up to `max_step`.
    pub fn banks(&self, max_step: usize, exec: Exec) -> Result<Banks> {
        Ok(Banks {
            train: self.record(self.classifier_prompts()?, max_step, exec)?,
            eval: self.record(self.eval_prompts()?, max_step, exec)?,
        })
    }

    /// Trains the gate classifier on `config.gate_steps` features of the training bank.
    pub fn train_gate_classifier(&self, train: &FeatureBank, exec: Exec) -> Result<(Classifier, TrainSummary)> {
        let steps = &self.config.gate_steps;
        let features = (0..train.len())
            .map(|i| train.feature(i, steps))
            .collect::<Result<Vec<_>>>()?;
        train_classifier(
            &features,
            &train.binary_labels(),
            2,
            self.world.dim(),
            &self.config.classifier,
            self.config.classifier_seed,
            exec,
        )
    }

    /// Sweep context; sweeps are seeded from `derive_seed(classifier_seed, 8)`.
    pub fn ablation_context<'a>(&'a self, banks: &'a Banks, exec: Exec) -> AblationContext<'a> {
        AblationContext {
            banks,
            dim: self.world.dim(),
            classifier: &self.config.classifier,
            seed: derive_seed(self.config.classifier_seed, 8),
            exec,
        }
    }

    /// Embedding-space baseline trained on the classifier's training prompts.
    pub fn embedding_baseline(&self, eval: &[PromptRecord], exec: Exec) -> Result<VariantReports> {
        embedding_contrast(
            &self.classifier_prompts()?,
            eval,
            &self.config.classifier,
            derive_seed(self.config.classifier_seed, 6),
            exec,
        )
    }

    /// Class names for the multiclass task: "clean" then each NSFW concept.
    pub fn class_names(&self) -> Vec<String> {
        std::iter::once("clean".to_string())
            .chain(
                self.world
                    .nsfw_ids()
                    .map(|id| self.world.concepts[id].category_name.clone()),
            )
            .collect()
    }

    /// Multiclass label: 0 for clean, `1 + rank` for the rank-th NSFW concept.
    pub fn concept_class(&self, p: &PromptRecord) -> usize {
        match p.label {
            Label::Clean => 0,
            Label::Nsfw => 1 + self.world.nsfw_ids().position(|id| id == p.concept_id).unwrap_or(0),
        }
    }
}

/// Feature banks for classifier training (clean + naive) and evaluation (all variants).
#[derive(Clone, Debug)]
pub struct Banks {
    pub train: FeatureBank,
    pub eval: FeatureBank,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            world: WorldConfig {
                n_clean: 2,
                n_nsfw: 2,
                dim: 4,
                embed_dim: 3,
                ..WorldConfig::default()
            },
            train_per_variant: 6,
            eval_per_variant: 4,
            classifier_per_variant: 6,
            denoiser: DenoiserConfig {
                hidden: vec![8],
                train_steps: 20,
                batch_size: 8,
                ..DenoiserConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn banks_have_expected_shape() {
        let exp = Experiment::prepare(tiny(), Exec::Parallel).unwrap();
        assert_eq!(exp.denoiser_loss.len(), 20);
        let banks = exp.banks(7, Exec::Parallel).unwrap();
        assert_eq!(banks.train.len(), 2 * 6 + 2 * 6);
        assert!(banks.train.prompts.iter().all(|p| p.variant != Variant::Adversarial));
        assert_eq!(banks.eval.len(), 2 * 4 + 2 * 2 * 4);
        assert_eq!(banks.eval.max_step(), 7);
        assert_eq!(banks.eval.vectors(&[2, 7]).unwrap()[0].len(), 8);
        let seq = exp.banks(7, Exec::Sequential).unwrap();
        assert_eq!(seq.eval, banks.eval);
        assert_eq!(banks.eval.with_variants(&[Variant::Adversarial]).len(), 8);
        let classes: Vec<usize> = banks.eval.prompts.iter().map(|p| exp.concept_class(p)).collect();
        assert_eq!(classes.iter().max(), Some(&2));
    }
}
