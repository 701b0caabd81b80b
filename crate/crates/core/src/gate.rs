//! Gated generation: classify at the gate step(s) and stop early when unsafe.

use serde::{Deserialize, Serialize};

use crate::detector::{validate_steps, Classifier, NoiseFeature, Verdict};
use crate::error::{Error, Result};
use crate::sampler::{NoisePredictor, ReverseLoop};
use crate::schedule::{InferenceStepMap, NoiseSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub gate_steps: Vec<usize>,
    pub threshold: f64,
    pub num_inference_steps: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            gate_steps: vec![5],
            threshold: 0.5,
            num_inference_steps: 50,
        }
    }
}

/// Decides on a collected feature. Implemented by [`Classifier`]; tests use stubs.
pub trait Judge {
    fn feature_steps(&self) -> &[usize];
    fn judge(&self, feature: &NoiseFeature, threshold: f64) -> Result<Verdict>;
}

impl Judge for Classifier {
    fn feature_steps(&self) -> &[usize] {
        Classifier::feature_steps(self)
    }

    fn judge(&self, feature: &NoiseFeature, threshold: f64) -> Result<Verdict> {
        if feature.steps != self.feature_steps() {
            return Err(Error::Config("feature steps do not match the classifier".into()));
        }
        Ok(Verdict::from_logits(self.net().forward(&feature.vector)?, threshold))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateStatus {
    Completed,
    Blocked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub status: GateStatus,
    pub final_latent: Option<Vec<f64>>,
    pub verdict: Verdict,
    pub decided_at_step: usize,
    pub denoiser_calls: usize,
}

/// The public JSON summary of a gated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub status: GateStatus,
    pub decided_at_step: usize,
    pub denoiser_calls: usize,
    pub score: f64,
}

impl GateResult {
    pub fn summary(&self) -> GateSummary {
        GateSummary {
            status: self.status,
            decided_at_step: self.decided_at_step,
            denoiser_calls: self.denoiser_calls,
            score: self.verdict.score,
        }
    }
}

/// Runs the reverse loop, classifies once every gate step's noise is in, and
/// either stops there (unsafe) or finishes the remaining steps on the same
/// trajectory.
pub fn generate_with_gate<P, J>(
    predictor: &P,
    judge: &J,
    schedule: &NoiseSchedule,
    map: &InferenceStepMap,
    cfg: &GateConfig,
    cond: &[f64],
    seed: u64,
) -> Result<GateResult>
where
    P: NoisePredictor + ?Sized,
    J: Judge + ?Sized,
{
    if cfg.num_inference_steps != map.num_steps() {
        return Err(Error::Config(format!(
            "gate expects {} inference steps, step map has {}",
            cfg.num_inference_steps,
            map.num_steps()
        )));
    }
    validate_steps(&cfg.gate_steps, cfg.num_inference_steps)?;
    if judge.feature_steps() != cfg.gate_steps.as_slice() {
        return Err(Error::Config(format!(
            "classifier reads steps {:?}, gate configured for {:?}",
            judge.feature_steps(),
            cfg.gate_steps
        )));
    }
    let last = cfg.gate_steps[cfg.gate_steps.len() - 1];
    let mut lp = ReverseLoop::start(predictor, schedule, map, cond, seed)?;
    let mut vector = Vec::with_capacity(cfg.gate_steps.len() * predictor.latent_dim());
    while lp.steps_done() < last {
        let eps = lp.step()?;
        if cfg.gate_steps.contains(&lp.steps_done()) {
            vector.extend_from_slice(&eps);
        }
    }
    let feature = NoiseFeature {
        steps: cfg.gate_steps.clone(),
        vector,
    };
    let verdict = judge.judge(&feature, cfg.threshold)?;
    if verdict.is_unsafe() {
        return Ok(GateResult {
            status: GateStatus::Blocked,
            final_latent: None,
            verdict,
            decided_at_step: last,
            denoiser_calls: lp.steps_done(),
        });
    }
    while !lp.is_finished() {
        lp.step()?;
    }
    Ok(GateResult {
        status: GateStatus::Completed,
        denoiser_calls: lp.steps_done(),
        final_latent: Some(lp.into_latent()),
        verdict,
        decided_at_step: last,
    })
}

/// All `S` reverse steps with no classifier.
pub fn generate_unguarded<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    map: &InferenceStepMap,
    cond: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    ReverseLoop::start(predictor, schedule, map, cond, seed)?.finish()
}
