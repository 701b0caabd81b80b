//! The synthetic prompt/image universe.
//!
//! Each concept owns a Gaussian image distribution (prototype, sigma) and one
//! or two clusters of prompt embeddings. NSFW concepts get a second,
//! "adversarial" cluster that sits far from their own naive cluster and close
//! to a clean one, yet conditions the very same image distribution.
//!
//! Image prototypes share one global axis: clean prototypes sit at
//! `-group_offset` along it, NSFW ones at `+group_offset`, each plus a
//! concept-specific Gaussian offset.

mod dataset;

pub use dataset::{build_dataset, sample_prompts, Dataset, DATASET_FORMAT_VERSION};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::rng::SeedStream;

pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Nsfw,
}

impl Label {
    /// 0 for clean, 1 for NSFW.
    pub fn index(self) -> usize {
        match self {
            Label::Clean => 0,
            Label::Nsfw => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Clean,
    Naive,
    Adversarial,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Clean, Variant::Naive, Variant::Adversarial];

    pub fn label(self) -> Label {
        match self {
            Variant::Clean => Label::Clean,
            _ => Label::Nsfw,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Clean => "clean",
            Variant::Naive => "naive",
            Variant::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Variant::Clean),
            "naive" => Ok(Variant::Naive),
            "adversarial" => Ok(Variant::Adversarial),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_clean: usize,
    pub n_nsfw: usize,
    /// Latent dimension `D`.
    pub dim: usize,
    /// Embedding dimension `d_e`.
    pub embed_dim: usize,
    /// Minimum pairwise distance between prototypes and between embedding centers.
    pub separation: f64,
    pub embed_sigma: f64,
    pub clean_image_sigma: f64,
    pub nsfw_image_sigma: f64,
    /// Distance of each group from the origin along the shared axis.
    pub group_offset: f64,
    /// Std-dev of the concept-specific prototype offset.
    pub prototype_spread: f64,
    /// Std-dev of naive embedding centers around the origin.
    pub center_spread: f64,
    /// Distance of an adversarial center from its clean anchor, in units of `separation`.
    pub adversarial_offset: f64,
    /// Std-dev of the random direction jitter applied to adversarial placement.
    pub adversarial_jitter: f64,
    pub max_retries: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_clean: 3,
            n_nsfw: 3,
            dim: 16,
            embed_dim: 8,
            separation: 2.0,
            embed_sigma: 0.1,
            clean_image_sigma: 0.1,
            nsfw_image_sigma: 0.25,
            group_offset: 4.5,
            prototype_spread: 0.5,
            center_spread: 1.0,
            adversarial_offset: 1.25,
            adversarial_jitter: 0.5,
            max_retries: 10_000,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clean == 0 || self.n_nsfw == 0 {
            return Err(Error::Config("need at least one clean and one NSFW concept".into()));
        }
        if self.dim < 2 || self.embed_dim < 2 {
            return Err(Error::Config(format!(
                "dim and embed_dim must be >= 2, got {} and {}",
                self.dim, self.embed_dim
            )));
        }
        let nonneg = [
            self.embed_sigma,
            self.clean_image_sigma,
            self.nsfw_image_sigma,
            self.group_offset,
            self.prototype_spread,
            self.center_spread,
            self.adversarial_offset,
            self.adversarial_jitter,
        ];
        let positive = self.separation.is_finite() && self.separation > 0.0;
        if !positive || nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("world scales must be finite, separation positive".into()));
        }
        Ok(())
    }

    pub fn n_concepts(&self) -> usize {
        self.n_clean + self.n_nsfw
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub concept_id: usize,
    pub label: Label,
    pub category_name: String,
    pub image_prototype: Vec<f64>,
    pub image_sigma: f64,
    pub naive_center: Vec<f64>,
    pub adversarial_center: Option<Vec<f64>>,
    pub embed_sigma: f64,
}

impl ConceptSpec {
    pub fn center(&self, variant: Variant) -> Result<&[f64]> {
        match (self.label, variant) {
            (Label::Clean, Variant::Clean) | (Label::Nsfw, Variant::Naive) => Ok(&self.naive_center),
            (Label::Nsfw, Variant::Adversarial) => self
                .adversarial_center
                .as_deref()
                .ok_or_else(|| Error::Malformed(format!("concept {} lacks an adversarial center", self.concept_id))),
            _ => Err(Error::Config(format!(
                "variant {variant} is not valid for {:?} concept {}",
                self.label, self.concept_id
            ))),
        }
    }

    pub fn variants(&self) -> &'static [Variant] {
        match self.label {
            Label::Clean => &[Variant::Clean],
            Label::Nsfw => &[Variant::Naive, Variant::Adversarial],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub format_version: u32,
    pub seed: u64,
    pub config: WorldConfig,
    pub concepts: Vec<ConceptSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: u64,
    pub concept_id: usize,
    pub variant: Variant,
    pub label: Label,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    #[serde(flatten)]
    pub prompt: PromptRecord,
    pub x0: Vec<f64>,
}

const CLEAN_NAMES: [&str; 6] = ["landscape", "bicycle", "portrait", "food", "architecture", "animal"];
const NSFW_NAMES: [&str; 7] = [
    "nudity",
    "violence",
    "gore",
    "self-harm",
    "hate",
    "harassment",
    "illegal",
];

fn name(pool: &[&str], i: usize) -> String {
    let base = pool[i % pool.len()];
    match i / pool.len() {
        0 => base.to_string(),
        k => format!("{base}-{}", k + 1),
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn far_from_all(p: &[f64], others: &[Vec<f64>], sep: f64) -> bool {
    others.iter().all(|o| dist(p, o) >= sep)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Draws `count` points from `draw` subject to pairwise distance `sep`.
fn spaced_points(
    count: usize,
    sep: f64,
    retries: usize,
    what: &str,
    mut draw: impl FnMut(usize) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let p = (0..retries)
            .map(|_| draw(i))
            .find(|p| far_from_all(p, &pts, sep))
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "could not place {what} {i} at separation {sep} after {retries} draws"
                ))
            })?;
        pts.push(p);
    }
    Ok(pts)
}

/// Builds a world; concept ids `0..n_clean` are clean, the rest NSFW.
pub fn build_world(cfg: &WorldConfig, seed: u64) -> Result<World> {
    cfg.validate()?;
    let mut rng = SeedStream::new(seed);
    let (nc, nn) = (cfg.n_clean, cfg.n_nsfw);
    let sep = cfg.separation;

    let mut axis = rng.normal_vec(cfg.dim);
    normalize(&mut axis);
    let protos = spaced_points(nc + nn, sep, cfg.max_retries, "prototype", |i| {
        let sign = if i < nc { -1.0 } else { 1.0 };
        axis.iter()
            .map(|a| sign * cfg.group_offset * a + cfg.prototype_spread * rng.normal())
            .collect()
    })?;

    let mut rng2 = SeedStream::new(rng.next_u64());
    let centers = spaced_points(nc + nn, sep, cfg.max_retries, "embedding center", |_| {
        (0..cfg.embed_dim).map(|_| cfg.center_spread * rng2.normal()).collect()
    })?;

    let mut nsfw_mean = vec![0.0; cfg.embed_dim];
    for c in &centers[nc..] {
        for (m, v) in nsfw_mean.iter_mut().zip(c) {
            *m += v / nn as f64;
        }
    }
    let mut placed = centers.clone();
    let mut adversarial = Vec::with_capacity(nn);
    for j in 0..nn {
        let anchor = &centers[j % nc];
        let found = (0..cfg.max_retries).find_map(|_| {
            let mut dir: Vec<f64> = anchor.iter().zip(&nsfw_mean).map(|(a, m)| a - m).collect();
            normalize(&mut dir);
            for d in dir.iter_mut() {
                *d += cfg.adversarial_jitter * rng2.normal();
            }
            normalize(&mut dir);
            let cand: Vec<f64> = anchor
                .iter()
                .zip(&dir)
                .map(|(a, d)| a + cfg.adversarial_offset * sep * d)
                .collect();
            far_from_all(&cand, &placed, sep).then_some(cand)
        });
        let cand = found
            .ok_or_else(|| Error::Infeasible(format!("could not place adversarial center for NSFW concept {j}")))?;
        placed.push(cand.clone());
        adversarial.push(cand);
    }

    let concepts = (0..nc + nn)
        .map(|i| {
            let nsfw = i >= nc;
            ConceptSpec {
                concept_id: i,
                label: if nsfw { Label::Nsfw } else { Label::Clean },
                category_name: if nsfw {
                    name(&NSFW_NAMES, i - nc)
                } else {
                    name(&CLEAN_NAMES, i)
                },
                image_prototype: protos[i].clone(),
                image_sigma: if nsfw {
                    cfg.nsfw_image_sigma
                } else {
                    cfg.clean_image_sigma
                },
                naive_center: centers[i].clone(),
                adversarial_center: nsfw.then(|| adversarial[i - nc].clone()),
                embed_sigma: cfg.embed_sigma,
            }
        })
        .collect();
    Ok(World {
        format_version: WORLD_FORMAT_VERSION,
        seed,
        config: cfg.clone(),
        concepts,
    })
}

impl World {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn concept(&self, id: usize) -> Result<&ConceptSpec> {
        self.concepts
            .get(id)
            .ok_or_else(|| out_of_range("concept_id", id, format!("[0, {})", self.concepts.len())))
    }

    pub fn nsfw_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.concepts
            .iter()
            .filter(|c| c.label == Label::Nsfw)
            .map(|c| c.concept_id)
    }

    /// Checks structural consistency after loading from disk.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != WORLD_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "world",
                found: self.format_version,
                expected: WORLD_FORMAT_VERSION,
            });
        }
        self.config.validate()?;
        for (i, c) in self.concepts.iter().enumerate() {
            let ok = c.concept_id == i
                && c.image_prototype.len() == self.dim()
                && c.naive_center.len() == self.embed_dim()
                && c.image_sigma >= 0.0
                && c.embed_sigma >= 0.0
                && match (&c.label, &c.adversarial_center) {
                    (Label::Clean, None) => true,
                    (Label::Nsfw, Some(a)) => a.len() == self.embed_dim(),
                    _ => false,
                };
            if !ok {
                return Err(Error::Malformed(format!("inconsistent concept {i}")));
            }
        }
        Ok(())
    }

    /// Embedding = variant center + `N(0, embed_sigma^2 I)`.
    pub fn sample_prompt(
        &self,
        concept_id: usize,
        variant: Variant,
        prompt_id: u64,
        rng: &mut SeedStream,
    ) -> Result<PromptRecord> {
        let c = self.concept(concept_id)?;
        let center = c.center(variant)?;
        let embedding = center.iter().map(|m| m + c.embed_sigma * rng.normal()).collect();
        Ok(PromptRecord {
            prompt_id,
            concept_id,
            variant,
            label: c.label,
            embedding,
        })
    }

    /// `x0` = the concept's prototype + `N(0, image_sigma^2 I)`.
    pub fn sample_pair(&self, prompt: PromptRecord, rng: &mut SeedStream) -> Result<TrainingPair> {
        let c = self.concept(prompt.concept_id)?;
        let x0 = c
            .image_prototype
            .iter()
            .map(|m| m + c.image_sigma * rng.normal())
            .collect();
        Ok(TrainingPair { prompt, x0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_clean: 1,
            n_nsfw: 1,
            dim: 4,
            embed_dim: 4,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn structure() {
        let w = build_world(&small(), 3).unwrap();
        assert_eq!(w.concepts.len(), 2);
        assert_eq!(w.concepts.iter().filter(|c| c.adversarial_center.is_some()).count(), 1);
        assert_eq!(w, build_world(&small(), 3).unwrap());
        assert_ne!(w, build_world(&small(), 4).unwrap());
        w.validate().unwrap();
    }

    #[test]
    fn default_world_is_spaced() {
        let cfg = WorldConfig::default();
        let w = build_world(&cfg, 0).unwrap();
        let mut centers: Vec<&[f64]> = w.concepts.iter().map(|c| c.naive_center.as_slice()).collect();
        centers.extend(w.concepts.iter().filter_map(|c| c.adversarial_center.as_deref()));
        for i in 0..centers.len() {
            for j in 0..i {
                assert!(dist(centers[i], centers[j]) >= cfg.separation);
            }
        }
        for i in 0..w.concepts.len() {
            for j in 0..i {
                let d = dist(&w.concepts[i].image_prototype, &w.concepts[j].image_prototype);
                assert!(d >= cfg.separation);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small();
        c.dim = 1;
        assert!(build_world(&c, 0).is_err());
        let mut c = small();
        c.n_nsfw = 0;
        assert!(build_world(&c, 0).is_err());
        let mut c = small();
        c.separation = 100.0;
        c.max_retries = 50;
        assert!(matches!(build_world(&c, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn sampling_rules() {
        let mut cfg = small();
        cfg.embed_sigma = 0.0;
        cfg.clean_image_sigma = 0.0;
        let w = build_world(&cfg, 1).unwrap();
        let mut rng = SeedStream::new(0);
        let p = w.sample_prompt(0, Variant::Clean, 7, &mut rng).unwrap();
        assert_eq!(p.embedding, w.concepts[0].naive_center);
        assert_eq!(p.label, Label::Clean);
        assert!(w.sample_prompt(0, Variant::Adversarial, 0, &mut rng).is_err());
        assert!(w.sample_prompt(1, Variant::Clean, 0, &mut rng).is_err());
        let a = w
            .sample_prompt(1, Variant::Adversarial, 0, &mut SeedStream::new(5))
            .unwrap();
        let b = w
            .sample_prompt(1, Variant::Adversarial, 0, &mut SeedStream::new(5))
            .unwrap();
        assert_eq!(a, b);
        let pair = w.sample_pair(p, &mut rng).unwrap();
        assert_eq!(pair.x0, w.concepts[0].image_prototype);
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("other".parse::<Variant>().is_err());
    }
}
