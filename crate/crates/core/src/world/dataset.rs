//! Training sets and their newline-delimited JSON file format.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, PromptRecord, TrainingPair, Variant, World};
use crate::error::{check_dim, Error, Result};
use crate::io::{ensure_parent, io_err};
use crate::rng::{derive_seed, SeedStream};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    #[serde(rename = "D")]
    dim: usize,
    d_e: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub embed_dim: usize,
    pub pairs: Vec<TrainingPair>,
}

/// Prompts for every valid (concept, variant) pair, `n` each, in concept
/// order then variant order. Record `i` gets id `first_id + i` and draws from
/// its own stream `derive_seed(seed, id)`.
pub fn sample_prompts(world: &World, n: usize, seed: u64, first_id: u64) -> Result<Vec<PromptRecord>> {
    let mut out = Vec::new();
    for c in &world.concepts {
        for &v in c.variants() {
            for _ in 0..n {
                let id = first_id + out.len() as u64;
                let mut rng = SeedStream::new(derive_seed(seed, id));
                out.push(world.sample_prompt(c.concept_id, v, id, &mut rng)?);
            }
        }
    }
    Ok(out)
}

/// `n` training pairs per valid (concept, variant); the image draw continues
/// the prompt's stream.
pub fn build_dataset(world: &World, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("need at least one record per concept and variant".into()));
    }
    let mut pairs = Vec::new();
    for c in &world.concepts {
        for &v in c.variants() {
            for _ in 0..n {
                let id = pairs.len() as u64;
                let mut rng = SeedStream::new(derive_seed(seed, id));
                let p = world.sample_prompt(c.concept_id, v, id, &mut rng)?;
                pairs.push(world.sample_pair(p, &mut rng)?);
            }
        }
    }
    Ok(Dataset {
        dim: world.dim(),
        embed_dim: world.embed_dim(),
        pairs,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, variant: Variant) -> usize {
        self.pairs.iter().filter(|p| p.prompt.variant == variant).count()
    }

    /// Records whose variant is in `variants`, in file order.
    pub fn filter(&self, variants: &[Variant]) -> Vec<&TrainingPair> {
        self.pairs
            .iter()
            .filter(|p| variants.contains(&p.prompt.variant))
            .collect()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let header = Header {
            format_version: DATASET_FORMAT_VERSION,
            dim: self.dim,
            d_e: self.embed_dim,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serialises"));
        out.push('\n');
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
        w.write_all(self.to_ndjson().as_bytes()).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        Self::read(BufReader::new(file)).map_err(|e| match e {
            Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let bad = |n: usize, e: &dyn std::fmt::Display| Error::Malformed(format!("line {}: {e}", n + 1));
        let (n, first) = lines
            .next()
            .ok_or_else(|| Error::Malformed("empty dataset file".into()))?;
        let first = first.map_err(|e| bad(n, &e))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| bad(n, &e))?;
        if header.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "dataset",
                found: header.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let mut pairs = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| bad(n, &e))?;
            let p: TrainingPair = serde_json::from_str(&line).map_err(|e| bad(n, &e))?;
            check_dim("dataset x0", header.dim, p.x0.len())?;
            check_dim("dataset embedding", header.d_e, p.prompt.embedding.len())?;
            if p.prompt.label != p.prompt.variant.label() {
                return Err(bad(n, &"label does not match variant"));
            }
            pairs.push(p);
        }
        Ok(Self {
            dim: header.dim,
            embed_dim: header.d_e,
            pairs,
        })
    }

    /// Number of clean records and NSFW naive records.
    pub fn label_counts(&self) -> (usize, usize) {
        let clean = self.pairs.iter().filter(|p| p.prompt.label == Label::Clean).count();
        (clean, self.count(Variant::Naive))
    }
}
