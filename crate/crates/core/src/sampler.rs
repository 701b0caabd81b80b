//! The reverse loop shared by feature extraction, gated and unguarded generation.
//!
//! A run seeded with `seed` draws `x_S ~ N(0, I)` and then one `z ~ N(0, I)`
//! per step except the last, all from the same stream, so any two runs with
//! the same seed agree bit-for-bit on their common prefix.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::denoiser::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::rng::SeedStream;
use crate::schedule::{InferenceStepMap, NoiseSchedule};

/// Anything that predicts noise from `(x_t, t, c)`.
pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;
    fn predict(&self, x: &[f64], t: usize, c: &[f64]) -> Result<Vec<f64>>;
}

impl NoisePredictor for Denoiser {
    fn latent_dim(&self) -> usize {
        self.dim()
    }

    fn predict(&self, x: &[f64], t: usize, c: &[f64]) -> Result<Vec<f64>> {
        self.predict_noise(x, t, c)
    }
}

/// Wraps a predictor and counts its calls.
pub struct CountingPredictor<'a, P: ?Sized> {
    inner: &'a P,
    calls: AtomicUsize,
}

impl<'a, P: NoisePredictor + ?Sized> CountingPredictor<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for CountingPredictor<'_, P> {
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn predict(&self, x: &[f64], t: usize, c: &[f64]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(x, t, c)
    }
}

/// An in-progress reverse trajectory.
pub struct ReverseLoop<'a, P: ?Sized> {
    predictor: &'a P,
    schedule: &'a NoiseSchedule,
    map: &'a InferenceStepMap,
    cond: &'a [f64],
    rng: SeedStream,
    x: Vec<f64>,
    z: Vec<f64>,
    done: usize,
}

impl<'a, P: NoisePredictor + ?Sized> ReverseLoop<'a, P> {
    pub fn start(
        predictor: &'a P,
        schedule: &'a NoiseSchedule,
        map: &'a InferenceStepMap,
        cond: &'a [f64],
        seed: u64,
    ) -> Result<Self> {
        if map.t_max() != schedule.len() {
            return Err(Error::Config(format!(
                "step map built for T={} but schedule has T={}",
                map.t_max(),
                schedule.len()
            )));
        }
        let dim = predictor.latent_dim();
        let mut rng = SeedStream::new(seed);
        let x = rng.normal_vec(dim);
        Ok(Self {
            predictor,
            schedule,
            map,
            cond,
            rng,
            x,
            z: vec![0.0; dim],
            done: 0,
        })
    }

    /// Steps executed so far (= denoiser calls made).
    pub fn steps_done(&self) -> usize {
        self.done
    }

    pub fn is_finished(&self) -> bool {
        self.done == self.map.num_steps()
    }

    pub fn latent(&self) -> &[f64] {
        &self.x
    }

    pub fn into_latent(self) -> Vec<f64> {
        self.x
    }

    /// Runs the next inference step and returns the noise predicted there.
    pub fn step(&mut self) -> Result<Vec<f64>> {
        if self.is_finished() {
            return Err(Error::Config("reverse loop already finished".into()));
        }
        let k = self.done + 1;
        let t = self.map.index(k)?;
        let prev = self.map.prev_index(k)?;
        let eps = self.predictor.predict(&self.x, t, self.cond)?;
        check_dim("predicted noise", self.x.len(), eps.len())?;
        if prev.is_some() {
            self.rng.fill_normal(&mut self.z);
        } else {
            self.z.fill(0.0);
        }
        self.schedule
            .reverse_step_in_place(&mut self.x, &eps, t, prev, &self.z)?;
        self.done = k;
        Ok(eps)
    }

    /// Runs the remaining steps.
    pub fn finish(mut self) -> Result<Vec<f64>> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.x)
    }
}
