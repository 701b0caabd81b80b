//! Noise schedule, forward corruption and the ancestral reverse step.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, out_of_range, Error, Result};

/// Parameters of a linear beta schedule, as stored in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 3e-3,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.t_max, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear schedule: `betas[i] = beta_start + i (beta_end - beta_start) / max(T - 1, 1)`.
pub fn build_schedule(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(out_of_range("T", 0, ">= 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let span = (t_max - 1).max(1) as f64;
    let betas = (0..t_max)
        .map(|i| beta_start + i as f64 * (beta_end - beta_start) / span)
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(out_of_range("T", 0, ">= 1"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(out_of_range("beta", b, "(0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < self.len() {
            Ok(())
        } else {
            Err(out_of_range("t", t, format!("[0, {})", self.len())))
        }
    }

    /// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
    pub fn forward_diffuse(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        check_dim("forward_diffuse", x0.len(), eps.len())?;
        let ab = self.alpha_bars[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// One ancestral step from index `t` to `t - 1`.
    pub fn reverse_step(&self, x: &[f64], eps_pred: &[f64], t: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        let prev = t.checked_sub(1);
        self.reverse_step_to(x, eps_pred, t, prev, z)
    }

    /// Ancestral step from index `t` directly to index `prev` (`None` = clean
    /// data). Uses the effective `alpha = ab_t / ab_prev` of the skipped span,
    /// so it reduces to [`reverse_step`](Self::reverse_step) when
    /// `prev = t - 1`.
    pub fn reverse_step_to(
        &self,
        x: &[f64],
        eps_pred: &[f64],
        t: usize,
        prev: Option<usize>,
        z: &[f64],
    ) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.reverse_step_in_place(&mut out, eps_pred, t, prev, z)?;
        Ok(out)
    }

    pub(crate) fn reverse_step_in_place(
        &self,
        x: &mut [f64],
        eps_pred: &[f64],
        t: usize,
        prev: Option<usize>,
        z: &[f64],
    ) -> Result<()> {
        self.check_t(t)?;
        check_dim("reverse_step eps", x.len(), eps_pred.len())?;
        check_dim("reverse_step z", x.len(), z.len())?;
        let ab_prev = match prev {
            Some(p) if p >= t => return Err(out_of_range("prev", p, format!("< {t}"))),
            Some(p) => self.alpha_bars[p],
            None => 1.0,
        };
        let ab = self.alpha_bars[t];
        // For a single step these equal alphas[t] and betas[t] exactly.
        let (alpha, beta) = if prev.map_or(t == 0, |p| p + 1 == t) {
            (self.alphas[t], self.betas[t])
        } else {
            let a = ab / ab_prev;
            (a, 1.0 - a)
        };
        let coef = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let sigma = beta.sqrt();
        for ((xi, e), zi) in x.iter_mut().zip(eps_pred).zip(z) {
            *xi = inv * (*xi - coef * e) + sigma * zi;
        }
        Ok(())
    }
}

/// Which training index each of the `S` inference steps uses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceStepMap {
    t_max: usize,
    indices: Vec<usize>,
}

/// `indices[i] = T - 1 - floor(i T / S)`.
pub fn make_inference_map(t_max: usize, steps: usize) -> Result<InferenceStepMap> {
    if steps == 0 || steps > t_max {
        return Err(out_of_range("S", steps, format!("[1, {t_max}]")));
    }
    let indices = (0..steps).map(|i| t_max - 1 - i * t_max / steps).collect();
    Ok(InferenceStepMap { t_max, indices })
}

impl InferenceStepMap {
    pub fn num_steps(&self) -> usize {
        self.indices.len()
    }

    pub fn training_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// Training index of 1-based inference step `k`.
    pub fn index(&self, k: usize) -> Result<usize> {
        self.check_step(k)?;
        Ok(self.indices[k - 1])
    }

    /// Index the step after `k` lands on; `None` after the last step.
    pub fn prev_index(&self, k: usize) -> Result<Option<usize>> {
        self.check_step(k)?;
        Ok(self.indices.get(k).copied())
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if (1..=self.num_steps()).contains(&k) {
            Ok(())
        } else {
            Err(out_of_range("inference step", k, format!("[1, {}]", self.num_steps())))
        }
    }
}
