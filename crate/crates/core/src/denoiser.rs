//! The conditional noise predictor: an MLP over `[x | time embedding | c]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, out_of_range, Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::{Adam, AdamConfig, BatchGrad, Mlp, MlpCheckpoint};
use crate::par::Exec;
use crate::rng::{derive_seed, SeedStream};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::world::Dataset;

/// Sinusoidal embedding: `[sin(t/T^(2k/d)), cos(t/T^(2k/d))]` for `k < d/2`.
pub fn embed_time(t: usize, t_max: usize, d_t: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; d_t];
    embed_time_into(t, t_max, &mut out)?;
    Ok(out)
}

fn embed_time_into(t: usize, t_max: usize, out: &mut [f64]) -> Result<()> {
    if t >= t_max {
        return Err(out_of_range("t", t, format!("[0, {t_max})")));
    }
    let d_t = out.len();
    if d_t == 0 || d_t % 2 != 0 {
        return Err(Error::Config(format!(
            "time embedding size must be even and positive, got {d_t}"
        )));
    }
    for k in 0..d_t / 2 {
        let f = t as f64 / (t_max as f64).powf(2.0 * k as f64 / d_t as f64);
        out[2 * k] = f.sin();
        out[2 * k + 1] = f.cos();
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Share of each batch drawn from the sampler's starting law instead of
    /// the forward process.
    pub prior_start_fraction: f64,
    /// Lowest training index used for those samples.
    pub prior_start_min_t: usize,
    /// Replace every condition with zeros.
    pub unconditional: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            time_dim: 8,
            train_steps: 20_000,
            batch_size: 64,
            adam: AdamConfig::default(),
            prior_start_fraction: 0.25,
            prior_start_min_t: 880,
            unconditional: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    net: Mlp,
    dim: usize,
    embed_dim: usize,
    time_dim: usize,
    schedule: ScheduleConfig,
}

pub const DENOISER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserCheckpoint {
    #[serde(flatten)]
    pub net: MlpCheckpoint,
    #[serde(rename = "D")]
    pub dim: usize,
    pub d_e: usize,
    pub d_t: usize,
    pub schedule: ScheduleConfig,
}

impl Denoiser {
    /// Glorot-initialised denoiser with the given hidden widths.
    pub fn init(
        dim: usize,
        embed_dim: usize,
        time_dim: usize,
        hidden: &[usize],
        schedule: ScheduleConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![dim + time_dim + embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(dim);
        Self::from_net(Mlp::glorot(&dims, seed)?, dim, embed_dim, time_dim, schedule)
    }

    pub fn from_net(net: Mlp, dim: usize, embed_dim: usize, time_dim: usize, schedule: ScheduleConfig) -> Result<Self> {
        check_dim("denoiser input", dim + time_dim + embed_dim, net.input_dim())?;
        check_dim("denoiser output", dim, net.output_dim())?;
        if time_dim == 0 || time_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding size must be even and positive, got {time_dim}"
            )));
        }
        Ok(Self {
            net,
            dim,
            embed_dim,
            time_dim,
            schedule,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        &self.schedule
    }

    /// Writes `[x | embed_time(t) | c]` into `buf`.
    fn assemble(&self, x: &[f64], t: usize, c: &[f64], buf: &mut Vec<f64>) -> Result<()> {
        check_dim("latent", self.dim, x.len())?;
        check_dim("condition", self.embed_dim, c.len())?;
        buf.clear();
        buf.extend_from_slice(x);
        buf.resize(self.dim + self.time_dim, 0.0);
        embed_time_into(t, self.schedule.t_max, &mut buf[self.dim..])?;
        buf.extend_from_slice(c);
        Ok(())
    }

    pub fn predict_noise(&self, x: &[f64], t: usize, c: &[f64]) -> Result<Vec<f64>> {
        let mut buf = Vec::with_capacity(self.net.input_dim());
        self.assemble(x, t, c, &mut buf)?;
        self.net.forward(&buf)
    }

    pub fn to_checkpoint(&self) -> DenoiserCheckpoint {
        DenoiserCheckpoint {
            net: MlpCheckpoint::from(&self.net),
            dim: self.dim,
            d_e: self.embed_dim,
            d_t: self.time_dim,
            schedule: self.schedule,
        }
    }

    pub fn from_checkpoint(ck: &DenoiserCheckpoint) -> Result<Self> {
        Self::from_net(ck.net.to_mlp()?, ck.dim, ck.d_e, ck.d_t, ck.schedule)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&read_json(path)?)
    }
}

/// Mean squared prediction error over `(x0, c)` pairs at random `(t, eps)`.
pub fn prediction_mse(
    dn: &Denoiser,
    sched: &NoiseSchedule,
    pairs: &[(&[f64], &[f64])],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = SeedStream::new(seed);
    let mut total = 0.0;
    let mut n = 0usize;
    for (x0, c) in pairs {
        for _ in 0..draws {
            let t = rng.below(0, sched.len());
            let eps = rng.normal_vec(dn.dim);
            let xt = sched.forward_diffuse(x0, t, &eps)?;
            let pred = dn.predict_noise(&xt, t, c)?;
            total += pred.iter().zip(&eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / dn.dim as f64;
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}

/// Trains on the whole dataset (every variant). Returns the model and the
/// per-step batch loss.
///
/// Each step draws a batch of `(x0, c)` records uniformly with replacement,
/// `t` uniform on `[0, T)` and `eps ~ N(0, I)`, and regresses `eps` from the
/// forward-diffused `x_t`. The first `floor(batch * prior_start_fraction)`
/// samples of a batch instead take `t` uniform on `[prior_start_min_t, T)`,
/// `x_t ~ N(0, I)` and the target `(x_t - sqrt(ab_t) x0) / sqrt(1 - ab_t)`.
pub fn train_denoiser(
    data: &Dataset,
    schedule: ScheduleConfig,
    cfg: &DenoiserConfig,
    seed: u64,
    exec: Exec,
) -> Result<(Denoiser, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let sched = schedule.build()?;
    let t_max = sched.len();
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.prior_start_fraction) {
        return Err(out_of_range("prior_start_fraction", cfg.prior_start_fraction, "[0, 1]"));
    }
    let n_prior = (cfg.batch_size as f64 * cfg.prior_start_fraction).floor() as usize;
    if n_prior > 0 && cfg.prior_start_min_t >= t_max {
        return Err(out_of_range(
            "prior_start_min_t",
            cfg.prior_start_min_t,
            format!("[0, {t_max})"),
        ));
    }
    let (dim, de) = (data.dim, data.embed_dim);
    let mut dn = Denoiser::init(dim, de, cfg.time_dim, &cfg.hidden, schedule, derive_seed(seed, 0))?;
    let mut opt = Adam::new(&dn.net, cfg.adam)?;
    let mut bg = BatchGrad::new(&dn.net);
    let mut rng = SeedStream::new(derive_seed(seed, 1));
    let zeros = vec![0.0; de];
    let ab = sched.alpha_bars();

    let in_dim = dn.net.input_dim();
    let mut inputs = vec![0.0; cfg.batch_size * in_dim];
    let mut targets = vec![0.0; cfg.batch_size * dim];
    let mut buf = Vec::with_capacity(in_dim);
    let mut trace = Vec::with_capacity(cfg.train_steps);
    for step in 0..cfg.train_steps {
        for b in 0..cfg.batch_size {
            let rec = &data.pairs[rng.below(0, data.len())];
            let x0 = &rec.x0;
            let c = if cfg.unconditional {
                &zeros
            } else {
                &rec.prompt.embedding
            };
            let target = &mut targets[b * dim..(b + 1) * dim];
            let xt = if b < n_prior {
                let t = rng.below(cfg.prior_start_min_t, t_max);
                let xt = rng.normal_vec(dim);
                let (sa, sn) = (ab[t].sqrt(), (1.0 - ab[t]).sqrt());
                for ((e, x), x0i) in target.iter_mut().zip(&xt).zip(x0) {
                    *e = (x - sa * x0i) / sn;
                }
                (xt, t)
            } else {
                let t = rng.below(0, t_max);
                rng.fill_normal(target);
                (sched.forward_diffuse(x0, t, target)?, t)
            };
            dn.assemble(&xt.0, xt.1, c, &mut buf)?;
            inputs[b * in_dim..(b + 1) * in_dim].copy_from_slice(&buf);
        }
        let net = &dn.net;
        let loss = bg.compute(net, cfg.batch_size, exec, |i, ws, g| {
            net.accumulate_mse(
                &inputs[i * in_dim..(i + 1) * in_dim],
                &targets[i * dim..(i + 1) * dim],
                ws,
                g,
            )
        })?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        opt.step(&mut dn.net, bg.grads())?;
        trace.push(loss);
    }
    Ok((dn, trace))
}
