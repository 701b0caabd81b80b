//! Fully connected ReLU networks with exact backpropagation.

mod adam;
mod batch;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use batch::BatchGrad;
pub use checkpoint::{Activation, MlpCheckpoint, NN_FORMAT_VERSION};

use crate::error::{check_dim, out_of_range, Error, Result};
use crate::rng::SeedStream;

/// Weights are stored per layer as row-major `out x in` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Same shape as an [`Mlp`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-thread scratch for forward and backward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "layer_dims needs at least 2 entries, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!("zero width in layer_dims {dims:?}")));
    }
    Ok(())
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let weights = dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut rng = SeedStream::new(seed);
        for (l, w) in net.weights.iter_mut().enumerate() {
            let limit = (6.0 / (dims[l] + dims[l + 1]) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.uniform(-limit, limit);
            }
        }
        Ok(net)
    }

    /// Builds a network from flat row-major layer matrices.
    pub fn from_parts(dims: &[usize], weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        validate_dims(dims)?;
        check_dim("weight layers", dims.len() - 1, weights.len())?;
        check_dim("bias layers", dims.len() - 1, biases.len())?;
        for l in 0..weights.len() {
            check_dim("weight matrix", dims[l] * dims[l + 1], weights[l].len())?;
            check_dim("bias vector", dims[l + 1], biases[l].len())?;
        }
        let net = Self {
            dims: dims.to_vec(),
            weights,
            biases,
        };
        if !net.is_finite() {
            return Err(Error::Malformed("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`params_flat`](Self::params_flat).
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameters", self.param_count(), flat.len())?;
        let mut rest = flat;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (a, r) = rest.split_at(w.len());
            w.copy_from_slice(a);
            let (a, r) = r.split_at(b.len());
            b.copy_from_slice(a);
            rest = r;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        Ok(self.forward_ws(input, &mut ws)?.to_vec())
    }

    /// Forward pass keeping every layer's activations in `ws`.
    pub fn forward_ws<'w>(&self, input: &[f64], ws: &'w mut Workspace) -> Result<&'w [f64]> {
        check_dim("network input", self.input_dim(), input.len())?;
        let n = self.n_layers();
        ws.acts.resize_with(n + 1, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(input);
        for l in 0..n {
            let (done, rest) = ws.acts.split_at_mut(l + 1);
            let x = &done[l];
            let out = &mut rest[0];
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            out.clear();
            out.extend_from_slice(&self.biases[l]);
            let w = &self.weights[l];
            for (i, o) in out.iter_mut().enumerate() {
                *o += dot(&w[i * n_in..(i + 1) * n_in], x);
            }
            if l + 1 < n {
                for o in out.iter_mut() {
                    *o = o.max(0.0);
                }
            }
            debug_assert_eq!(out.len(), n_out);
        }
        Ok(&ws.acts[n])
    }

    /// Mean squared error over output coordinates and its gradient.
    pub fn mse_loss_grad(&self, input: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
        let mut g = Gradients::zeros_like(self);
        let loss = self.accumulate_mse(input, target, &mut Workspace::default(), &mut g)?;
        Ok((loss, g))
    }

    /// Softmax cross-entropy against class `label` and its gradient.
    pub fn xent_loss_grad(&self, input: &[f64], label: usize) -> Result<(f64, Gradients)> {
        let mut g = Gradients::zeros_like(self);
        let loss = self.accumulate_xent(input, label, &mut Workspace::default(), &mut g)?;
        Ok((loss, g))
    }

    /// Adds the MSE gradient for one sample into `grads` and returns the loss.
    pub fn accumulate_mse(
        &self,
        input: &[f64],
        target: &[f64],
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> Result<f64> {
        check_dim("mse target", self.output_dim(), target.len())?;
        self.forward_ws(input, ws)?;
        let out = &ws.acts[self.n_layers()];
        let scale = 2.0 / target.len() as f64;
        let mut loss = 0.0;
        ws.delta.clear();
        for (o, y) in out.iter().zip(target) {
            let r = o - y;
            loss += r * r;
            ws.delta.push(scale * r);
        }
        self.backward(ws, grads);
        Ok(loss / target.len() as f64)
    }

    /// Adds the cross-entropy gradient for one sample into `grads` and returns the loss.
    pub fn accumulate_xent(
        &self,
        input: &[f64],
        label: usize,
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> Result<f64> {
        if label >= self.output_dim() {
            return Err(out_of_range("label", label, format!("[0, {})", self.output_dim())));
        }
        let logits = self.forward_ws(input, ws)?;
        let (probs, log_z) = softmax_with_lse(logits);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let loss = (m - logits[label]) + log_z;
        ws.delta.clear();
        ws.delta.extend_from_slice(&probs);
        ws.delta[label] -= 1.0;
        self.backward(ws, grads);
        Ok(loss)
    }

    /// Backpropagates `ws.delta` (dL/d output) through the cached activations.
    fn backward(&self, ws: &mut Workspace, grads: &mut Gradients) {
        for l in (0..self.n_layers()).rev() {
            let n_in = self.dims[l];
            let x = &ws.acts[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for (i, &d) in ws.delta.iter().enumerate() {
                gb[i] += d;
                if d != 0.0 {
                    axpy(d, x, &mut gw[i * n_in..(i + 1) * n_in]);
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            ws.delta_prev.clear();
            ws.delta_prev.resize(n_in, 0.0);
            for (i, &d) in ws.delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[i * n_in..(i + 1) * n_in], &mut ws.delta_prev);
                }
            }
            for (dp, a) in ws.delta_prev.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *dp = 0.0;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Same ordering as [`Mlp::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(&other.biases))
        {
            axpy(1.0, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn same_shape(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Softmax and `log(sum(exp(z - max z)))`.
fn softmax_with_lse(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), sum.ln())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_with_lse(logits).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_max_rel_err(net: &Mlp, loss: &dyn Fn(&Mlp) -> f64, g: &Gradients) -> f64 {
        let h = 1e-5;
        let base = net.params_flat();
        let ana = g.flat();
        let mut probe = net.clone();
        let mut worst = 0.0f64;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_params_flat(&p).unwrap();
            let up = loss(&probe);
            p[k] = base[k] - h;
            probe.set_params_flat(&p).unwrap();
            let down = loss(&probe);
            let num = (up - down) / (2.0 * h);
            worst = worst.max((num - ana[k]).abs() / num.abs().max(ana[k].abs()).max(1e-6));
        }
        worst
    }

    #[test]
    fn hand_forward() {
        let net = Mlp::from_parts(&[2, 1], vec![vec![1.0, -1.0]], vec![vec![0.5]]).unwrap();
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), vec![-0.5]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn zero_and_identity_nets() {
        let z = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(z.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let id = Mlp::from_parts(&[2, 2], vec![vec![1.0, 0.0, 0.0, 1.0]], vec![vec![0.0; 2]]).unwrap();
        assert_eq!(id.forward(&[-4.0, 7.0]).unwrap(), vec![-4.0, 7.0]);
    }

    #[test]
    fn scalar_mse_by_hand() {
        let net = Mlp::from_parts(&[1, 1], vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        let (loss, g) = net.mse_loss_grad(&[1.0], &[0.0]).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g.weights[0][0], 2.0);
        assert_eq!(g.biases[0][0], 2.0);
        let (loss, g) = net.mse_loss_grad(&[1.0], &[1.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.weights[0][0], 0.0);
    }

    #[test]
    fn xent_reference_values() {
        let z2 = Mlp::zeros(&[3, 2]).unwrap();
        let (l2, _) = z2.xent_loss_grad(&[1.0, 2.0, 3.0], 1).unwrap();
        assert!((l2 - 2f64.ln()).abs() < 1e-15);
        let z8 = Mlp::zeros(&[3, 4, 8]).unwrap();
        let (l8, _) = z8.xent_loss_grad(&[1.0, 2.0, 3.0], 5).unwrap();
        assert!((l8 - 8f64.ln()).abs() < 1e-14);
        assert!(z8.xent_loss_grad(&[1.0, 2.0, 3.0], 8).is_err());
        let sep = Mlp::from_parts(&[1, 2], vec![vec![0.0, 0.0]], vec![vec![10.0, -10.0]]).unwrap();
        let (l, g) = sep.xent_loss_grad(&[0.3], 0).unwrap();
        let want = (1.0 + (-20f64).exp()).ln();
        assert!((l - want).abs() < 1e-15 && (l - 2.06e-9).abs() < 1e-11);
        let err = fd_max_rel_err(&sep, &|n| n.xent_loss_grad(&[0.3], 0).unwrap().0, &g);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let net = Mlp::glorot(&[3, 5, 4, 2], seed).unwrap();
            let mut rng = SeedStream::new(100 + seed);
            let x = rng.normal_vec(3);
            let y = rng.normal_vec(2);
            let (_, g) = net.mse_loss_grad(&x, &y).unwrap();
            let e = fd_max_rel_err(&net, &|n| n.mse_loss_grad(&x, &y).unwrap().0, &g);
            assert!(e < 1e-4, "mse seed {seed}: {e}");
            let (_, g) = net.xent_loss_grad(&x, 1).unwrap();
            let e = fd_max_rel_err(&net, &|n| n.xent_loss_grad(&x, 1).unwrap().0, &g);
            assert!(e < 1e-4, "xent seed {seed}: {e}");
        }
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let dims = [16, 128, 64, 32, 16, 2];
        let a = Mlp::glorot(&dims, 1).unwrap();
        assert_eq!(a, Mlp::glorot(&dims, 1).unwrap());
        assert_ne!(a, Mlp::glorot(&dims, 2).unwrap());
        assert_eq!(a.n_layers(), 5);
        let by_hand = 16 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32 + 32 * 16 + 16 + 16 * 2 + 2;
        assert_eq!(a.param_count(), by_hand);
        assert_eq!(by_hand, 13_074);
        let lim = (6.0f64 / 144.0).sqrt();
        assert!(a.weights()[0].iter().all(|w| w.abs() <= lim));
        assert!(a.biases().iter().all(|b| b.iter().all(|v| *v == 0.0)));
        assert!(Mlp::zeros(&[4]).is_err());
        assert!(Mlp::zeros(&[]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[2.0, -2.0]);
        assert!((p[0] - 0.98201).abs() < 1e-5);
        let q = softmax(&[1000.0, -1000.0, 3.0]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn from_parts_validates() {
        assert!(Mlp::from_parts(&[2, 1], vec![vec![1.0]], vec![vec![0.0]]).is_err());
        assert!(Mlp::from_parts(&[1, 1], vec![vec![f64::NAN]], vec![vec![0.0]]).is_err());
    }
}
