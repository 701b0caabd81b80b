use super::{Gradients, Mlp, Workspace};
use crate::error::Result;
use crate::par::{self, Exec};

/// Samples per reduction chunk. Fixed so results do not depend on thread count.
pub const GRAD_CHUNK: usize = 16;

struct Slot {
    grads: Gradients,
    ws: Workspace,
    loss: Result<f64>,
}

/// Batch-mean gradient with a deterministic reduction order: each chunk of
/// [`GRAD_CHUNK`] consecutive samples is summed in order, then chunk sums are
/// added in chunk order and scaled by `1/n`.
pub struct BatchGrad {
    slots: Vec<Slot>,
    total: Gradients,
}

impl BatchGrad {
    pub fn new(net: &Mlp) -> Self {
        Self {
            slots: Vec::new(),
            total: Gradients::zeros_like(net),
        }
    }

    /// Runs `per_sample(i, ws, grads)` for `i in 0..n`, each adding its
    /// gradient into `grads` and returning its loss. Returns the mean loss; the
    /// mean gradient is then available from [`grads`](Self::grads).
    pub fn compute<F>(&mut self, net: &Mlp, n: usize, exec: Exec, per_sample: F) -> Result<f64>
    where
        F: Fn(usize, &mut Workspace, &mut Gradients) -> Result<f64> + Sync + Send,
    {
        let chunks = n.div_ceil(GRAD_CHUNK);
        while self.slots.len() < chunks {
            self.slots.push(Slot {
                grads: Gradients::zeros_like(net),
                ws: Workspace::default(),
                loss: Ok(0.0),
            });
        }
        par::for_each_mut(exec, &mut self.slots[..chunks], |c, slot| {
            slot.grads.fill_zero();
            let mut sum = 0.0;
            for i in c * GRAD_CHUNK..n.min((c + 1) * GRAD_CHUNK) {
                match per_sample(i, &mut slot.ws, &mut slot.grads) {
                    Ok(l) => sum += l,
                    Err(e) => {
                        slot.loss = Err(e);
                        return;
                    }
                }
            }
            slot.loss = Ok(sum);
        });
        self.total.fill_zero();
        let mut loss = 0.0;
        for slot in &mut self.slots[..chunks] {
            loss += std::mem::replace(&mut slot.loss, Ok(0.0))?;
            self.total.add_assign(&slot.grads);
        }
        let inv = 1.0 / n.max(1) as f64;
        self.total.scale(inv);
        Ok(loss * inv)
    }

    pub fn grads(&self) -> &Gradients {
        &self.total
    }
}
