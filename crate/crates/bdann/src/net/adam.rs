//! Adam with bias correction, step-decayed learning rate and L2 coupling.
//!
//! The L2 penalty is added to the raw gradient (weights only, never biases)
//! before the moment updates, so it interacts with the adaptive scaling the
//! same way the reference optimizer stacks do.

use crate::error::{Error, Result};
use crate::net::{Gradients, NetworkState};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub l2_penalty: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            decay_factor: 0.96,
            decay_every: 10,
            l2_penalty: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_learning_rate(lr: f64) -> Self {
        OptimizerConfig {
            learning_rate: lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.decay_factor <= 0.0 || self.decay_factor > 1.0 {
            return Err(Error::InvalidConfig("decay factor must lie in (0, 1]".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidConfig("decay interval must be positive".into()));
        }
        if self.l2_penalty < 0.0 {
            return Err(Error::InvalidConfig("L2 penalty must be nonnegative".into()));
        }
        Ok(())
    }

    /// Learning rate at a zero-based epoch: lr * factor^floor(e / every).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// First and second moment accumulators for one parameter group.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update on a flat parameter slice. `weight_decay` is the L2
/// coefficient to add to the gradient (pass zero for biases).
#[allow(clippy::too_many_arguments)]
pub fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    t: u64,
    lr: f64,
    cfg: &OptimizerConfig,
    weight_decay: f64,
    context: &str,
) -> Result<()> {
    debug_assert_eq!(params.len(), grads.len());
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {context}[{i}]")));
        }
        let m = &mut moments.m[i];
        let v = &mut moments.v[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        if !params[i].is_finite() {
            return Err(Error::NonFinite(format!("parameter {context}[{i}]")));
        }
    }
    Ok(())
}

/// Adam state for a whole deterministic network.
#[derive(Debug, Clone)]
pub struct AdamState {
    weights: Vec<Moments>,
    biases: Vec<Moments>,
    t: u64,
}

impl AdamState {
    pub fn new(state: &NetworkState) -> Self {
        AdamState {
            weights: state
                .weights()
                .iter()
                .map(|w| Moments::zeros(w.as_slice().len()))
                .collect(),
            biases: state
                .biases()
                .iter()
                .map(|b| Moments::zeros(b.len()))
                .collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. `frozen[l] = true` skips layer l entirely: its
    /// parameters and moments stay untouched.
    pub fn step(
        &mut self,
        state: &mut NetworkState,
        grads: &Gradients,
        cfg: &OptimizerConfig,
        epoch: usize,
        frozen: &[bool],
    ) -> Result<()> {
        let n = state.spec().n_layers();
        if frozen.len() != n {
            return Err(Error::Shape(format!(
                "{} freeze flags for {n} layers",
                frozen.len()
            )));
        }
        self.t += 1;
        let lr = cfg.lr_at(epoch);
        for l in 0..n {
            if frozen[l] {
                continue;
            }
            adam_update_slice(
                state.weights_mut()[l].as_mut_slice(),
                grads.d_weights[l].as_slice(),
                &mut self.weights[l],
                self.t,
                lr,
                cfg,
                cfg.l2_penalty,
                &format!("layer {l} weights"),
            )?;
            adam_update_slice(
                &mut state.biases_mut()[l],
                &grads.d_biases[l],
                &mut self.biases[l],
                self.t,
                lr,
                cfg,
                0.0,
                &format!("layer {l} biases"),
            )?;
        }
        Ok(())
    }
}
