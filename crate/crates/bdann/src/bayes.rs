//! Mean-field variational networks over the dense engine.
//!
//! Each parameter carries a Gaussian posterior (mean, softplus-parameterized
//! std) and a Gaussian prior. Training draws one weight realization per step
//! through the reparameterization trick, so likelihood gradients flow into
//! posterior means and stds analytically; the KL term is closed form.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::net::loss::{gaussian_nll, loss_and_output_grad, Loss, VARIANCE_FLOOR};
use crate::net::{sigmoid, softplus, softplus_inverse, Mat, NetworkSpec, NetworkState};
use crate::rng::stream;

/// Posterior and prior for one weight layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VarLayer {
    pub w_mean: Mat,
    pub w_rho: Mat,
    pub b_mean: Vec<f64>,
    pub b_rho: Vec<f64>,
    /// Per-parameter prior means; unit prior std throughout.
    pub prior_w_mean: Mat,
    pub prior_b_mean: Vec<f64>,
}

/// Prior standard deviation shared by every parameter.
pub const PRIOR_STD: f64 = 1.0;

/// Mean-field variational network.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariationalState {
    spec: NetworkSpec,
    layers: Vec<VarLayer>,
}

impl VariationalState {
    /// Builds the fine-tuning network from a trained deterministic stack.
    ///
    /// Topology is copied except the single regression output widens to a
    /// (mean, raw variance) pair. Posterior means start at the deterministic
    /// weights; every posterior std starts at `init_std` exactly. Priors are
    /// unit-variance Gaussians centered at the transferred weights; the new
    /// variance-head row has no deterministic counterpart, so it starts from
    /// a fresh fan-in draw with a standard normal prior.
    pub fn from_deterministic(det: &NetworkState, init_std: f64, fresh_seed: u64) -> Result<Self> {
        if det.spec().out_dim() != 1 {
            return Err(Error::Shape(format!(
                "expected a single regression output, got {}",
                det.spec().out_dim()
            )));
        }
        if init_std <= 0.0 || !init_std.is_finite() {
            return Err(Error::InvalidArgument(
                "posterior init std must be positive".into(),
            ));
        }
        let spec = det.spec().with_out_dim(2)?;
        let rho0 = softplus_inverse(init_std);
        let n = spec.n_layers();
        let last = n - 1;
        let mut rng = stream(fresh_seed);
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let det_w = &det.weights()[l];
            let det_b = &det.biases()[l];
            let (rows, cols) = if l == last {
                (2, det_w.cols())
            } else {
                (det_w.rows(), det_w.cols())
            };
            let mut w_mean = Mat::zeros(rows, cols);
            let mut prior_w_mean = Mat::zeros(rows, cols);
            let mut b_mean = vec![0.0; rows];
            let mut prior_b_mean = vec![0.0; rows];
            for r in 0..rows {
                let transferred = l != last || r == 0;
                for c in 0..cols {
                    let v = if transferred {
                        det_w.at(r, c)
                    } else {
                        // Fresh variance-head row: fan-in scaled uniform.
                        let limit = (6.0 / cols as f64).sqrt();
                        use rand::Rng;
                        rng.random_range(-limit..limit)
                    };
                    *w_mean.at_mut(r, c) = v;
                    *prior_w_mean.at_mut(r, c) = if transferred { v } else { 0.0 };
                }
                if transferred {
                    b_mean[r] = det_b[r];
                    prior_b_mean[r] = det_b[r];
                }
            }
            let mut w_rho = Mat::zeros(rows, cols);
            for v in w_rho.as_mut_slice() {
                *v = rho0;
            }
            layers.push(VarLayer {
                w_mean,
                w_rho,
                b_mean,
                b_rho: vec![rho0; rows],
                prior_w_mean,
                prior_b_mean,
            });
        }
        Ok(VariationalState { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[VarLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [VarLayer] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 2 * (l.w_mean.as_slice().len() + l.b_mean.len()))
            .sum()
    }

    pub fn from_parts(spec: NetworkSpec, layers: Vec<VarLayer>) -> Result<Self> {
        if layers.len() != spec.n_layers() {
            return Err(Error::Shape(format!(
                "{} variational layers for a {}-layer spec",
                layers.len(),
                spec.n_layers()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (spec.layer_sizes()[l], spec.layer_sizes()[l + 1]);
            let shapes_ok = layer.w_mean.rows() == fan_out
                && layer.w_mean.cols() == fan_in
                && layer.w_rho.rows() == fan_out
                && layer.w_rho.cols() == fan_in
                && layer.prior_w_mean.rows() == fan_out
                && layer.prior_w_mean.cols() == fan_in
                && layer.b_mean.len() == fan_out
                && layer.b_rho.len() == fan_out
                && layer.prior_b_mean.len() == fan_out;
            if !shapes_ok {
                return Err(Error::Shape(format!("variational layer {l} shapes")));
            }
        }
        Ok(VariationalState { spec, layers })
    }

    /// One reparameterized draw: w = mean + softplus(rho) * eps.
    /// Draw order is fixed (layers in order, weights row-major, then biases)
    /// so a seed pins the realization.
    pub fn sample_weights(&self, rng: &mut ChaCha8Rng) -> NetworkState {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut w = layer.w_mean.clone();
            for (v, r) in w.as_mut_slice().iter_mut().zip(layer.w_rho.as_slice()) {
                let eps: f64 = StandardNormal.sample(rng);
                *v += softplus(*r) * eps;
            }
            let mut b = layer.b_mean.clone();
            for (v, r) in b.iter_mut().zip(&layer.b_rho) {
                let eps: f64 = StandardNormal.sample(rng);
                *v += softplus(*r) * eps;
            }
            weights.push(w);
            biases.push(b);
        }
        NetworkState::from_parts(self.spec.clone(), weights, biases)
            .expect("sampled shapes match the spec by construction")
    }

    /// Posterior means as a deterministic network (no sampling).
    pub fn mean_network(&self) -> NetworkState {
        NetworkState::from_parts(
            self.spec.clone(),
            self.layers.iter().map(|l| l.w_mean.clone()).collect(),
            self.layers.iter().map(|l| l.b_mean.clone()).collect(),
        )
        .expect("mean shapes match the spec by construction")
    }

    /// Total KL(q || p) over all parameters, closed form.
    pub fn kl_total(&self) -> f64 {
        let mut acc = 0.0;
        for layer in &self.layers {
            for i in 0..layer.w_mean.as_slice().len() {
                acc += kl_gaussian(
                    layer.w_mean.as_slice()[i],
                    softplus(layer.w_rho.as_slice()[i]),
                    layer.prior_w_mean.as_slice()[i],
                    PRIOR_STD,
                );
            }
            for i in 0..layer.b_mean.len() {
                acc += kl_gaussian(
                    layer.b_mean[i],
                    softplus(layer.b_rho[i]),
                    layer.prior_b_mean[i],
                    PRIOR_STD,
                );
            }
        }
        acc
    }
}

/// KL divergence between two univariate Gaussians,
/// KL(N(qm, qs^2) || N(pm, ps^2)).
pub fn kl_gaussian(q_mean: f64, q_std: f64, p_mean: f64, p_std: f64) -> f64 {
    let r = q_std / p_std;
    let d = q_mean - p_mean;
    (p_std / q_std).ln() + (r * r + d * d / (p_std * p_std) - 1.0) * 0.5
}

/// Annealing schedule for the KL weight: beta(p) = beta_max *
/// (2 / (1 + exp(-10 p)) - 1) over training progress p in [0, 1].
/// Starts at zero, saturates near beta_max, monotone throughout.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BetaSchedule {
    pub beta_max: f64,
}

impl BetaSchedule {
    pub fn new(beta_max: f64) -> Result<Self> {
        if beta_max < 0.0 || !beta_max.is_finite() {
            return Err(Error::InvalidConfig("beta_max must be nonnegative".into()));
        }
        Ok(BetaSchedule { beta_max })
    }

    pub fn beta_at(&self, progress: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&progress));
        let p = progress.clamp(0.0, 1.0);
        self.beta_max * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
    }
}

/// Gradients for every variational parameter group.
#[derive(Debug, Clone)]
pub struct VarGradients {
    pub d_w_mean: Vec<Mat>,
    pub d_w_rho: Vec<Mat>,
    pub d_b_mean: Vec<Vec<f64>>,
    pub d_b_rho: Vec<Vec<f64>>,
}

impl VarGradients {
    pub fn zeros_like(state: &VariationalState) -> Self {
        VarGradients {
            d_w_mean: state
                .layers
                .iter()
                .map(|l| Mat::zeros(l.w_mean.rows(), l.w_mean.cols()))
                .collect(),
            d_w_rho: state
                .layers
                .iter()
                .map(|l| Mat::zeros(l.w_rho.rows(), l.w_rho.cols()))
                .collect(),
            d_b_mean: state
                .layers
                .iter()
                .map(|l| vec![0.0; l.b_mean.len()])
                .collect(),
            d_b_rho: state
                .layers
                .iter()
                .map(|l| vec![0.0; l.b_rho.len()])
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_w_mean.iter().all(Mat::is_finite)
            && self.d_w_rho.iter().all(Mat::is_finite)
            && self.d_b_mean.iter().flatten().all(|v| v.is_finite())
            && self.d_b_rho.iter().flatten().all(|v| v.is_finite())
    }
}

/// Negative ELBO for a batch given an already-sampled weight realization:
/// mean Gaussian NLL plus beta * KL / n_train.
///
/// `n_train` is the full training-set size, which keeps the KL weight
/// consistent across minibatches of different sizes.
pub fn elbo_loss_sampled(
    xs: &[Vec<f64>],
    ys: &[f64],
    state: &VariationalState,
    sampled: &NetworkState,
    beta: f64,
    n_train: usize,
) -> Result<f64> {
    if n_train == 0 {
        return Err(Error::Degenerate("ELBO with empty training set".into()));
    }
    let outputs = sampled.infer_batch(xs)?;
    let nll = gaussian_nll(ys, &outputs)?;
    Ok(nll + beta * state.kl_total() / n_train as f64)
}

/// Negative ELBO with one fresh reparameterized draw from `rng`.
pub fn elbo_loss(
    xs: &[Vec<f64>],
    ys: &[f64],
    state: &VariationalState,
    beta: f64,
    n_train: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let sampled = state.sample_weights(rng);
    elbo_loss_sampled(xs, ys, state, &sampled, beta, n_train)
}

/// Negative ELBO and its gradients via one reparameterized draw.
///
/// The same `rng` seed draws the same epsilon realization regardless of the
/// posterior parameters, which is what makes finite-difference checks of
/// this function well-posed.
pub fn elbo_grad(
    xs: &[Vec<f64>],
    ys: &[f64],
    state: &VariationalState,
    beta: f64,
    n_train: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, VarGradients)> {
    if n_train == 0 {
        return Err(Error::Degenerate("ELBO with empty training set".into()));
    }
    let sampled = state.sample_weights(rng);
    let cache = sampled.forward_cached(xs, None)?;
    let (nll, d_out) = loss_and_output_grad(Loss::GaussianNll, ys, cache.output())?;
    let (w_grads, _) = sampled.backward_from(&cache, &d_out);
    let kl_scale = beta / n_train as f64;
    let loss = nll + kl_scale * state.kl_total();

    let mut grads = VarGradients::zeros_like(state);
    for (l, layer) in state.layers.iter().enumerate() {
        // Weights.
        let dw = w_grads.d_weights[l].as_slice();
        let wm = layer.w_mean.as_slice();
        let wr = layer.w_rho.as_slice();
        let ws = sampled.weights()[l].as_slice();
        let gm = grads.d_w_mean[l].as_mut_slice();
        let gr = grads.d_w_rho[l].as_mut_slice();
        let pm = layer.prior_w_mean.as_slice();
        for i in 0..wm.len() {
            let std = softplus(wr[i]);
            // Recover the epsilon used in the draw; std > 0 always.
            let eps = (ws[i] - wm[i]) / std;
            let sig = sigmoid(wr[i]);
            // dKL/d(mean) and dKL/d(std) in closed form, unit prior std.
            let d_kl_mean = (wm[i] - pm[i]) / (PRIOR_STD * PRIOR_STD);
            let d_kl_std = std / (PRIOR_STD * PRIOR_STD) - 1.0 / std;
            gm[i] = dw[i] + kl_scale * d_kl_mean;
            gr[i] = (dw[i] * eps + kl_scale * d_kl_std) * sig;
        }
        // Biases.
        let db = &w_grads.d_biases[l];
        let bs = &sampled.biases()[l];
        for i in 0..layer.b_mean.len() {
            let std = softplus(layer.b_rho[i]);
            let eps = (bs[i] - layer.b_mean[i]) / std;
            let sig = sigmoid(layer.b_rho[i]);
            let d_kl_mean = (layer.b_mean[i] - layer.prior_b_mean[i]) / (PRIOR_STD * PRIOR_STD);
            let d_kl_std = std / (PRIOR_STD * PRIOR_STD) - 1.0 / std;
            grads.d_b_mean[l][i] = db[i] + kl_scale * d_kl_mean;
            grads.d_b_rho[l][i] = (db[i] * eps + kl_scale * d_kl_std) * sig;
        }
    }
    Ok((loss, grads))
}

/// Predictive summary from Monte Carlo draws.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictiveSummary {
    pub mean: f64,
    pub epistemic_std: f64,
    pub aleatoric_std: f64,
    pub total_std: f64,
    pub n_samples: usize,
}

/// MC prediction for a single input: draws `n_samples` weight realizations
/// and decomposes predictive uncertainty into the spread of sampled means
/// (epistemic) and the average sampled variance (aleatoric).
pub fn predict_mc(
    state: &VariationalState,
    x: &[f64],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PredictiveSummary> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(
            "MC prediction needs at least 2 samples".into(),
        ));
    }
    let mut means = Vec::with_capacity(n_samples);
    let mut vars = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let net = state.sample_weights(rng);
        let out = net.infer(x)?;
        means.push(out[0]);
        vars.push(softplus(out[1]) + VARIANCE_FLOOR);
    }
    Ok(summarize(&means, &vars))
}

/// MC prediction over a batch: draws `n_samples` realizations once and runs
/// each over all rows, so every row sees the same weight draws.
pub fn predict_mc_batch(
    state: &VariationalState,
    xs: &[Vec<f64>],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PredictiveSummary>> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(
            "MC prediction needs at least 2 samples".into(),
        ));
    }
    let mut means = vec![Vec::with_capacity(n_samples); xs.len()];
    let mut vars = vec![Vec::with_capacity(n_samples); xs.len()];
    for _ in 0..n_samples {
        let net = state.sample_weights(rng);
        let outs = net.infer_batch(xs)?;
        for (i, out) in outs.iter().enumerate() {
            means[i].push(out[0]);
            vars[i].push(softplus(out[1]) + VARIANCE_FLOOR);
        }
    }
    Ok(means
        .iter()
        .zip(&vars)
        .map(|(m, v)| summarize(m, v))
        .collect())
}

fn summarize(means: &[f64], vars: &[f64]) -> PredictiveSummary {
    let s = means.len() as f64;
    let mean = means.iter().sum::<f64>() / s;
    // Two-pass population variance of the sampled means.
    let epi_var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / s;
    let ale_var = vars.iter().sum::<f64>() / s;
    let epistemic_std = epi_var.max(0.0).sqrt();
    let aleatoric_std = ale_var.sqrt();
    PredictiveSummary {
        mean,
        epistemic_std,
        aleatoric_std,
        total_std: (epistemic_std * epistemic_std + aleatoric_std * aleatoric_std).sqrt(),
        n_samples: means.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetworkSpec};
    use approx::assert_relative_eq;

    fn det_net(seed: u64) -> NetworkState {
        let spec = NetworkSpec::mlp(3, &[6, 4], 1, Activation::Tanh, Activation::Identity, 0.0)
            .unwrap();
        NetworkState::init(spec, seed)
    }

    #[test]
    fn kl_matches_closed_form_references() {
        // KL(N(0, 0.1) || N(0, 1)) and KL(N(1, 1) || N(0, 1)).
        assert_relative_eq!(
            kl_gaussian(0.0, 0.1, 0.0, 1.0),
            1.8075850929940458,
            epsilon = 1e-15
        );
        assert_relative_eq!(kl_gaussian(1.0, 1.0, 0.0, 1.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(kl_gaussian(0.7, 1.0, 0.7, 1.0), 0.0, epsilon = 1e-15);
        assert!(kl_gaussian(0.3, 0.5, 0.0, 1.0) > 0.0);
    }

    #[test]
    fn beta_schedule_anchors_and_monotone() {
        let s = BetaSchedule::new(0.8).unwrap();
        assert_relative_eq!(s.beta_at(0.0), 0.0, epsilon = 1e-15);
        // 2 / (1 + e^-10) - 1 at p = 1.
        assert_relative_eq!(s.beta_at(1.0), 0.8 * 0.9999092042625952, epsilon = 1e-12);
        let mut prev = -1.0;
        for i in 0..=50 {
            let b = s.beta_at(i as f64 / 50.0);
            assert!(b >= prev);
            prev = b;
        }
        assert!(BetaSchedule::new(-0.1).is_err());
    }

    #[test]
    fn init_from_deterministic_copies_means_and_sets_stds() {
        let det = det_net(21);
        let v = VariationalState::from_deterministic(&det, 0.1, 99).unwrap();
        assert_eq!(v.spec().out_dim(), 2);
        let last = v.layers().len() - 1;
        for (l, layer) in v.layers().iter().enumerate() {
            // Posterior stds are exactly 0.1 everywhere.
            for &r in layer.w_rho.as_slice() {
                assert_relative_eq!(softplus(r), 0.1, epsilon = 1e-15);
            }
            for &r in &layer.b_rho {
                assert_relative_eq!(softplus(r), 0.1, epsilon = 1e-15);
            }
            let det_w = &det.weights()[l];
            let rows = if l == last { 1 } else { det_w.rows() };
            for r in 0..rows {
                for c in 0..det_w.cols() {
                    assert_eq!(layer.w_mean.at(r, c), det_w.at(r, c));
                    assert_eq!(layer.prior_w_mean.at(r, c), det_w.at(r, c));
                }
                assert_eq!(layer.b_mean[r], det.biases()[l][r]);
            }
        }
        // Fresh variance-head row: standard normal prior, nonzero init.
        let head = &v.layers()[last];
        for c in 0..head.w_mean.cols() {
            assert_eq!(head.prior_w_mean.at(1, c), 0.0);
        }
        assert_eq!(head.prior_b_mean[1], 0.0);
        assert_eq!(head.b_mean[1], 0.0);
        // Rejects multi-output bases.
        let spec2 = NetworkSpec::mlp(3, &[4], 2, Activation::Tanh, Activation::Identity, 0.0)
            .unwrap();
        let det2 = NetworkState::init(spec2, 0);
        assert!(VariationalState::from_deterministic(&det2, 0.1, 0).is_err());
    }

    #[test]
    fn kl_total_at_init_matches_parameter_count() {
        // At init every transferred parameter contributes exactly
        // KL(N(m, 0.1) || N(m, 1)) = KL(N(0, 0.1) || N(0, 1)); the fresh
        // variance-head parameters add KL(N(v, 0.1) || N(0, 1)).
        let det = det_net(5);
        let v = VariationalState::from_deterministic(&det, 0.1, 3).unwrap();
        let per_param = kl_gaussian(0.0, 0.1, 0.0, 1.0);
        let mut expected = 0.0;
        let last = v.layers().len() - 1;
        for (l, layer) in v.layers().iter().enumerate() {
            let total = layer.w_mean.as_slice().len() + layer.b_mean.len();
            if l != last {
                expected += per_param * total as f64;
            } else {
                let cols = layer.w_mean.cols();
                expected += per_param * (cols + 1) as f64; // transferred row + bias
                for c in 0..cols {
                    expected += kl_gaussian(layer.w_mean.at(1, c), 0.1, 0.0, 1.0);
                }
                expected += kl_gaussian(layer.b_mean[1], 0.1, 0.0, 1.0);
            }
        }
        assert_relative_eq!(v.kl_total(), expected, epsilon = 1e-10);
    }

    #[test]
    fn sampling_is_seed_deterministic_and_spread_scales_with_std() {
        let det = det_net(8);
        let v = VariationalState::from_deterministic(&det, 0.1, 1).unwrap();
        let a = v.sample_weights(&mut stream(42));
        let b = v.sample_weights(&mut stream(42));
        let c = v.sample_weights(&mut stream(43));
        assert_eq!(a.weights()[0], b.weights()[0]);
        assert_ne!(a.weights()[0], c.weights()[0]);
        // Empirical std of one sampled parameter across draws is near 0.1.
        let mut rng = stream(7);
        let n = 4000;
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            vals.push(v.sample_weights(&mut rng).weights()[0].at(0, 0));
        }
        let mean: f64 = vals.iter().sum::<f64>() / n as f64;
        let var: f64 = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert_relative_eq!(var.sqrt(), 0.1, max_relative = 0.06);
        assert_relative_eq!(mean, v.layers()[0].w_mean.at(0, 0), epsilon = 0.01);
    }

    #[test]
    fn elbo_decomposes_into_nll_plus_scaled_kl() {
        let det = det_net(2);
        let v = VariationalState::from_deterministic(&det, 0.1, 4).unwrap();
        let xs = vec![vec![0.1, -0.2, 0.5], vec![0.9, 0.4, -0.7]];
        let ys = vec![0.3, -0.1];
        let sampled = v.sample_weights(&mut stream(11));
        let nll = gaussian_nll(&ys, &sampled.infer_batch(&xs).unwrap()).unwrap();
        let n_train = 10;
        let beta = 0.7;
        let total = elbo_loss_sampled(&xs, &ys, &v, &sampled, beta, n_train).unwrap();
        assert_relative_eq!(
            total,
            nll + beta * v.kl_total() / n_train as f64,
            epsilon = 1e-12
        );
        // beta = 0 leaves pure NLL.
        let nll_only = elbo_loss_sampled(&xs, &ys, &v, &sampled, 0.0, n_train).unwrap();
        assert_relative_eq!(nll_only, nll, epsilon = 1e-15);
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let det = det_net(14);
        let mut v = VariationalState::from_deterministic(&det, 0.1, 6).unwrap();
        let xs = vec![
            vec![0.4, -0.1, 0.2],
            vec![-0.5, 0.8, 0.3],
            vec![0.1, 0.1, -0.9],
        ];
        let ys = vec![0.5, -0.2, 0.9];
        let beta = 0.4;
        let n_train = 7;
        let seed = 31;
        let (_, grads) = elbo_grad(&xs, &ys, &v, beta, n_train, &mut stream(seed)).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for l in 0..v.layers().len() {
            for i in 0..v.layers()[l].w_mean.as_slice().len() {
                for which in 0..2 {
                    let read = |st: &VariationalState| match which {
                        0 => st.layers()[l].w_mean.as_slice()[i],
                        _ => st.layers()[l].w_rho.as_slice()[i],
                    };
                    let write = |st: &mut VariationalState, val: f64| match which {
                        0 => st.layers_mut()[l].w_mean.as_mut_slice()[i] = val,
                        _ => st.layers_mut()[l].w_rho.as_mut_slice()[i] = val,
                    };
                    let orig = read(&v);
                    write(&mut v, orig + h);
                    let up = elbo_loss(&xs, &ys, &v, beta, n_train, &mut stream(seed)).unwrap();
                    write(&mut v, orig - h);
                    let dn = elbo_loss(&xs, &ys, &v, beta, n_train, &mut stream(seed)).unwrap();
                    write(&mut v, orig);
                    let fd = (up - dn) / (2.0 * h);
                    let an = match which {
                        0 => grads.d_w_mean[l].as_slice()[i],
                        _ => grads.d_w_rho[l].as_slice()[i],
                    };
                    worst = worst.max((an - fd).abs() / 1.0_f64.max(an.abs()).max(fd.abs()));
                }
            }
        }
        assert!(worst < 1e-6, "worst relative ELBO gradient error {worst}");
    }

    #[test]
    fn predictive_decomposition_is_exact() {
        let det = det_net(3);
        let v = VariationalState::from_deterministic(&det, 0.1, 9).unwrap();
        let x = vec![0.2, 0.4, -0.3];
        let s = predict_mc(&v, &x, 64, &mut stream(5)).unwrap();
        assert_relative_eq!(
            s.total_std * s.total_std,
            s.epistemic_std * s.epistemic_std + s.aleatoric_std * s.aleatoric_std,
            epsilon = 1e-12
        );
        assert!(s.aleatoric_std > 0.0);
        assert_eq!(s.n_samples, 64);
        assert!(predict_mc(&v, &x, 1, &mut stream(5)).is_err());
    }

    #[test]
    fn batch_and_single_prediction_agree_statistically() {
        // The batch path reuses draws across rows; for the same total sample
        // budget it must agree with the per-row path within MC noise.
        let det = det_net(17);
        let v = VariationalState::from_deterministic(&det, 0.1, 2).unwrap();
        let xs = vec![vec![0.3, -0.4, 0.8], vec![-0.2, 0.5, 0.1]];
        let batch = predict_mc_batch(&v, &xs, 600, &mut stream(8)).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let single = predict_mc(&v, x, 600, &mut stream(9)).unwrap();
            assert_relative_eq!(batch[i].mean, single.mean, epsilon = 0.05);
            assert_relative_eq!(batch[i].total_std, single.total_std, max_relative = 0.25);
        }
    }

    #[test]
    fn zero_posterior_spread_collapses_epistemic_uncertainty() {
        // With tiny posterior stds every draw is the mean network, so the
        // epistemic term vanishes while the aleatoric head survives.
        let det = det_net(33);
        let v = VariationalState::from_deterministic(&det, 1e-12, 0).unwrap();
        let s = predict_mc(&v, &[0.1, 0.2, 0.3], 32, &mut stream(1)).unwrap();
        assert!(s.epistemic_std < 1e-9);
        assert!(s.aleatoric_std > 0.0);
    }
}
