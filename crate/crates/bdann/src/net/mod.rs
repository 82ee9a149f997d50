//! Dense feed-forward networks in plain f64 with explicit backprop.
//!
//! Forward and backward passes are split so that computation graphs can be
//! chained across sub-networks: `forward_cached` returns everything the
//! corresponding `backward_from` needs, and `backward_from` returns the
//! gradient with respect to the sub-network's input. That input gradient is
//! what lets a feature extractor sit below several heads, including one
//! reached through a sign-flipping junction.

pub mod activation;
pub mod adam;
pub mod loss;

pub use activation::{sigmoid, softplus, softplus_inverse, Activation};
pub use adam::{adam_update_slice, AdamState, Moments, OptimizerConfig};
pub use loss::{bce, gaussian_nll, loss_and_output_grad, mse, Loss};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::stream;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("matrix with zero rows".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in &rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged matrix rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Architecture of one dense stack: layer sizes, per-layer activations and
/// dropout rates. `layer_sizes` has one more entry than the weight layers.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    dropout: Vec<f64>,
}

impl NetworkSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        dropout: Vec<f64>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "network needs at least input and output sizes".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        let n = layer_sizes.len() - 1;
        if activations.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} activations for {} weight layers",
                activations.len(),
                n
            )));
        }
        if dropout.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} dropout rates for {} weight layers",
                dropout.len(),
                n
            )));
        }
        if dropout.iter().any(|&p| !(0.0..=0.5).contains(&p)) {
            return Err(Error::InvalidConfig(
                "dropout rates must lie in [0, 0.5]".into(),
            ));
        }
        Ok(NetworkSpec {
            layer_sizes,
            activations,
            dropout,
        })
    }

    /// Convenience constructor: hidden layers share one activation and one
    /// dropout rate, the output layer gets `out_act` and no dropout.
    pub fn mlp(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_act: Activation,
        out_act: Activation,
        hidden_dropout: f64,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(in_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(out_dim);
        let n = sizes.len() - 1;
        let mut acts = vec![hidden_act; n];
        acts[n - 1] = out_act;
        let mut drop = vec![hidden_dropout; n];
        drop[n - 1] = 0.0;
        NetworkSpec::new(sizes, acts, drop)
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn dropout(&self) -> &[f64] {
        &self.dropout
    }

    /// Same topology with the output layer widened to `out_dim`.
    pub fn with_out_dim(&self, out_dim: usize) -> Result<Self> {
        let mut sizes = self.layer_sizes.clone();
        *sizes.last_mut().unwrap() = out_dim;
        NetworkSpec::new(sizes, self.activations.clone(), self.dropout.clone())
    }
}

/// Weights and biases matching a `NetworkSpec`. Weight layer l has shape
/// (layer_sizes[l+1], layer_sizes[l]); biases match the output width.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkState {
    spec: NetworkSpec,
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
}

impl NetworkState {
    /// Scaled-uniform fan-in initialization: W ~ U(-L, L) with
    /// L = sqrt(6 / fan_in), biases zero. Deterministic in the seed.
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = stream(seed);
        let mut weights = Vec::with_capacity(spec.n_layers());
        let mut biases = Vec::with_capacity(spec.n_layers());
        for l in 0..spec.n_layers() {
            let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in w.as_mut_slice() {
                *v = rng.random_range(-limit..limit);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        NetworkState {
            spec,
            weights,
            biases,
        }
    }

    pub fn from_parts(spec: NetworkSpec, weights: Vec<Mat>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != spec.n_layers() || biases.len() != spec.n_layers() {
            return Err(Error::Shape(format!(
                "{} weight / {} bias layers for a {}-layer spec",
                weights.len(),
                biases.len(),
                spec.n_layers()
            )));
        }
        for l in 0..spec.n_layers() {
            let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
            if weights[l].rows() != fan_out || weights[l].cols() != fan_in {
                return Err(Error::Shape(format!(
                    "layer {l} weights are {}x{}, expected {fan_out}x{fan_in}",
                    weights[l].rows(),
                    weights[l].cols()
                )));
            }
            if biases[l].len() != fan_out {
                return Err(Error::Shape(format!(
                    "layer {l} biases have {} entries, expected {fan_out}",
                    biases[l].len()
                )));
            }
            if !weights[l].is_finite() || biases[l].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} parameters")));
            }
        }
        Ok(NetworkState {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Mat] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Deterministic inference on one row (dropout off).
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward_batch(std::slice::from_ref(&x.to_vec()), None)?;
        Ok(out.into_iter().next().unwrap())
    }

    /// Deterministic inference on a batch (dropout off).
    pub fn infer_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.forward_batch(xs, None)
    }

    /// Batch forward pass. When `dropout_rng` is `Some`, hidden units are
    /// dropped with their layer's rate and survivors are scaled by
    /// 1/(1-p), so inference needs no rescaling.
    pub fn forward_batch(
        &self,
        xs: &[Vec<f64>],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_cached(xs, dropout_rng)?.output().to_vec())
    }

    /// Forward pass keeping all intermediates needed for backprop.
    pub fn forward_cached(
        &self,
        xs: &[Vec<f64>],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        let n = self.spec.n_layers();
        for (i, row) in xs.iter().enumerate() {
            if row.len() != self.spec.in_dim() {
                return Err(Error::Shape(format!(
                    "input row {i} has {} features, network expects {}",
                    row.len(),
                    self.spec.in_dim()
                )));
            }
        }
        let mut act: Vec<Vec<f64>> = xs.to_vec();
        let mut pre_acts = Vec::with_capacity(n);
        let mut post_acts = Vec::with_capacity(n);
        let mut drop_scales: Vec<Option<Vec<Vec<f64>>>> = Vec::with_capacity(n);
        for l in 0..n {
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut pre = Vec::with_capacity(act.len());
            for row in &act {
                let mut z = b.clone();
                for (r, zr) in z.iter_mut().enumerate() {
                    let wr = w.row(r);
                    let mut acc = 0.0;
                    for (wv, xv) in wr.iter().zip(row) {
                        acc += wv * xv;
                    }
                    *zr += acc;
                }
                pre.push(z);
            }
            let a = self.spec.activations[l];
            let mut post: Vec<Vec<f64>> = pre
                .iter()
                .map(|row| row.iter().map(|&z| a.apply(z)).collect())
                .collect();
            let p = self.spec.dropout[l];
            let scales = if p > 0.0 {
                match dropout_rng.as_deref_mut() {
                    Some(rng) => {
                        let keep = 1.0 - p;
                        let mut sc = Vec::with_capacity(post.len());
                        for row in &mut post {
                            let mut srow = Vec::with_capacity(row.len());
                            for v in row.iter_mut() {
                                let s = if rng.random::<f64>() < p {
                                    0.0
                                } else {
                                    1.0 / keep
                                };
                                *v *= s;
                                srow.push(s);
                            }
                            sc.push(srow);
                        }
                        Some(sc)
                    }
                    None => None,
                }
            } else {
                None
            };
            pre_acts.push(pre);
            post_acts.push(post.clone());
            drop_scales.push(scales);
            act = post;
        }
        Ok(ForwardCache {
            input: xs.to_vec(),
            pre_acts,
            post_acts,
            drop_scales,
        })
    }

    /// Backprop from output-gradient rows dL/d(output). Returns parameter
    /// gradients and dL/d(input) rows, both for the batch as given (the
    /// caller owns any 1/N normalization inside `d_out`).
    pub fn backward_from(&self, cache: &ForwardCache, d_out: &[Vec<f64>]) -> (Gradients, Vec<Vec<f64>>) {
        let n = self.spec.n_layers();
        let batch = cache.input.len();
        assert_eq!(d_out.len(), batch, "gradient rows must match batch rows");
        let mut grads = Gradients::zeros_like(self);
        // Per-row gradient w.r.t. the current layer's post-dropout output.
        let mut d_post: Vec<Vec<f64>> = d_out.to_vec();
        for l in (0..n).rev() {
            let a = self.spec.activations[l];
            let prev: &[Vec<f64>] = if l == 0 {
                &cache.input
            } else {
                &cache.post_acts[l - 1]
            };
            let mut d_prev = vec![vec![0.0; self.spec.layer_sizes[l]]; batch];
            for i in 0..batch {
                let pre = &cache.pre_acts[l][i];
                let mut delta = d_post[i].clone();
                if let Some(sc) = &cache.drop_scales[l] {
                    for (dv, s) in delta.iter_mut().zip(&sc[i]) {
                        *dv *= s;
                    }
                }
                for (dv, &z) in delta.iter_mut().zip(pre) {
                    *dv *= a.grad(z);
                }
                let w = &self.weights[l];
                let gw = &mut grads.d_weights[l];
                let gb = &mut grads.d_biases[l];
                for (r, &dr) in delta.iter().enumerate() {
                    gb[r] += dr;
                    let prow = &prev[i];
                    for (c, &pv) in prow.iter().enumerate() {
                        *gw.at_mut(r, c) += dr * pv;
                    }
                    let wrow = w.row(r);
                    for (c, &wv) in wrow.iter().enumerate() {
                        d_prev[i][c] += dr * wv;
                    }
                }
            }
            d_post = d_prev;
        }
        (grads, d_post)
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<Vec<f64>>>,
    post_acts: Vec<Vec<Vec<f64>>>,
    drop_scales: Vec<Option<Vec<Vec<f64>>>>,
}

impl ForwardCache {
    /// Final layer output rows (after activation; dropout never applies to
    /// the output layer in practice because its rate is zero).
    pub fn output(&self) -> &[Vec<f64>] {
        self.post_acts.last().unwrap()
    }

    pub fn batch_len(&self) -> usize {
        self.input.len()
    }
}

/// Parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Mat>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Gradients {
            d_weights: state
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
            d_biases: state.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            for v in w.as_mut_slice() {
                *v *= s;
            }
        }
        for b in &mut self.d_biases {
            for v in b {
                *v *= s;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(Mat::is_finite)
            && self
                .d_biases
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }
}
