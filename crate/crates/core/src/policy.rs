//! MLP policy: Xavier initialization, forward pass, backpropagation,
//! minibatch training on imitation pairs, and nonlinear closed-loop rollout.
//!
//! The network maps the normalized 14-dim state to a raw body-frame thrust
//! command. Hidden layers are rectified linear, the output layer is linear,
//! and there is no output clamping: constraint satisfaction is the
//! optimizer's job and clamping would bias the imitation target.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::socp::TrajectoryIterate;
use crate::transcription::{propagate_interval, TemporalGrid};
use crate::vehicle::{Control, State, StateVector, VehicleParams, STATE_DIM};

/// Hidden/output layer widths used throughout: three hidden layers of 50.
pub const DEFAULT_DIMS: [usize; 5] = [14, 50, 50, 50, 3];

/// Feed-forward network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    /// One (out x in) matrix per layer.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Mlp {
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass on an already-normalized input.
    pub fn forward_normalized(&self, input: &DVector<f64>) -> DVector<f64> {
        let mut a = input.clone();
        let last = self.layer_count() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * a + b;
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }
}

/// Xavier-uniform initialization: weights in +/- sqrt(6 / (fan_in + fan_out)),
/// biases zero.
pub fn init_xavier(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Mlp> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid_input("layer dims must be >= 2 nonzero entries"));
    }
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound));
        weights.push(w);
        biases.push(DVector::zeros(fan_out));
    }
    Ok(Mlp {
        dims: dims.to_vec(),
        weights,
        biases,
    })
}

/// Per-feature affine input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Identity normalizer.
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Fit mean/std per feature. Features with negligible spread keep unit
    /// scale so near-constant channels are not blown up.
    pub fn fit<'a>(states: impl Iterator<Item = &'a StateVector>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = StateVector::zeros();
        let mut sum_sq = StateVector::zeros();
        for x in states {
            sum += x;
            sum_sq += x.component_mul(x);
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput("normalizer fit needs at least one state".into()));
        }
        let mean = sum / count as f64;
        let mut shift = vec![0.0; STATE_DIM];
        let mut scale = vec![1.0; STATE_DIM];
        for i in 0..STATE_DIM {
            let var = (sum_sq[i] / count as f64 - mean[i] * mean[i]).max(0.0);
            let std = var.sqrt();
            shift[i] = mean[i];
            scale[i] = if std > 1e-6 { std } else { 1.0 };
        }
        Ok(Normalizer { shift, scale })
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift.len() != self.scale.len() {
            return Err(Error::invalid_input("normalizer shift/scale length mismatch"));
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid_input("normalizer scales must be positive"));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &StateVector) -> DVector<f64> {
        DVector::from_fn(self.shift.len(), |i, _| (x[i] - self.shift[i]) / self.scale[i])
    }

    pub fn denormalize(&self, z: &DVector<f64>) -> StateVector {
        StateVector::from_fn(|i, _| z[i] * self.scale[i] + self.shift[i])
    }
}

/// Evaluate the policy: normalize, run the network, return the raw thrust
/// command in model units.
pub fn forward(mlp: &Mlp, normalizer: &Normalizer, x: &StateVector) -> Result<Vector3<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_input("policy input contains non-finite values"));
    }
    let out = mlp.forward_normalized(&normalizer.normalize(x));
    Ok(Vector3::new(out[0], out[1], out[2]))
}

/// Imitation pair: one node of one sampled trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub run: String,
    pub trajectory: usize,
    pub sample: usize,
    pub node: usize,
    pub state: StateVector,
    pub control: Vector3<f64>,
}

/// Training rows; controls are defined only for nodes 0..K-2, which the
/// sample generator guarantees by construction.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PairDataset {
    pub records: Vec<PairRecord>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs per training call.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
        }
    }
}

/// Parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<DVector<f64>>,
}

impl Gradients {
    fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            d_weights: mlp.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            d_biases: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }
}

/// Mean squared 2-norm loss over a batch and its parameter gradients.
///
/// Inputs are already normalized; targets are raw controls.
pub fn loss_and_gradients(
    mlp: &Mlp,
    inputs: &[DVector<f64>],
    targets: &[Vector3<f64>],
) -> (f64, Gradients) {
    assert_eq!(inputs.len(), targets.len());
    let batch = inputs.len();
    let layers = mlp.layer_count();
    let mut grads = Gradients::zeros_like(mlp);
    let mut loss = 0.0;

    for (x, target) in inputs.iter().zip(targets) {
        // Forward pass storing post-activation values per layer.
        let mut activations: Vec<DVector<f64>> = Vec::with_capacity(layers + 1);
        activations.push(x.clone());
        for l in 0..layers {
            let mut z = &mlp.weights[l] * activations.last().unwrap() + &mlp.biases[l];
            if l < layers - 1 {
                z.apply(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        let out = activations.last().unwrap();
        let err = DVector::from_fn(3, |i, _| out[i] - target[i]);
        loss += err.norm_squared();

        // Backward pass: d(loss_sample)/d(out) = 2 err.
        let mut delta = 2.0 * err;
        for l in (0..layers).rev() {
            grads.d_weights[l] += &delta * activations[l].transpose();
            grads.d_biases[l] += &delta;
            if l > 0 {
                let mut prev = mlp.weights[l].transpose() * delta;
                // ReLU derivative from the stored post-activation value.
                for (i, v) in prev.iter_mut().enumerate() {
                    if activations[l][i] <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    let inv = 1.0 / batch as f64;
    for w in &mut grads.d_weights {
        *w *= inv;
    }
    for b in &mut grads.d_biases {
        *b *= inv;
    }
    (loss * inv, grads)
}

/// Adaptive-moment SGD state.
struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    step: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(mlp: &Mlp) -> Self {
        Adam {
            m_w: mlp.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: mlp.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            step: 0,
        }
    }

    fn update(&mut self, mlp: &mut Mlp, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - Self::BETA1.powi(t);
        let corr2 = 1.0 - Self::BETA2.powi(t);
        for l in 0..mlp.layer_count() {
            for (dst, (m, (v, g))) in mlp.weights[l].iter_mut().zip(
                self.m_w[l]
                    .iter_mut()
                    .zip(self.v_w[l].iter_mut().zip(grads.d_weights[l].iter())),
            ) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *dst -= lr * (*m / corr1) / ((*v / corr2).sqrt() + Self::EPS);
            }
            for (dst, (m, (v, g))) in mlp.biases[l].iter_mut().zip(
                self.m_b[l]
                    .iter_mut()
                    .zip(self.v_b[l].iter_mut().zip(grads.d_biases[l].iter())),
            ) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *dst -= lr * (*m / corr1) / ((*v / corr2).sqrt() + Self::EPS);
            }
        }
    }
}

pub(crate) fn batch_ranges(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        out.push(start..end);
        start = end;
    }
    out
}

/// Minibatch training on imitation pairs with an adaptive-moment SGD
/// variant. Deterministic given the config seed. Returns per-epoch mean
/// training loss.
pub fn train_supervised(
    mlp: &mut Mlp,
    normalizer: &Normalizer,
    dataset: &PairDataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty".into()));
    }
    if cfg.batch_size < 1 {
        return Err(Error::invalid_input("batch_size must be >= 1"));
    }
    normalizer.validate()?;

    let inputs: Vec<DVector<f64>> = dataset
        .records
        .iter()
        .map(|r| normalizer.normalize(&r.state))
        .collect();
    let targets: Vec<Vector3<f64>> = dataset.records.iter().map(|r| r.control).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut optimizer = Adam::new(mlp);
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for range in batch_ranges(order.len(), cfg.batch_size) {
            let idx = &order[range];
            let batch_x: Vec<DVector<f64>> = idx.iter().map(|&i| inputs[i].clone()).collect();
            let batch_u: Vec<Vector3<f64>> = idx.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = loss_and_gradients(mlp, &batch_x, &batch_u);
            optimizer.update(mlp, &grads, cfg.learning_rate);
            epoch_loss += loss * idx.len() as f64;
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    Ok(history)
}

/// Mean squared 2-norm imitation objective of a fixed pair set (no update).
pub fn evaluate_loss(mlp: &Mlp, normalizer: &Normalizer, dataset: &PairDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset is empty".into()));
    }
    let mut loss = 0.0;
    for r in &dataset.records {
        let out = mlp.forward_normalized(&normalizer.normalize(&r.state));
        loss += (Vector3::new(out[0], out[1], out[2]) - r.control).norm_squared();
    }
    Ok(loss / dataset.len() as f64)
}

/// Network plus its input normalizer: everything needed to run the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
}

impl Policy {
    pub fn forward(&self, x: &StateVector) -> Result<Vector3<f64>> {
        forward(&self.mlp, &self.normalizer, x)
    }
}

/// Closed-loop ZOH rollout on the nonlinear dynamics: evaluate the policy at
/// each node, hold the command over the interval. Returns an iterate with
/// zero virtual control.
pub fn policy_rollout(
    mlp: &Mlp,
    normalizer: &Normalizer,
    x0: &State,
    grid: &TemporalGrid,
    p: &VehicleParams,
) -> Result<TrajectoryIterate> {
    x0.validate()?;
    let k_count = grid.node_count;
    let mut iterate = TrajectoryIterate::zeroed(k_count);
    let mut state = *x0;
    iterate.states[0] = state.to_vector();
    for k in 0..k_count - 1 {
        let u = forward(mlp, normalizer, &state.to_vector())?;
        state = propagate_interval(&state, &Control { t_b: u }, grid.dt(), p).map_err(|e| {
            match e {
                Error::AbortedPropagation { reason, .. } => {
                    Error::AbortedPropagation { node: k, reason }
                }
                other => other,
            }
        })?;
        iterate.controls[k] = u;
        iterate.states[k + 1] = state.to_vector();
    }
    Ok(iterate)
}

/// Versioned weight-file payload (see the README file-format section).
#[derive(Debug, Serialize, Deserialize)]
pub struct PolicyFile {
    pub version: u32,
    pub dims: Vec<usize>,
    pub normalizer: Normalizer,
    pub layers: Vec<LayerFile>,
}

/// Row-major weight matrix (each row is one output neuron) plus biases.
#[derive(Debug, Serialize, Deserialize)]
pub struct LayerFile {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

pub const POLICY_FILE_VERSION: u32 = 1;

impl Policy {
    pub fn to_file(&self) -> PolicyFile {
        let layers = self
            .mlp
            .weights
            .iter()
            .zip(&self.mlp.biases)
            .map(|(w, b)| LayerFile {
                weights: (0..w.nrows())
                    .map(|i| w.row(i).iter().copied().collect())
                    .collect(),
                biases: b.iter().copied().collect(),
            })
            .collect();
        PolicyFile {
            version: POLICY_FILE_VERSION,
            dims: self.mlp.dims.clone(),
            normalizer: self.normalizer.clone(),
            layers,
        }
    }

    pub fn from_file(file: &PolicyFile) -> Result<Self> {
        if file.version != POLICY_FILE_VERSION {
            return Err(Error::load(
                None,
                format!("weight file version {} (expected {POLICY_FILE_VERSION})", file.version),
            ));
        }
        if file.layers.len() + 1 != file.dims.len() {
            return Err(Error::load(None, "layer count does not match dims"));
        }
        let mut weights = Vec::with_capacity(file.layers.len());
        let mut biases = Vec::with_capacity(file.layers.len());
        for (l, layer) in file.layers.iter().enumerate() {
            let (rows, cols) = (file.dims[l + 1], file.dims[l]);
            if layer.weights.len() != rows
                || layer.weights.iter().any(|r| r.len() != cols)
                || layer.biases.len() != rows
            {
                return Err(Error::load(None, format!("layer {l} shape mismatch")));
            }
            weights.push(DMatrix::from_fn(rows, cols, |i, j| layer.weights[i][j]));
            biases.push(DVector::from_column_slice(&layer.biases));
        }
        let normalizer = file.normalizer.clone();
        normalizer.validate()?;
        Ok(Policy {
            mlp: Mlp {
                dims: file.dims.clone(),
                weights,
                biases,
            },
            normalizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcription::make_grid;
    use nalgebra::{Vector3, Vector4};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn xavier_parameter_count_and_zero_biases() {
        let mlp = init_xavier(&DEFAULT_DIMS, &mut rng(0)).unwrap();
        assert_eq!(mlp.parameter_count(), 6003);
        for b in &mlp.biases {
            assert!(b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn xavier_first_layer_variance() {
        // Uniform(-a, a) with a^2 = 6/(14+50) has variance a^2/3.
        let expected = 6.0 / 64.0 / 3.0;
        let mut values = Vec::new();
        for seed in 0..20 {
            let mlp = init_xavier(&DEFAULT_DIMS, &mut rng(seed)).unwrap();
            values.extend(mlp.weights[0].iter().copied());
        }
        assert!(values.len() >= 10_000);
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        assert!(
            (var - expected).abs() / expected < 0.1,
            "variance {var} vs expected {expected}"
        );
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut mlp = init_xavier(&DEFAULT_DIMS, &mut rng(1)).unwrap();
        for w in &mut mlp.weights {
            w.fill(0.0);
        }
        let norm = Normalizer::identity(14);
        let x = StateVector::from_fn(|i, _| i as f64);
        let out = forward(&mlp, &norm, &x).unwrap();
        assert_eq!(out, Vector3::zeros());
    }

    #[test]
    fn hand_network_single_unit() {
        // dims [1,1,1], all weights 1, biases 0: relu(x) then identity.
        let mlp = Mlp {
            dims: vec![1, 1, 1],
            weights: vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 1.0),
            ],
            biases: vec![DVector::zeros(1), DVector::zeros(1)],
        };
        let out = mlp.forward_normalized(&DVector::from_element(1, 2.0));
        assert_eq!(out[0], 2.0);
        let out = mlp.forward_normalized(&DVector::from_element(1, -2.0));
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let mlp = init_xavier(&DEFAULT_DIMS, &mut rng(2)).unwrap();
        let norm = Normalizer::identity(14);
        let mut x = StateVector::zeros();
        x[3] = f64::NAN;
        assert!(forward(&mlp, &norm, &x).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut mlp = init_xavier(&[14, 8, 8, 3], &mut rng(3)).unwrap();
        let mut r = rng(4);
        let inputs: Vec<DVector<f64>> = (0..3)
            .map(|_| DVector::from_fn(14, |_, _| r.gen_range(-1.0..1.0)))
            .collect();
        let targets: Vec<Vector3<f64>> = (0..3)
            .map(|_| Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
            .collect();
        let (_, grads) = loss_and_gradients(&mlp, &inputs, &targets);

        let eps = 1e-6;
        for _ in 0..10 {
            let layer = r.gen_range(0..mlp.layer_count());
            let i = r.gen_range(0..mlp.weights[layer].nrows());
            let j = r.gen_range(0..mlp.weights[layer].ncols());
            let orig = mlp.weights[layer][(i, j)];
            mlp.weights[layer][(i, j)] = orig + eps;
            let (lp, _) = loss_and_gradients(&mlp, &inputs, &targets);
            mlp.weights[layer][(i, j)] = orig - eps;
            let (lm, _) = loss_and_gradients(&mlp, &inputs, &targets);
            mlp.weights[layer][(i, j)] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let analytic = grads.d_weights[layer][(i, j)];
            let scale = analytic.abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic - fd).abs() / scale < 1e-5,
                "layer {layer} ({i},{j}): {analytic} vs {fd}"
            );
        }
    }

    fn single_pair_dataset() -> PairDataset {
        let mut state = StateVector::zeros();
        state[0] = 2.0;
        state[7] = 1.0;
        PairDataset {
            records: vec![PairRecord {
                run: "test".into(),
                trajectory: 0,
                sample: 0,
                node: 0,
                state,
                control: Vector3::new(0.5, -0.25, 2.0),
            }],
        }
    }

    #[test]
    fn memorizes_single_pair() {
        let mut mlp = init_xavier(&DEFAULT_DIMS, &mut rng(5)).unwrap();
        let norm = Normalizer::identity(14);
        let cfg = TrainConfig {
            batch_size: 1,
            learning_rate: 1e-3,
            epochs: 500,
            seed: 1,
        };
        let history = train_supervised(&mut mlp, &norm, &single_pair_dataset(), &cfg).unwrap();
        assert!(history.last().unwrap() <= &1e-4, "final loss {}", history.last().unwrap());
    }

    #[test]
    fn loss_decreases_on_linear_synthetic_data() {
        let mut r = rng(6);
        let mut records = Vec::new();
        for t in 0..400 {
            let state = StateVector::from_fn(|_, _| r.gen_range(-1.0..1.0));
            // Linear target with a fixed random-ish map.
            let control = Vector3::new(
                0.3 * state[0] - 0.1 * state[4],
                0.2 * state[1] + 0.05 * state[7],
                1.0 + 0.5 * state[2],
            );
            records.push(PairRecord {
                run: "syn".into(),
                trajectory: t,
                sample: 0,
                node: 0,
                state,
                control,
            });
        }
        let dataset = PairDataset { records };
        let mut mlp = init_xavier(&[14, 16, 16, 3], &mut rng(7)).unwrap();
        let cfg = TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 40,
            seed: 2,
        };
        let history =
            train_supervised(&mut mlp, &Normalizer::identity(14), &dataset, &cfg).unwrap();
        let window = |h: &[f64], a: usize| h[a..a + 5].iter().sum::<f64>() / 5.0;
        for start in (0..history.len() - 5).step_by(5) {
            if start + 10 <= history.len() {
                assert!(
                    window(&history, start + 5) <= window(&history, start) * 1.05,
                    "smoothed loss increased at epoch {start}"
                );
            }
        }
        assert!(history.last().unwrap() < &history[0]);
    }

    #[test]
    fn batching_keeps_partial_batches() {
        let ranges = batch_ranges(1000, 512);
        assert_eq!(ranges.len(), 2);
        assert_eq!(ranges[1], 512..1000);
        assert_eq!(batch_ranges(512, 512).len(), 1);
        assert_eq!(batch_ranges(513, 512).len(), 2);
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = single_pair_dataset();
        let cfg = TrainConfig {
            batch_size: 1,
            learning_rate: 1e-3,
            epochs: 10,
            seed: 3,
        };
        let norm = Normalizer::identity(14);
        let mut a = init_xavier(&DEFAULT_DIMS, &mut rng(8)).unwrap();
        let mut b = a.clone();
        let ha = train_supervised(&mut a, &norm, &dataset, &cfg).unwrap();
        let hb = train_supervised(&mut b, &norm, &dataset, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut mlp = init_xavier(&DEFAULT_DIMS, &mut rng(9)).unwrap();
        let err = train_supervised(
            &mut mlp,
            &Normalizer::identity(14),
            &PairDataset::default(),
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn normalizer_roundtrip_identity() {
        let mut r = rng(10);
        let states: Vec<StateVector> =
            (0..50).map(|_| StateVector::from_fn(|_, _| r.gen_range(-2.0..2.0))).collect();
        let norm = Normalizer::fit(states.iter()).unwrap();
        norm.validate().unwrap();
        for x in &states {
            let back = norm.denormalize(&norm.normalize(x));
            assert!((back - x).amax() < 1e-12);
        }
    }

    #[test]
    fn normalizer_keeps_constant_channels_sane() {
        let states: Vec<StateVector> = (0..10)
            .map(|i| {
                let mut x = StateVector::zeros();
                x[0] = 2.0; // constant channel
                x[1] = i as f64;
                x
            })
            .collect();
        let norm = Normalizer::fit(states.iter()).unwrap();
        assert_eq!(norm.scale[0], 1.0);
        assert!(norm.scale[1] > 1.0);
    }

    #[test]
    fn zero_policy_rollout_is_ballistic() {
        let p = VehicleParams::default();
        let grid = make_grid(11, 1.0).unwrap();
        let mut mlp = init_xavier(&DEFAULT_DIMS, &mut rng(11)).unwrap();
        for w in &mut mlp.weights {
            w.fill(0.0);
        }
        let x0 = State {
            m: 2.0,
            r_i: Vector3::new(0.0, 0.0, 3.0),
            v_i: Vector3::zeros(),
            q_bi: Vector4::new(1.0, 0.0, 0.0, 0.0),
            omega_b: Vector3::zeros(),
        };
        let traj = policy_rollout(&mlp, &Normalizer::identity(14), &x0, &grid, &p).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert_eq!(traj.controls.len(), 10);
        for (k, x) in traj.states.iter().enumerate() {
            let t = grid.nodes[k];
            assert!((x[3] - (3.0 - 0.5 * t * t)).abs() < 1e-6, "node {k}");
        }
        assert!(traj.virtual_controls.iter().all(|nu| nu.amax() == 0.0));
    }

    #[test]
    fn weight_file_roundtrip_bit_exact_forward() {
        let mlp = init_xavier(&DEFAULT_DIMS, &mut rng(12)).unwrap();
        let mut r = rng(13);
        let states: Vec<StateVector> =
            (0..20).map(|_| StateVector::from_fn(|_, _| r.gen_range(-1.5..1.5))).collect();
        let normalizer = Normalizer::fit(states.iter()).unwrap();
        let policy = Policy { mlp, normalizer };
        let json = serde_json::to_string(&policy.to_file()).unwrap();
        let parsed: PolicyFile = serde_json::from_str(&json).unwrap();
        let restored = Policy::from_file(&parsed).unwrap();
        for x in states.iter().take(10) {
            let a = policy.forward(x).unwrap();
            let b = restored.forward(x).unwrap();
            assert_eq!(a, b, "forward pass must be bit-identical after roundtrip");
        }
    }

    #[test]
    fn weight_file_rejects_bad_version_and_shape() {
        let mlp = init_xavier(&[14, 4, 3], &mut rng(14)).unwrap();
        let policy = Policy {
            mlp,
            normalizer: Normalizer::identity(14),
        };
        let mut file = policy.to_file();
        file.version = 99;
        assert!(Policy::from_file(&file).is_err());
        let mut file = policy.to_file();
        file.layers[0].weights[0].pop();
        assert!(Policy::from_file(&file).is_err());
    }
}
