//! Small fully-connected network with relu hidden layers, a linear
//! output, mean-squared-error loss, and Adam updates, written directly
//! against the scalar trait so f32 and f64 models share one code path.
//!
//! Features are scaled to [0, 1] using externally supplied ranges and
//! labels are z-scored from the training split; the loss lives in that
//! normalized label space so the risk coordinate and the policy
//! coordinates weigh comparably.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{fl, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel<T> {
    pub layer_dims: Vec<usize>,
    /// Row-major `dims[q+1] x dims[q]` matrix per layer.
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub feature_min: Vec<T>,
    pub feature_max: Vec<T>,
    pub label_mean: Vec<T>,
    pub label_std: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub params: AdamParams,
    pub step: u64,
    m_weights: Vec<Vec<T>>,
    v_weights: Vec<Vec<T>>,
    m_biases: Vec<Vec<T>>,
    v_biases: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory<T> {
    pub train_loss: Vec<T>,
    pub val_loss: Vec<T>,
    pub val_hit_rate: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamParams,
}

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("bad layer dimensions: {0}")]
    BadDims(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("bad training config: {0}")]
    BadConfig(String),
}

/// Fresh network: relu layers use zero-mean Gaussians with variance
/// 2/fan_in, the output layer a uniform fan-average range, biases zero.
/// Normalization starts at identity until training fills it in.
pub fn init_model<T: Scalar>(layer_dims: &[usize], seed: u64) -> Result<MlpModel<T>, MlpError> {
    if layer_dims.len() < 2 {
        return Err(MlpError::BadDims("need at least input and output dims".into()));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(MlpError::BadDims("layer dims must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_dims.len() - 1;
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for q in 0..layers {
        let (fan_in, fan_out) = (layer_dims[q], layer_dims[q + 1]);
        let count = fan_in * fan_out;
        let w: Vec<T> = if q + 1 < layers {
            let scale = (2.0 / fan_in as f64).sqrt();
            (0..count)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    fl::<T>(g * scale)
                })
                .collect()
        } else {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..count)
                .map(|_| fl::<T>(limit * (2.0 * rng.random::<f64>() - 1.0)))
                .collect()
        };
        weights.push(w);
        biases.push(vec![T::zero(); fan_out]);
    }
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        hidden_activation: "relu".into(),
        output_activation: "linear".into(),
        feature_min: vec![T::zero(); layer_dims[0]],
        feature_max: vec![T::one(); layer_dims[0]],
        label_mean: vec![T::zero(); layer_dims[layers]],
        label_std: vec![T::one(); layer_dims[layers]],
    })
}

impl<T: Scalar> MlpModel<T> {
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn normalize_features(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.feature_min.iter().zip(&self.feature_max))
            .map(|(&v, (&lo, &hi))| {
                let width = if hi > lo { hi - lo } else { T::one() };
                (v - lo) / width
            })
            .collect()
    }

    fn normalize_label(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(self.label_mean.iter().zip(&self.label_std))
            .map(|(&v, (&mu, &sd))| (v - mu) / sd)
            .collect()
    }

    fn denormalize_label(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(self.label_mean.iter().zip(&self.label_std))
            .map(|(&v, (&mu, &sd))| v * sd + mu)
            .collect()
    }

    fn forward_normalized(&self, x: &[T]) -> Vec<Vec<T>> {
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(x.to_vec());
        for q in 0..layers {
            let (rows, cols) = (self.layer_dims[q + 1], self.layer_dims[q]);
            let prev = &activations[q];
            let mut out = Vec::with_capacity(rows);
            for r in 0..rows {
                let mut z = self.biases[q][r];
                let row = &self.weights[q][r * cols..(r + 1) * cols];
                for (w, a) in row.iter().zip(prev) {
                    z = z + *w * *a;
                }
                if q + 1 < layers && z < T::zero() {
                    z = T::zero();
                }
                out.push(z);
            }
            activations.push(out);
        }
        activations
    }

    /// Runs the network on raw features; the result stays in normalized
    /// label space.
    pub fn forward(&self, features: &[T]) -> Result<Vec<T>, MlpError> {
        if features.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        let x = self.normalize_features(features);
        Ok(self.forward_normalized(&x).pop().unwrap())
    }

    /// Forward pass plus label de-normalization: the prediction in the
    /// units the dataset stores.
    pub fn predict(&self, features: &[T]) -> Result<Vec<T>, MlpError> {
        Ok(self.denormalize_label(&self.forward(features)?))
    }
}

/// Mean squared error over the batch and output coordinates, in
/// normalized label space, together with its gradient for every weight
/// and bias. Samples are accumulated in batch order.
pub fn compute_gradients<T: Scalar>(
    model: &MlpModel<T>,
    features: &[Vec<T>],
    labels: &[Vec<T>],
) -> Result<(T, Gradients<T>), MlpError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(MlpError::EmptyBatch);
    }
    for x in features {
        if x.len() != model.input_dim() {
            return Err(MlpError::DimensionMismatch {
                expected: model.input_dim(),
                got: x.len(),
            });
        }
    }
    for y in labels {
        if y.len() != model.output_dim() {
            return Err(MlpError::DimensionMismatch {
                expected: model.output_dim(),
                got: y.len(),
            });
        }
    }
    let xs: Vec<Vec<T>> = features.iter().map(|x| model.normalize_features(x)).collect();
    let ys: Vec<Vec<T>> = labels.iter().map(|y| model.normalize_label(y)).collect();
    let idx: Vec<usize> = (0..xs.len()).collect();
    Ok(gradients_normalized(model, &xs, &ys, &idx))
}

fn gradients_normalized<T: Scalar>(
    model: &MlpModel<T>,
    xs: &[Vec<T>],
    ys: &[Vec<T>],
    batch: &[usize],
) -> (T, Gradients<T>) {
    let layers = model.weights.len();
    let mut grads = Gradients {
        weights: model.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
        biases: model.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
    };
    let denom = fl::<T>((batch.len() * model.output_dim()) as f64);
    let mut loss = T::zero();
    for &k in batch {
        let activations = model.forward_normalized(&xs[k]);
        let output = &activations[layers];
        let mut delta: Vec<T> = output
            .iter()
            .zip(&ys[k])
            .map(|(&o, &y)| {
                let e = o - y;
                loss = loss + e * e;
                (e + e) / denom
            })
            .collect();
        for q in (0..layers).rev() {
            let (rows, cols) = (model.layer_dims[q + 1], model.layer_dims[q]);
            let prev = &activations[q];
            for r in 0..rows {
                let d = delta[r];
                if d == T::zero() {
                    continue;
                }
                let row = &mut grads.weights[q][r * cols..(r + 1) * cols];
                for (g, a) in row.iter_mut().zip(prev) {
                    *g = *g + d * *a;
                }
                grads.biases[q][r] = grads.biases[q][r] + d;
            }
            if q == 0 {
                break;
            }
            let mut next = vec![T::zero(); cols];
            for r in 0..rows {
                let d = delta[r];
                if d == T::zero() {
                    continue;
                }
                let row = &model.weights[q][r * cols..(r + 1) * cols];
                for (n, w) in next.iter_mut().zip(row) {
                    *n = *n + *w * d;
                }
            }
            // relu pass-through: zero where the forward activation was
            // clamped (and, by convention, exactly at 0).
            for (n, &a) in next.iter_mut().zip(&activations[q]) {
                if a <= T::zero() {
                    *n = T::zero();
                }
            }
            delta = next;
        }
    }
    (loss / denom, grads)
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &MlpModel<T>, params: AdamParams) -> Self {
        AdamState {
            params,
            step: 0,
            m_weights: model.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            v_weights: model.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            m_biases: model.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
            v_biases: model.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    model: &mut MlpModel<T>,
    grads: &Gradients<T>,
) {
    state.step += 1;
    let p = state.params;
    let (b1, b2) = (fl::<T>(p.beta1), fl::<T>(p.beta2));
    let lr = fl::<T>(p.learning_rate);
    let eps = fl::<T>(p.epsilon);
    let one = T::one();
    let c1 = one - fl::<T>(p.beta1.powi(state.step as i32));
    let c2 = one - fl::<T>(p.beta2.powi(state.step as i32));
    let update = |param: &mut [T], m: &mut [T], v: &mut [T], g: &[T]| {
        for k in 0..param.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            param[k] = param[k] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for q in 0..model.weights.len() {
        update(
            &mut model.weights[q],
            &mut state.m_weights[q],
            &mut state.v_weights[q],
            &grads.weights[q],
        );
        update(
            &mut model.biases[q],
            &mut state.m_biases[q],
            &mut state.v_biases[q],
            &grads.biases[q],
        );
    }
}

fn fisher_yates<R: Rng + ?Sized>(rng: &mut R, items: &mut [usize]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Trains a fresh network on (features, labels) rows.
///
/// The validation split and the per-epoch shuffles are drawn from fixed
/// substreams of `cfg.seed`, label statistics come from the training
/// split only, and `feature_ranges` supplies the input scaling. `hit`
/// judges a de-normalized prediction against the true label; its
/// fraction over the validation split is recorded per epoch.
pub fn train<T: Scalar>(
    features: &[Vec<T>],
    labels: &[Vec<T>],
    feature_ranges: &[(f64, f64)],
    cfg: &TrainConfig,
    hit: &dyn Fn(&[T], &[T]) -> bool,
) -> Result<(MlpModel<T>, TrainHistory<T>), MlpError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(MlpError::BadConfig("need matching, nonempty features and labels".into()));
    }
    if cfg.batch_size == 0 {
        return Err(MlpError::BadConfig("batch_size must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(MlpError::BadConfig("val_fraction must lie in [0, 1)".into()));
    }
    let in_dim = features[0].len();
    let out_dim = labels[0].len();
    if feature_ranges.len() != in_dim {
        return Err(MlpError::DimensionMismatch {
            expected: in_dim,
            got: feature_ranges.len(),
        });
    }
    let mut dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
    dims.push(in_dim);
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(out_dim);
    let mut model = init_model::<T>(&dims, cfg.seed)?;
    model.feature_min = feature_ranges.iter().map(|&(lo, _)| fl(lo)).collect();
    model.feature_max = feature_ranges.iter().map(|&(_, hi)| fl(hi)).collect();

    let n = features.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    fisher_yates(&mut rng, &mut order);
    let val_count = (n as f64 * cfg.val_fraction).round() as usize;
    let train_count = n - val_count;
    if train_count == 0 || val_count == 0 {
        return Err(MlpError::BadConfig(format!(
            "split leaves {train_count} training and {val_count} validation rows"
        )));
    }
    let train_idx = &order[..train_count];
    let val_idx = &order[train_count..];

    for c in 0..out_dim {
        let mut mean = T::zero();
        for &k in train_idx {
            mean = mean + labels[k][c];
        }
        mean = mean / fl(train_count as f64);
        let mut var = T::zero();
        for &k in train_idx {
            let d = labels[k][c] - mean;
            var = var + d * d;
        }
        var = var / fl(train_count as f64);
        let sd = var.sqrt();
        model.label_mean[c] = mean;
        model.label_std[c] = if sd > T::zero() { sd } else { T::one() };
    }

    let xs: Vec<Vec<T>> = features.iter().map(|x| model.normalize_features(x)).collect();
    let ys: Vec<Vec<T>> = labels.iter().map(|y| model.normalize_label(y)).collect();

    let mut state = AdamState::new(&model, cfg.adam);
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        val_hit_rate: Vec::with_capacity(cfg.epochs),
    };
    let mut epoch_order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2 + epoch as u64);
        epoch_order.copy_from_slice(train_idx);
        fisher_yates(&mut rng, &mut epoch_order);

        let mut weighted = T::zero();
        for batch in epoch_order.chunks(cfg.batch_size) {
            let (loss, grads) = gradients_normalized(&model, &xs, &ys, batch);
            weighted = weighted + loss * fl(batch.len() as f64);
            adam_step(&mut state, &mut model, &grads);
        }
        history.train_loss.push(weighted / fl(train_count as f64));

        let (val_loss, _) = gradients_normalized(&model, &xs, &ys, val_idx);
        history.val_loss.push(val_loss);
        let mut hits = 0usize;
        for &k in val_idx {
            let prediction = model.denormalize_label(model.forward_normalized(&xs[k]).last().unwrap());
            if hit(&prediction, &labels[k]) {
                hits += 1;
            }
        }
        history.val_hit_rate.push(fl::<T>(hits as f64) / fl(val_count as f64));
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_ranges(dim: usize) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); dim]
    }

    #[test]
    fn init_matches_hand_counted_parameters() {
        let model = init_model::<f64>(&[17, 12, 8, 7], 0).unwrap();
        assert_eq!(model.parameter_count(), 17 * 12 + 12 + 12 * 8 + 8 + 8 * 7 + 7);
        assert_eq!(model.parameter_count(), 383);
        assert!(model.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
        let again = init_model::<f64>(&[17, 12, 8, 7], 0).unwrap();
        assert_eq!(model, again);
        let other = init_model::<f64>(&[17, 12, 8, 7], 1).unwrap();
        assert_ne!(model, other);
        assert!(init_model::<f64>(&[5], 0).is_err());
        assert!(init_model::<f64>(&[5, 0, 2], 0).is_err());
    }

    #[test]
    fn forward_matches_straight_line_arithmetic() {
        let mut model = init_model::<f64>(&[2, 3, 2], 7).unwrap();
        model.biases[0] = vec![0.1, -0.2, 0.3];
        model.biases[1] = vec![-0.05, 0.15];
        let x = [0.4, -1.2];
        let mut hidden = [0.0f64; 3];
        for r in 0..3 {
            let z = model.weights[0][2 * r] * x[0] + model.weights[0][2 * r + 1] * x[1]
                + model.biases[0][r];
            hidden[r] = z.max(0.0);
        }
        let mut want = [0.0f64; 2];
        for r in 0..2 {
            want[r] = model.weights[1][3 * r] * hidden[0]
                + model.weights[1][3 * r + 1] * hidden[1]
                + model.weights[1][3 * r + 2] * hidden[2]
                + model.biases[1][r];
        }
        let got = model.forward(&x).unwrap();
        assert!((got[0] - want[0]).abs() < 1e-12);
        assert!((got[1] - want[1]).abs() < 1e-12);
        assert!(model.forward(&[1.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero_and_identity_layer_passes_through() {
        let mut model = init_model::<f64>(&[3, 2], 1).unwrap();
        for w in &mut model.weights {
            w.iter_mut().for_each(|x| *x = 0.0);
        }
        assert_eq!(model.forward(&[0.3, -2.0, 5.0]).unwrap(), vec![0.0, 0.0]);

        let mut id = init_model::<f64>(&[2, 2], 1).unwrap();
        id.weights[0] = vec![1.0, 0.0, 0.0, 1.0];
        id.biases[0] = vec![0.0, 0.0];
        id.feature_min = vec![1.0, 1.0];
        id.feature_max = vec![3.0, 3.0];
        let out = id.forward(&[2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.5, 1.0]);
    }

    #[test]
    fn single_unit_gradient_matches_hand_differentiation() {
        let mut model = init_model::<f64>(&[1, 1], 0).unwrap();
        model.weights[0] = vec![0.7];
        model.biases[0] = vec![-0.3];
        let (x, t) = (1.8, 0.9);
        let (loss, grads) = compute_gradients(&model, &[vec![x]], &[vec![t]]).unwrap();
        let residual = 0.7 * x - 0.3 - t;
        assert!((loss - residual * residual).abs() < 1e-14);
        assert!((grads.weights[0][0] - 2.0 * residual * x).abs() < 1e-14);
        assert!((grads.biases[0][0] - 2.0 * residual).abs() < 1e-14);
    }

    #[test]
    fn perfect_fit_gives_zero_loss_and_zero_gradients() {
        let mut model = init_model::<f64>(&[2, 1], 3).unwrap();
        model.weights[0] = vec![2.0, -1.0];
        model.biases[0] = vec![0.5];
        let xs = vec![vec![0.2, 0.4], vec![-1.0, 0.0]];
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| vec![2.0 * x[0] - x[1] + 0.5])
            .collect();
        let (loss, grads) = compute_gradients(&model, &xs, &ys).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.weights[0].iter().all(|&g| g == 0.0));
        assert!(grads.biases[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let mut worst = 0.0f64;
        for case in 0..24 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
            let hidden = case as usize % 3;
            let mut dims = vec![2 + case as usize % 3];
            for h in 0..hidden {
                dims.push(2 + (case as usize + h) % 4);
            }
            dims.push(1 + case as usize % 3);
            let mut model = init_model::<f64>(&dims, 77 + case).unwrap();
            for b in &mut model.biases {
                b.iter_mut().for_each(|x| *x = rng.random::<f64>() - 0.5);
            }
            let out_dim = *dims.last().unwrap();
            model.label_mean = (0..out_dim).map(|_| rng.random::<f64>() - 0.5).collect();
            model.label_std = (0..out_dim).map(|_| 0.5 + rng.random::<f64>()).collect();
            let batch = 1 + case as usize % 5;
            let xs: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..dims[0]).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
                .collect();
            let ys: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..out_dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
                .collect();
            let (_, grads) = compute_gradients(&model, &xs, &ys).unwrap();
            let h = 1e-5;
            for q in 0..model.weights.len() {
                for (is_bias, len) in [(false, model.weights[q].len()), (true, model.biases[q].len())] {
                    for k in 0..len {
                        let probe = |v: f64| {
                            let mut m = model.clone();
                            if is_bias {
                                m.biases[q][k] = v;
                            } else {
                                m.weights[q][k] = v;
                            }
                            compute_gradients(&m, &xs, &ys).unwrap().0
                        };
                        let base = if is_bias { model.biases[q][k] } else { model.weights[q][k] };
                        let fd = (probe(base + h) - probe(base - h)) / (2.0 * h);
                        let a = if is_bias { grads.biases[q][k] } else { grads.weights[q][k] };
                        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                        worst = worst.max(rel);
                    }
                }
            }
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn batch_order_does_not_change_loss_or_gradients() {
        let model = init_model::<f64>(&[3, 4, 2], 5).unwrap();
        let xs = vec![
            vec![0.1, 0.9, -0.4],
            vec![0.7, 0.2, 0.3],
            vec![-0.5, 0.5, 0.8],
        ];
        let ys = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 0.5]];
        let (l1, g1) = compute_gradients(&model, &xs, &ys).unwrap();
        let xs_rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let ys_rev: Vec<Vec<f64>> = ys.iter().rev().cloned().collect();
        let (l2, g2) = compute_gradients(&model, &xs_rev, &ys_rev).unwrap();
        assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        for q in 0..g1.weights.len() {
            for (a, b) in g1.weights[q].iter().zip(&g2.weights[q]) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_the_learning_rate() {
        let mut model = init_model::<f64>(&[1, 1], 0).unwrap();
        model.weights[0] = vec![0.25];
        let mut state = AdamState::new(&model, AdamParams::default());
        let grads = Gradients { weights: vec![vec![0.5]], biases: vec![vec![0.0]] };
        adam_step(&mut state, &mut model, &grads);
        assert_eq!(state.step, 1);
        assert!((model.weights[0][0] - (0.25 - 1e-3)).abs() < 1e-6 * 1e-3);
        assert_eq!(model.biases[0][0], 0.0);

        let zero = Gradients { weights: vec![vec![0.0]], biases: vec![vec![0.0]] };
        let before = model.clone();
        let mut fresh = AdamState::new(&model, AdamParams::default());
        adam_step(&mut fresh, &mut model, &zero);
        assert_eq!(fresh.step, 1);
        assert_eq!(model, before);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut model = init_model::<f64>(&[2, 3, 1], 9).unwrap();
            let mut state = AdamState::new(&model, AdamParams::default());
            let xs = vec![vec![0.3, -0.6]];
            let ys = vec![vec![1.2]];
            for _ in 0..10 {
                let (_, grads) = compute_gradients(&model, &xs, &ys).unwrap();
                adam_step(&mut state, &mut model, &grads);
            }
            model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn linear_target_is_learned_to_small_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 512;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| vec![0.4 * x[0] - 0.7 * x[1] + 0.2 * x[2] + 1.5, x[0] + x[1]])
            .collect();
        let cfg = TrainConfig {
            hidden_dims: vec![],
            epochs: 50,
            batch_size: 16,
            val_fraction: 0.2,
            seed: 4,
            adam: AdamParams { learning_rate: 0.01, ..AdamParams::default() },
        };
        let (model, history) = train(&xs, &ys, &unit_ranges(3), &cfg, &|_, _| false).unwrap();
        assert_eq!(history.train_loss.len(), 50);
        assert!(*history.train_loss.last().unwrap() <= 1e-4);
        let pred = model.predict(&xs[0]).unwrap();
        assert!((pred[0] - ys[0][0]).abs() < 0.05);
    }

    #[test]
    fn zero_epochs_returns_the_initialized_model() {
        let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5], vec![0.2, 0.8]];
        let ys = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let cfg = TrainConfig {
            hidden_dims: vec![3],
            epochs: 0,
            batch_size: 2,
            val_fraction: 0.25,
            seed: 8,
            adam: AdamParams::default(),
        };
        let (model, history) = train(&xs, &ys, &unit_ranges(2), &cfg, &|_, _| true).unwrap();
        assert!(history.train_loss.is_empty());
        let mut init = init_model::<f64>(&[2, 3, 1], 8).unwrap();
        init.label_mean = model.label_mean.clone();
        init.label_std = model.label_std.clone();
        assert_eq!(model, init);
    }

    #[test]
    fn training_is_deterministic_and_records_hit_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] + x[1]]).collect();
        let cfg = TrainConfig {
            hidden_dims: vec![4],
            epochs: 5,
            batch_size: 8,
            val_fraction: 0.2,
            seed: 21,
            adam: AdamParams::default(),
        };
        let hit = |pred: &[f64], truth: &[f64]| (pred[0] - truth[0]).abs() < 0.5;
        let (m1, h1) = train(&xs, &ys, &unit_ranges(2), &cfg, &hit).unwrap();
        let (m2, h2) = train(&xs, &ys, &unit_ranges(2), &cfg, &hit).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
        assert_eq!(h1.val_hit_rate.len(), 5);
        assert!(h1.val_hit_rate.iter().all(|&r| (0.0..=1.0).contains(&r)));
    }

    #[test]
    fn degenerate_labels_fall_back_to_unit_scale() {
        let xs = vec![vec![0.0], vec![0.5], vec![1.0], vec![0.25]];
        let ys = vec![vec![2.0], vec![2.0], vec![2.0], vec![2.0]];
        let cfg = TrainConfig {
            hidden_dims: vec![],
            epochs: 1,
            batch_size: 2,
            val_fraction: 0.25,
            seed: 2,
            adam: AdamParams::default(),
        };
        let (model, _) = train(&xs, &ys, &unit_ranges(1), &cfg, &|_, _| false).unwrap();
        assert_eq!(model.label_std, vec![1.0]);
        assert_eq!(model.label_mean, vec![2.0]);
    }

    #[test]
    fn normalization_round_trips() {
        let mut model = init_model::<f64>(&[2, 2], 0).unwrap();
        model.label_mean = vec![3.5, -1.25];
        model.label_std = vec![2.0, 0.5];
        let y = vec![-0.75, 4.0];
        let back = model.denormalize_label(&model.normalize_label(&y));
        assert!((back[0] - y[0]).abs() < 1e-12);
        assert!((back[1] - y[1]).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trips() {
        let model = init_model::<f64>(&[3, 4, 2], 13).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        assert!(text.contains("\"hidden_activation\":\"relu\""));
        assert!(text.contains("\"output_activation\":\"linear\""));
        let back: MlpModel<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        let ys = vec![vec![0.0], vec![1.0]];
        let mut cfg = TrainConfig {
            hidden_dims: vec![],
            epochs: 1,
            batch_size: 0,
            val_fraction: 0.5,
            seed: 0,
            adam: AdamParams::default(),
        };
        assert!(train(&xs, &ys, &unit_ranges(1), &cfg, &|_, _| false).is_err());
        cfg.batch_size = 1;
        cfg.val_fraction = 0.0;
        assert!(train(&xs, &ys, &unit_ranges(1), &cfg, &|_, _| false).is_err());
        cfg.val_fraction = 0.5;
        assert!(train::<f64>(&[], &[], &unit_ranges(1), &cfg, &|_, _| false).is_err());
    }
}
