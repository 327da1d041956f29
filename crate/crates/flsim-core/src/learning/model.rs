//! Forward pass, analytic gradients, SGD training, and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{payload_bits, Hyperparams, ModelDims, ModelKind, ModelParams, ModelUpdate, QuantBits};
use crate::dataset::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamLabel};
use crate::scalar::Scalar;

/// Server-side model initialization.
///
/// Logistic starts at exactly zero (deterministic convex start); mlp1 weights
/// are Glorot-uniform draws `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`
/// per layer, biases zero.
pub fn init_model<S: Scalar>(kind: ModelKind, dims: ModelDims, seed: u64) -> ModelParams<S> {
    let n = dims.param_count(kind);
    let values = match kind {
        ModelKind::Logistic => vec![S::zero(); n],
        ModelKind::Mlp1 => {
            let (d, c, h) = (dims.feature_dim, dims.num_classes, dims.hidden_dim);
            let mut values = Vec::with_capacity(n);
            let layer = |fan_in: usize, fan_out: usize, layer_idx: u64, count: usize| {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream(seed, StreamLabel::Init, layer_idx, 0);
                (0..count)
                    .map(|_| S::from_f64_lossy((rng.gen::<f64>() * 2.0 - 1.0) * a))
                    .collect::<Vec<S>>()
            };
            values.extend(layer(d, h, 0, h * d));
            values.extend(vec![S::zero(); h]);
            values.extend(layer(h, c, 1, c * h));
            values.extend(vec![S::zero(); c]);
            values
        }
    };
    ModelParams { kind, dims, values }
}

/// Numerically stable softmax (max subtraction), in place over logits.
fn softmax_in_place<S: Scalar>(logits: &mut [S]) {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

struct Forward<S> {
    /// Class probabilities after softmax.
    probs: Vec<S>,
    /// Hidden activations (mlp1 only).
    hidden: Vec<S>,
}

fn forward<S: Scalar>(params: &ModelParams<S>, row: &[S]) -> Forward<S> {
    let ModelDims { feature_dim: d, num_classes: c, hidden_dim: h } = params.dims;
    let v = &params.values;
    match params.kind {
        ModelKind::Logistic => {
            let mut logits = vec![S::zero(); c];
            for class in 0..c {
                let w = &v[class * d..(class + 1) * d];
                let mut acc = v[c * d + class]; // bias
                for (wj, xj) in w.iter().zip(row) {
                    acc += *wj * *xj;
                }
                logits[class] = acc;
            }
            softmax_in_place(&mut logits);
            Forward { probs: logits, hidden: Vec::new() }
        }
        ModelKind::Mlp1 => {
            let (w1, rest) = v.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut hidden = vec![S::zero(); h];
            for unit in 0..h {
                let w = &w1[unit * d..(unit + 1) * d];
                let mut acc = b1[unit];
                for (wj, xj) in w.iter().zip(row) {
                    acc += *wj * *xj;
                }
                hidden[unit] = acc.tanh();
            }
            let mut logits = vec![S::zero(); c];
            for class in 0..c {
                let w = &w2[class * h..(class + 1) * h];
                let mut acc = b2[class];
                for (wh, zh) in w.iter().zip(&hidden) {
                    acc += *wh * *zh;
                }
                logits[class] = acc;
            }
            softmax_in_place(&mut logits);
            Forward { probs: logits, hidden }
        }
    }
}

/// Cross-entropy loss of one sample given its softmax output.
fn sample_loss<S: Scalar>(probs: &[S], label: u32) -> S {
    let p = probs[label as usize];
    let min_pos = S::from_f64_lossy(f64::MIN_POSITIVE);
    // clamp away from zero so underflow stays finite; NaN must pass through
    let clamped = if p < min_pos { min_pos } else { p };
    -clamped.ln()
}

/// Mean cross-entropy loss and its exact analytic gradient over a batch.
pub fn loss_and_gradient<S: Scalar>(
    params: &ModelParams<S>,
    dataset: &LabeledDataset<S>,
    batch: &[usize],
) -> (S, Vec<S>) {
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let ModelDims { feature_dim: d, num_classes: c, hidden_dim: h } = params.dims;
    let inv_batch = S::one() / S::from_usize(batch.len()).unwrap();
    let mut grad = vec![S::zero(); params.len()];
    let mut loss = S::zero();

    for &i in batch {
        let row = dataset.row(i);
        let label = dataset.label(i);
        let fwd = forward(params, row);
        loss += sample_loss(&fwd.probs, label) * inv_batch;

        // d(loss)/d(logit_k) = (p_k - 1{k == label}) / |batch|
        let mut dlogits = fwd.probs;
        dlogits[label as usize] -= S::one();
        for dl in dlogits.iter_mut() {
            *dl *= inv_batch;
        }

        match params.kind {
            ModelKind::Logistic => {
                for class in 0..c {
                    let gw = &mut grad[class * d..(class + 1) * d];
                    for (g, xj) in gw.iter_mut().zip(row) {
                        *g += dlogits[class] * *xj;
                    }
                }
                for class in 0..c {
                    grad[c * d + class] += dlogits[class];
                }
            }
            ModelKind::Mlp1 => {
                let w2_off = h * d + h;
                let (w2, _) = params.values[w2_off..].split_at(c * h);
                // output layer
                for class in 0..c {
                    let gw2 = &mut grad[w2_off + class * h..w2_off + (class + 1) * h];
                    for (g, zh) in gw2.iter_mut().zip(&fwd.hidden) {
                        *g += dlogits[class] * *zh;
                    }
                }
                for class in 0..c {
                    grad[w2_off + c * h + class] += dlogits[class];
                }
                // backprop through tanh
                for unit in 0..h {
                    let mut dz = S::zero();
                    for class in 0..c {
                        dz += dlogits[class] * w2[class * h + unit];
                    }
                    let da = dz * (S::one() - fwd.hidden[unit] * fwd.hidden[unit]);
                    let gw1 = &mut grad[unit * d..(unit + 1) * d];
                    for (g, xj) in gw1.iter_mut().zip(row) {
                        *g += da * *xj;
                    }
                    grad[h * d + unit] += da;
                }
            }
        }
    }
    (loss, grad)
}

/// Exact analytic gradient over a batch (testing surface).
pub fn gradient<S: Scalar>(
    params: &ModelParams<S>,
    dataset: &LabeledDataset<S>,
    batch: &[usize],
) -> Vec<S> {
    loss_and_gradient(params, dataset, batch).1
}

/// Mini-batch SGD on softmax cross-entropy over one client shard.
///
/// Batch order reshuffles every epoch from the seeded stream; the last
/// incomplete batch is kept. The reported loss is the sample-mean loss over
/// the final epoch, measured before each step.
pub fn local_train<S: Scalar>(
    params: &ModelParams<S>,
    shard: &ClientShard,
    dataset: &LabeledDataset<S>,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<ModelUpdate<S>> {
    hyper.validate()?;
    if shard.is_empty() {
        return Err(Error::Consistency(format!("client {} has an empty shard", shard.client_id)));
    }
    let lr = S::from_f64_lossy(hyper.learning_rate);
    let mut current = params.clone();
    let mut order = shard.sample_indices.clone();
    let mut last_epoch_loss_sum = 0.0f64;

    for epoch in 0..hyper.local_epochs {
        let mut rng = stream(seed, StreamLabel::BatchShuffle, epoch as u64, 0);
        order.shuffle(&mut rng);
        let last_epoch = epoch + 1 == hyper.local_epochs;
        for (batch_idx, batch) in order.chunks(hyper.batch_size).enumerate() {
            let (loss, grad) = loss_and_gradient(&current, dataset, batch);
            let loss_f64 = loss.to_f64().unwrap_or(f64::NAN);
            if !loss_f64.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_idx });
            }
            if last_epoch {
                last_epoch_loss_sum += loss_f64 * batch.len() as f64;
            }
            for (p, g) in current.values.iter_mut().zip(&grad) {
                *p -= lr * *g;
            }
        }
    }

    let n = shard.len();
    Ok(ModelUpdate {
        client_id: shard.client_id,
        num_samples: n,
        train_loss: last_epoch_loss_sum / n as f64,
        payload_bits: payload_bits(current.len(), QuantBits::B32),
        quant_bits: QuantBits::B32,
        new_params: current,
    })
}

/// Argmax accuracy (ties to the lowest class id) and mean cross-entropy.
pub fn evaluate<S: Scalar>(params: &ModelParams<S>, test_set: &LabeledDataset<S>) -> (f64, f64) {
    assert_eq!(params.dims.feature_dim, test_set.feature_dim(), "feature dim mismatch");
    assert_eq!(params.dims.num_classes, test_set.num_classes(), "class count mismatch");
    let n = test_set.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    for i in 0..n {
        let fwd = forward(params, test_set.row(i));
        let mut best = 0usize;
        for (class, p) in fwd.probs.iter().enumerate() {
            if *p > fwd.probs[best] {
                best = class;
            }
        }
        if best == test_set.label(i) as usize {
            correct += 1;
        }
        loss_sum += sample_loss(&fwd.probs, test_set.label(i)).to_f64().unwrap_or(f64::INFINITY);
    }
    (correct as f64 / n as f64, loss_sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> LabeledDataset<f64> {
        // 16 linearly separable samples in 2-D: class = sign of x0 + x1
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..16 {
            let x0 = (i % 4) as f64 - 1.5;
            let x1 = (i / 4) as f64 - 1.5;
            features.extend_from_slice(&[x0, x1]);
            labels.push(u32::from(x0 + x1 > 0.0));
        }
        LabeledDataset::new(features, labels, 2, 2).unwrap()
    }

    fn logistic_dims(d: usize, c: usize) -> ModelDims {
        ModelDims { feature_dim: d, num_classes: c, hidden_dim: 0 }
    }

    #[test]
    fn logistic_init_is_zero() {
        let p: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(784, 10), 1);
        assert_eq!(p.len(), 7850);
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_init_is_deterministic_and_bounded() {
        let dims = ModelDims { feature_dim: 20, num_classes: 4, hidden_dim: 16 };
        let a: ModelParams<f64> = init_model(ModelKind::Mlp1, dims, 9);
        let b: ModelParams<f64> = init_model(ModelKind::Mlp1, dims, 9);
        assert_eq!(a, b);
        let c: ModelParams<f64> = init_model(ModelKind::Mlp1, dims, 10);
        assert_ne!(a, c);

        let a1 = (6.0 / (20 + 16) as f64).sqrt();
        let a2 = (6.0 / (16 + 4) as f64).sqrt();
        let (w1, rest) = a.values.split_at(16 * 20);
        let (b1, rest) = rest.split_at(16);
        let (w2, b2) = rest.split_at(4 * 16);
        assert!(w1.iter().all(|&v| v.abs() <= a1));
        assert!(w2.iter().all(|&v| v.abs() <= a2));
        assert!(b1.iter().chain(b2).all(|&v| v == 0.0));
        // draws actually vary
        assert!(w1.iter().any(|&v| v != w1[0]));
    }

    #[test]
    fn gradient_at_zero_params_has_closed_form() {
        // At zero logistic params every class gets probability 1/C, so the
        // bias gradient of the true class is (1/C - 1) / |batch|.
        let ds = toy_dataset();
        let c = 2usize;
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, c), 0);
        let batch = [0usize];
        let grad = gradient(&params, &ds, &batch);
        let label = ds.label(0) as usize;
        let bias_grad = grad[c * 2 + label];
        assert!((bias_grad - (1.0 / c as f64 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_gradient_is_unchanged() {
        let ds = toy_dataset();
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, 2), 0);
        let batch: Vec<usize> = vec![0, 3, 7];
        let doubled: Vec<usize> = batch.iter().chain(&batch).copied().collect();
        let g1 = gradient(&params, &ds, &batch);
        let g2 = gradient(&params, &ds, &doubled);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn shard_of(ds: &LabeledDataset<f64>) -> ClientShard {
        let indices: Vec<usize> = (0..ds.len()).collect();
        let mut hist = vec![0usize; ds.num_classes()];
        for &i in &indices {
            hist[ds.label(i) as usize] += 1;
        }
        ClientShard { client_id: 0, sample_indices: indices, class_histogram: hist }
    }

    #[test]
    fn zero_learning_rate_is_a_null_step() {
        let ds = toy_dataset();
        let shard = shard_of(&ds);
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, 2), 0);
        let hyper = Hyperparams { learning_rate: 0.0, batch_size: 4, local_epochs: 2 };
        let update = local_train(&params, &shard, &ds, &hyper, 5).unwrap();
        assert_eq!(update.new_params.values, params.values);
        let (_, init_loss) = evaluate(&params, &ds);
        assert!((update.train_loss - init_loss).abs() < 1e-12);
    }

    #[test]
    fn one_epoch_large_batch_is_one_step() {
        let ds = toy_dataset();
        let shard = shard_of(&ds);
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, 2), 0);
        let hyper = Hyperparams { learning_rate: 0.5, batch_size: 100, local_epochs: 1 };
        let update = local_train(&params, &shard, &ds, &hyper, 5).unwrap();

        let batch: Vec<usize> = shard.sample_indices.clone();
        let (_, grad) = loss_and_gradient(&params, &ds, &batch);
        for ((new, old), g) in update.new_params.values.iter().zip(&params.values).zip(&grad) {
            assert!((new - (old - 0.5 * g)).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_toy_set_reaches_full_train_accuracy() {
        let ds = toy_dataset();
        let shard = shard_of(&ds);
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, 2), 0);
        let hyper = Hyperparams { learning_rate: 0.5, batch_size: 4, local_epochs: 50 };
        let update = local_train(&params, &shard, &ds, &hyper, 7).unwrap();
        let (acc, _) = evaluate(&update.new_params, &ds);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let ds = toy_dataset();
        let shard = shard_of(&ds);
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, 2), 0);
        let hyper = Hyperparams { learning_rate: 0.1, batch_size: 3, local_epochs: 3 };
        let a = local_train(&params, &shard, &ds, &hyper, 11).unwrap();
        let b = local_train(&params, &shard, &ds, &hyper, 11).unwrap();
        assert_eq!(a, b);
        let c = local_train(&params, &shard, &ds, &hyper, 12).unwrap();
        assert_ne!(a.new_params.values, c.new_params.values);
    }

    #[test]
    fn evaluate_zero_params_predicts_class_zero() {
        let ds = toy_dataset();
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, 2), 0);
        let class0_freq =
            ds.labels().iter().filter(|&&l| l == 0).count() as f64 / ds.len() as f64;
        let (acc, loss) = evaluate(&params, &ds);
        assert_eq!(acc, class0_freq);
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_perfect_logits() {
        // a logistic model with a huge margin on a single feature
        let ds = LabeledDataset::new(vec![1.0, -1.0], vec![1, 0], 2, 1).unwrap();
        let params = ModelParams::<f64> {
            kind: ModelKind::Logistic,
            dims: logistic_dims(1, 2),
            values: vec![-50.0, 50.0, 0.0, 0.0],
        };
        let (acc, loss) = evaluate(&params, &ds);
        assert_eq!(acc, 1.0);
        assert!(loss < 1e-12);
    }

    #[test]
    fn divergence_is_reported_with_location() {
        // one huge-feature sample: the first step pushes the weights to
        // ±5e307, the next forward pass overflows the logits to inf - inf
        let ds = LabeledDataset::new(vec![1e308, 1e308], vec![0], 2, 2).unwrap();
        let shard = ClientShard {
            client_id: 0,
            sample_indices: vec![0],
            class_histogram: vec![1, 0],
        };
        let params: ModelParams<f64> = init_model(ModelKind::Logistic, logistic_dims(2, 2), 0);
        let hyper = Hyperparams { learning_rate: 1.0, batch_size: 1, local_epochs: 2 };
        match local_train(&params, &shard, &ds, &hyper, 1) {
            Err(Error::Divergence { epoch: 1, batch: 0 }) => {}
            other => panic!("expected divergence at epoch 1, got {other:?}"),
        }
    }
}
