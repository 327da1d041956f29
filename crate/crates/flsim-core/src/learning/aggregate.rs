//! Update filtering and sample-weighted federated averaging.

use super::{ModelParams, ModelUpdate};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn delta_norm<S: Scalar>(update: &ModelUpdate<S>, global: &ModelParams<S>) -> f64 {
    update
        .new_params
        .values
        .iter()
        .zip(&global.values)
        .map(|(n, g)| {
            let d = (*n - *g).to_f64().expect("finite parameters");
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Discards updates whose parameter delta-norm exceeds
/// `multiplier * median(delta norms)`.
///
/// Never leaves fewer than two updates (or fewer than the input count, when
/// smaller): if the threshold would, the two smallest-norm updates are kept
/// instead. Both outputs preserve input order.
pub fn filter_updates<S: Scalar>(
    updates: Vec<ModelUpdate<S>>,
    global: &ModelParams<S>,
    multiplier: f64,
) -> (Vec<ModelUpdate<S>>, Vec<ModelUpdate<S>>) {
    assert!(multiplier > 0.0, "filter multiplier must be positive");
    let n = updates.len();
    if n <= 1 {
        return (updates, Vec::new());
    }
    let norms: Vec<f64> = updates.iter().map(|u| delta_norm(u, global)).collect();
    let mut sorted = norms.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = multiplier * median(&sorted);

    let keep_mask: Vec<bool> = if norms.iter().filter(|&&d| d <= threshold).count() >= 2 {
        norms.iter().map(|&d| d <= threshold).collect()
    } else {
        // floor rule: keep the two smallest-norm updates (ties by position)
        let mut by_norm: Vec<usize> = (0..n).collect();
        by_norm.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
        let mut mask = vec![false; n];
        for &i in by_norm.iter().take(2) {
            mask[i] = true;
        }
        mask
    };

    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (update, keep) in updates.into_iter().zip(keep_mask) {
        if keep {
            kept.push(update);
        } else {
            discarded.push(update);
        }
    }
    (kept, discarded)
}

/// Sample-count-weighted coordinate-wise mean of the updates' parameters.
pub fn fedavg<S: Scalar>(updates: &[ModelUpdate<S>]) -> Result<ModelParams<S>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Aggregation("no updates to aggregate".into()))?;
    let len = first.new_params.len();
    for u in updates {
        if u.new_params.len() != len {
            return Err(Error::Aggregation(format!(
                "update from client {} has {} values, expected {len}",
                u.client_id,
                u.new_params.len()
            )));
        }
    }
    let total: usize = updates.iter().map(|u| u.num_samples).sum();
    if total == 0 {
        return Err(Error::Aggregation("total sample count is zero".into()));
    }
    let total_s = S::from_usize(total).unwrap();
    let mut values = vec![S::zero(); len];
    for u in updates {
        let w = S::from_usize(u.num_samples).unwrap() / total_s;
        for (acc, v) in values.iter_mut().zip(&u.new_params.values) {
            *acc += w * *v;
        }
    }
    Ok(ModelParams { kind: first.new_params.kind, dims: first.new_params.dims, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{payload_bits, ModelDims, ModelKind, QuantBits};

    fn scalar_update(client_id: u32, value: f64, num_samples: usize) -> ModelUpdate<f64> {
        let dims = ModelDims { feature_dim: 1, num_classes: 1, hidden_dim: 0 };
        ModelUpdate {
            client_id,
            new_params: ModelParams { kind: ModelKind::Logistic, dims, values: vec![value, 0.0] },
            num_samples,
            train_loss: 0.0,
            payload_bits: payload_bits(2, QuantBits::B32),
            quant_bits: QuantBits::B32,
        }
    }

    fn zero_global() -> ModelParams<f64> {
        ModelParams {
            kind: ModelKind::Logistic,
            dims: ModelDims { feature_dim: 1, num_classes: 1, hidden_dim: 0 },
            values: vec![0.0, 0.0],
        }
    }

    #[test]
    fn identical_updates_all_kept() {
        let updates: Vec<_> = (0..4).map(|c| scalar_update(c, 2.0, 10)).collect();
        let (kept, discarded) = filter_updates(updates, &zero_global(), 3.0);
        assert_eq!(kept.len(), 4);
        assert!(discarded.is_empty());
    }

    #[test]
    fn outlier_is_discarded() {
        let mut updates: Vec<_> = (0..3).map(|c| scalar_update(c, 1.0, 10)).collect();
        updates.push(scalar_update(3, 100.0, 10));
        let (kept, discarded) = filter_updates(updates, &zero_global(), 3.0);
        assert_eq!(kept.len(), 3);
        assert_eq!(discarded.len(), 1);
        assert_eq!(discarded[0].client_id, 3);
    }

    #[test]
    fn single_update_always_kept() {
        let (kept, discarded) = filter_updates(vec![scalar_update(0, 1e9, 1)], &zero_global(), 3.0);
        assert_eq!(kept.len(), 1);
        assert!(discarded.is_empty());
    }

    #[test]
    fn floor_rule_keeps_two_smallest() {
        // tiny multiplier would discard everything; floor keeps the 2 smallest
        let updates: Vec<_> =
            [(0u32, 5.0), (1, 1.0), (2, 3.0), (3, 2.0)].map(|(c, v)| scalar_update(c, v, 1)).into();
        let (kept, discarded) = filter_updates(updates, &zero_global(), 1e-9);
        let kept_ids: Vec<u32> = kept.iter().map(|u| u.client_id).collect();
        assert_eq!(kept_ids, vec![1, 3]);
        assert_eq!(discarded.len(), 2);
    }

    #[test]
    fn fedavg_single_update_is_identity() {
        let u = scalar_update(0, 4.0, 7);
        let avg = fedavg(std::slice::from_ref(&u)).unwrap();
        assert_eq!(avg.values, u.new_params.values);
    }

    #[test]
    fn fedavg_weighted_mean() {
        let avg = fedavg(&[scalar_update(0, 0.0, 1), scalar_update(1, 4.0, 3)]).unwrap();
        assert_eq!(avg.values[0], 3.0);
    }

    #[test]
    fn fedavg_errors() {
        assert!(matches!(fedavg::<f64>(&[]), Err(Error::Aggregation(_))));
        let zero_weight = [scalar_update(0, 1.0, 0)];
        assert!(matches!(fedavg(&zero_weight), Err(Error::Aggregation(_))));
    }
}
