//! The four client-selection policies.

use rand::Rng;

use super::ClientProfile;
use crate::dataset::histogram_entropy;
use crate::ClientId;

/// Uniform sample of `k` clients without replacement; order is draw order.
pub fn select_random(
    profiles: &[ClientProfile],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<ClientId> {
    let mut pool: Vec<ClientId> = profiles.iter().map(|p| p.client_id).collect();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Top-`k` by descending current SNR (best links first); ties to lower id.
pub fn select_latency(profiles: &[ClientProfile], k: usize) -> Vec<ClientId> {
    let mut order: Vec<&ClientProfile> = profiles.iter().collect();
    order.sort_by(|a, b| {
        b.current_snr_db.total_cmp(&a.current_snr_db).then(a.client_id.cmp(&b.client_id))
    });
    order.into_iter().take(k).map(|p| p.client_id).collect()
}

/// Top-`k` by descending shard size; ties to lower id.
pub fn select_largest_data(profiles: &[ClientProfile], k: usize) -> Vec<ClientId> {
    let mut order: Vec<&ClientProfile> = profiles.iter().collect();
    order.sort_by(|a, b| b.num_samples.cmp(&a.num_samples).then(a.client_id.cmp(&b.client_id)));
    order.into_iter().take(k).map(|p| p.client_id).collect()
}

/// Greedy maximum class coverage.
///
/// A class counts as covered once the chosen set holds at least
/// `coverage_threshold` of its samples. Each step picks the client covering
/// the most still-uncovered classes; ties go to the higher own-histogram
/// entropy, then the larger shard, then the lower id.
pub fn select_class_diversity(
    profiles: &[ClientProfile],
    k: usize,
    coverage_threshold: usize,
) -> Vec<ClientId> {
    let num_classes = profiles.first().map_or(0, |p| p.class_histogram.len());
    let threshold = coverage_threshold.max(1);
    let mut cumulative = vec![0usize; num_classes];
    let mut remaining: Vec<&ClientProfile> = profiles.iter().collect();
    let mut chosen = Vec::new();

    while chosen.len() < k && !remaining.is_empty() {
        let gain = |p: &ClientProfile| -> usize {
            (0..num_classes)
                .filter(|&c| {
                    cumulative[c] < threshold && cumulative[c] + p.class_histogram[c] >= threshold
                })
                .count()
        };
        let best = remaining
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                gain(a)
                    .cmp(&gain(b))
                    .then_with(|| {
                        histogram_entropy(&a.class_histogram)
                            .total_cmp(&histogram_entropy(&b.class_histogram))
                    })
                    .then(a.num_samples.cmp(&b.num_samples))
                    .then(b.client_id.cmp(&a.client_id))
            })
            .map(|(i, _)| i)
            .expect("remaining is non-empty");
        let picked = remaining.remove(best);
        for (c, count) in picked.class_histogram.iter().enumerate() {
            cumulative[c] += count;
        }
        chosen.push(picked.client_id);
    }
    chosen
}
