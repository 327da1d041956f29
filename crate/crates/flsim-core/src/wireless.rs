//! The bandwidth-constrained cell: per-round SNR draws, Shannon-rate links,
//! TDMA channel assignment, phase latencies, and client dropout.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, uniform_in, StreamLabel};
use crate::scalar::Scalar;
use crate::ClientId;

/// Static parameters of the wireless cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirelessConfig {
    pub bandwidth_hz_per_channel: f64,
    pub num_channels: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub dropout_prob: f64,
    pub header_bits: u64,
    pub seed: u64,
}

impl WirelessConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated form rejects NaN
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz_per_channel > 0.0) {
            return Err(Error::ConfigRange {
                field: "bandwidth_hz_per_channel".into(),
                message: "must be > 0".into(),
            });
        }
        if self.num_channels == 0 {
            return Err(Error::ConfigRange {
                field: "num_channels".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.snr_db_min > self.snr_db_max {
            return Err(Error::ConfigRange {
                field: "snr_db_min".into(),
                message: format!("{} exceeds snr_db_max {}", self.snr_db_min, self.snr_db_max),
            });
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::ConfigRange {
                field: "dropout_prob".into(),
                message: format!("must be in [0, 1], got {}", self.dropout_prob),
            });
        }
        Ok(())
    }
}

/// TDMA slot queues: one ordered client queue per channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelAssignment {
    pub queues: Vec<Vec<ClientId>>,
}

impl ChannelAssignment {
    pub fn num_channels(&self) -> usize {
        self.queues.len()
    }

    /// All placed clients, channel by channel.
    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.queues.iter().flatten().copied()
    }

    /// Channel index of a client, if placed.
    pub fn channel_of(&self, client: ClientId) -> Option<usize> {
        self.queues.iter().position(|q| q.contains(&client))
    }
}

/// Per-client link telemetry for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub client_id: ClientId,
    pub snr_db: f64,
    pub rate_bps: f64,
    pub uplink_latency_s: f64,
    pub downlink_latency_s: f64,
    pub dropped: bool,
}

/// Per-round i.i.d. uniform SNR draws on `[snr_db_min, snr_db_max]`, keyed by
/// `(seed, round, client)` so they are identical across selection policies.
pub fn sample_snr(
    client_ids: &[ClientId],
    cfg: &WirelessConfig,
    round_idx: usize,
) -> BTreeMap<ClientId, f64> {
    client_ids
        .iter()
        .map(|&c| {
            let mut rng = stream(cfg.seed, StreamLabel::Snr, round_idx as u64, u64::from(c));
            (c, uniform_in(&mut rng, cfg.snr_db_min, cfg.snr_db_max))
        })
        .collect()
}

/// Shannon capacity: `bandwidth * log2(1 + 10^(snr_db / 10))`.
pub fn achievable_rate<S: Scalar>(bandwidth_hz: S, snr_db: S) -> S {
    let ten = S::from_f64_lossy(10.0);
    let snr_linear = ten.powf(snr_db / ten);
    bandwidth_hz * (S::one() + snr_linear).log2()
}

/// Transfer time of `payload_bits + header_bits` at `rate_bps`.
pub fn transfer_latency<S: Scalar>(payload_bits: u64, rate_bps: S, header_bits: u64) -> Result<S> {
    if rate_bps <= S::zero() {
        return Err(Error::Domain(format!("transfer rate must be positive, got {rate_bps}")));
    }
    let total = S::from_u64(payload_bits + header_bits).expect("bit count fits Scalar");
    Ok(total / rate_bps)
}

/// Longest-processing-time-first assignment of clients to channel queues.
///
/// Clients are sorted by descending estimated uplink latency (ties by client
/// id) and each is placed on the channel with the smallest queue-latency sum
/// (ties to the lowest channel index).
pub fn assign_channels(
    selected: &[ClientId],
    uplink_latency_estimate: &BTreeMap<ClientId, f64>,
    num_channels: usize,
) -> Result<ChannelAssignment> {
    if selected.is_empty() {
        return Err(Error::Consistency("cannot assign channels to an empty selection".into()));
    }
    if num_channels == 0 {
        return Err(Error::ConfigRange {
            field: "num_channels".into(),
            message: "must be >= 1".into(),
        });
    }
    let mut order: Vec<ClientId> = selected.to_vec();
    for &c in &order {
        if !uplink_latency_estimate.contains_key(&c) {
            return Err(Error::Consistency(format!("no latency estimate for client {c}")));
        }
    }
    order.sort_by(|&a, &b| {
        let la = uplink_latency_estimate[&a];
        let lb = uplink_latency_estimate[&b];
        lb.total_cmp(&la).then(a.cmp(&b))
    });

    let mut queues = vec![Vec::new(); num_channels];
    let mut sums = vec![0.0f64; num_channels];
    for c in order {
        let target = (0..num_channels)
            .min_by(|&i, &j| sums[i].total_cmp(&sums[j]).then(i.cmp(&j)))
            .expect("num_channels >= 1");
        queues[target].push(c);
        sums[target] += uplink_latency_estimate[&c];
    }
    Ok(ChannelAssignment { queues })
}

/// Total communication latency of a round.
///
/// The downlink phase runs first (server unicasts to every selected client in
/// parallel; latency is the slowest client). The uplink phase then runs the
/// TDMA queues; each channel transmits its queue sequentially and the phase
/// ends when the longest channel finishes. Dropped clients never transmit.
pub fn round_comm_latency(
    assignment: &ChannelAssignment,
    link_reports: &BTreeMap<ClientId, LinkReport>,
) -> Result<f64> {
    let mut downlink_max = 0.0f64;
    let mut uplink_max = 0.0f64;
    for queue in &assignment.queues {
        let mut queue_sum = 0.0f64;
        for &client in queue {
            let report = link_reports.get(&client).ok_or_else(|| {
                Error::Consistency(format!("queued client {client} has no link report"))
            })?;
            downlink_max = downlink_max.max(report.downlink_latency_s);
            if !report.dropped {
                queue_sum += report.uplink_latency_s;
            }
        }
        uplink_max = uplink_max.max(queue_sum);
    }
    Ok(downlink_max + uplink_max)
}

/// Independent Bernoulli dropout per selected client, keyed by
/// `(seed, round, client)`; survivors keep their original order.
pub fn apply_dropout(
    selected: &[ClientId],
    cfg: &WirelessConfig,
    round_idx: usize,
) -> Vec<ClientId> {
    selected
        .iter()
        .copied()
        .filter(|&c| !dropout_draw(cfg.seed, round_idx, c, cfg.dropout_prob))
        .collect()
}

/// The raw dropout decision for one `(round, client)` pair.
pub fn dropout_draw(seed: u64, round_idx: usize, client: ClientId, dropout_prob: f64) -> bool {
    let mut rng = stream(seed, StreamLabel::Dropout, round_idx as u64, u64::from(client));
    rng.gen::<f64>() < dropout_prob
}
