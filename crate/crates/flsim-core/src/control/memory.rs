//! Append-only memory of round records.

use serde::{Deserialize, Serialize};

use super::{Policy, RoundRecord};
use crate::error::{Error, Result};

/// The system's history: one immutable record per completed round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    records: Vec<RoundRecord>,
}

/// Per-policy aggregate over the stored rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub policy: Policy,
    pub rounds: usize,
    pub mean_test_accuracy: f64,
    pub mean_comm_latency_s: f64,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    /// Appends a finalized record; round indices must be new and increasing.
    pub fn append(&mut self, record: RoundRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.plan.round_idx <= last.plan.round_idx {
                return Err(Error::Consistency(format!(
                    "memory already holds round {} (appending {})",
                    last.plan.round_idx, record.plan.round_idx
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// The most recent `n` records, oldest first.
    pub fn last_n(&self, n: usize) -> &[RoundRecord] {
        let start = self.records.len().saturating_sub(n);
        &self.records[start..]
    }

    /// Record with the highest test accuracy; ties go to the earliest round.
    pub fn best_round(&self) -> Option<&RoundRecord> {
        self.records.iter().reduce(|best, r| {
            if r.metrics.test_accuracy > best.metrics.test_accuracy {
                r
            } else {
                best
            }
        })
    }

    /// Aggregates per policy, in [`Policy::ALL`] order.
    pub fn policy_stats(&self) -> Vec<PolicyStats> {
        Policy::ALL
            .iter()
            .filter_map(|&policy| {
                let rounds: Vec<&RoundRecord> =
                    self.records.iter().filter(|r| r.plan.policy == policy).collect();
                if rounds.is_empty() {
                    return None;
                }
                let n = rounds.len() as f64;
                Some(PolicyStats {
                    policy,
                    rounds: rounds.len(),
                    mean_test_accuracy: rounds.iter().map(|r| r.metrics.test_accuracy).sum::<f64>()
                        / n,
                    mean_comm_latency_s: rounds
                        .iter()
                        .map(|r| r.metrics.round_comm_latency_s)
                        .sum::<f64>()
                        / n,
                })
            })
            .collect()
    }

    /// Newline-delimited JSON, one record per round.
    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut memory = Memory::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            memory.append(serde_json::from_str(line)?)?;
        }
        Ok(memory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{Feedback, RoundMetrics, RoundPlan};
    use crate::learning::{Hyperparams, QuantBits};

    fn record(round_idx: usize, policy: Policy, accuracy: f64) -> RoundRecord {
        RoundRecord {
            plan: RoundPlan {
                round_idx,
                policy,
                selected_clients: vec![0, 1],
                hyper: Hyperparams { learning_rate: 0.1, batch_size: 32, local_epochs: 1 },
                quant_bits: QuantBits::B32,
                k: 2,
            },
            link_reports: vec![],
            survivors: vec![0],
            kept_updates: vec![0],
            discarded_updates: vec![],
            no_update: false,
            metrics: RoundMetrics {
                test_accuracy: accuracy,
                mean_train_loss: 1.0,
                avg_selected_snr_db: 15.0,
                round_comm_latency_s: 0.1 * (round_idx + 1) as f64,
                round_compute_latency_s: 0.2,
                round_payload_bits: 64,
            },
            feedback: Feedback {
                accuracy_delta: 0.0,
                plateau: false,
                latency_over_budget: false,
                notes: vec![],
            },
        }
    }

    #[test]
    fn last_n_returns_most_recent_in_order() {
        let mut memory = Memory::new();
        for round in 0..10 {
            memory.append(record(round, Policy::Random, 0.1 * round as f64)).unwrap();
        }
        let last: Vec<usize> = memory.last_n(3).iter().map(|r| r.plan.round_idx).collect();
        assert_eq!(last, vec![7, 8, 9]);
        assert_eq!(memory.last_n(100).len(), 10);
    }

    #[test]
    fn best_round_ties_go_earliest() {
        let mut memory = Memory::new();
        memory.append(record(0, Policy::Random, 0.5)).unwrap();
        memory.append(record(1, Policy::Random, 0.9)).unwrap();
        memory.append(record(2, Policy::Random, 0.9)).unwrap();
        assert_eq!(memory.best_round().unwrap().plan.round_idx, 1);
    }

    #[test]
    fn duplicate_round_is_rejected() {
        let mut memory = Memory::new();
        memory.append(record(0, Policy::Random, 0.5)).unwrap();
        assert!(matches!(
            memory.append(record(0, Policy::Random, 0.6)),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn ndjson_round_trip() {
        let mut memory = Memory::new();
        for round in 0..4 {
            memory.append(record(round, Policy::ClassDiversity, 0.2 * round as f64)).unwrap();
        }
        let text = memory.to_ndjson().unwrap();
        assert_eq!(text.lines().count(), 4);
        let reloaded = Memory::from_ndjson(&text).unwrap();
        assert_eq!(memory, reloaded);
        assert_eq!(text, reloaded.to_ndjson().unwrap());
    }

    #[test]
    fn policy_stats_aggregate() {
        let mut memory = Memory::new();
        memory.append(record(0, Policy::Random, 0.2)).unwrap();
        memory.append(record(1, Policy::Random, 0.4)).unwrap();
        memory.append(record(2, Policy::Latency, 0.6)).unwrap();
        let stats = memory.policy_stats();
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].policy, Policy::Random);
        assert_eq!(stats[0].rounds, 2);
        assert!((stats[0].mean_test_accuracy - 0.3).abs() < 1e-12);
        assert_eq!(stats[1].policy, Policy::Latency);
    }
}
