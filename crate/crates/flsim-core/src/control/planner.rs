//! The rule-based round planner and the threshold evaluator.

use serde::{Deserialize, Serialize};

use super::select::{select_class_diversity, select_largest_data, select_latency, select_random};
use super::{Feedback, Memory, Policy, RoundDraft, RoundPlan, RoundRecord, TelemetrySnapshot};
use crate::learning::{Hyperparams, QuantBits};
use crate::rng::{stream, StreamLabel};

/// A planning agent: consumes telemetry, history, and evaluator feedback,
/// produces the next round's plan. Implementations must be deterministic in
/// their inputs.
pub trait Planner {
    fn plan(
        &mut self,
        telemetry: &TelemetrySnapshot,
        memory: &Memory,
        prev_feedback: Option<&Feedback>,
    ) -> RoundPlan;
}

/// Knobs of the built-in rule planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub policy: Policy,
    pub hyper: Hyperparams,
    pub quant_bits: QuantBits,
    pub local_epochs_cap: usize,
    /// Selection size; `None` means one client per channel.
    pub k_override: Option<usize>,
    pub coverage_threshold: usize,
    pub master_seed: u64,
}

/// Deterministic rule-based planner.
///
/// Hyperparameters start at the configured defaults and adapt on feedback:
/// a plateau bumps `local_epochs` (up to the cap), a blown latency budget
/// steps the quantization down one notch. Adaptations persist across rounds.
#[derive(Debug, Clone)]
pub struct RulePlanner {
    cfg: PlannerConfig,
    hyper: Hyperparams,
    quant_bits: QuantBits,
}

impl RulePlanner {
    pub fn new(cfg: PlannerConfig) -> Self {
        Self { hyper: cfg.hyper.clone(), quant_bits: cfg.quant_bits, cfg }
    }
}

impl Planner for RulePlanner {
    fn plan(
        &mut self,
        telemetry: &TelemetrySnapshot,
        _memory: &Memory,
        prev_feedback: Option<&Feedback>,
    ) -> RoundPlan {
        if let Some(feedback) = prev_feedback {
            if feedback.plateau && self.hyper.local_epochs < self.cfg.local_epochs_cap {
                self.hyper.local_epochs += 1;
            }
            if feedback.latency_over_budget {
                self.quant_bits = self.quant_bits.lower();
            }
        }

        let n = telemetry.profiles.len();
        let k = self.cfg.k_override.unwrap_or(telemetry.num_channels).min(n);
        let selected = match self.cfg.policy {
            Policy::Random => {
                let mut rng = stream(
                    self.cfg.master_seed,
                    StreamLabel::Selection,
                    telemetry.round_idx as u64,
                    0,
                );
                select_random(&telemetry.profiles, k, &mut rng)
            }
            Policy::Latency => select_latency(&telemetry.profiles, k),
            Policy::LargestData => select_largest_data(&telemetry.profiles, k),
            Policy::ClassDiversity => {
                select_class_diversity(&telemetry.profiles, k, self.cfg.coverage_threshold)
            }
        };
        debug_assert_eq!(selected.len(), k.min(n));

        RoundPlan {
            round_idx: telemetry.round_idx,
            policy: self.cfg.policy,
            selected_clients: selected,
            hyper: self.hyper.clone(),
            quant_bits: self.quant_bits,
            k,
        }
    }
}

/// Turns round metrics into feedback flags against fixed thresholds.
///
/// `plateau` fires after `patience` consecutive rounds whose accuracy gain
/// stays below `plateau_epsilon`; `latency_over_budget` compares the round's
/// communication latency to the budget.
#[derive(Debug, Clone)]
pub struct ThresholdEvaluator {
    plateau_epsilon: f64,
    patience: usize,
    latency_budget_s: f64,
    prev_accuracy: f64,
    consecutive_small_delta: usize,
}

impl ThresholdEvaluator {
    pub fn new(
        plateau_epsilon: f64,
        patience: usize,
        latency_budget_s: f64,
        initial_accuracy: f64,
    ) -> Self {
        Self {
            plateau_epsilon,
            patience,
            latency_budget_s,
            prev_accuracy: initial_accuracy,
            consecutive_small_delta: 0,
        }
    }

    /// Finalizes a draft into an immutable record plus feedback.
    pub fn evaluate_round(&mut self, draft: RoundDraft) -> (RoundRecord, Feedback) {
        let accuracy_delta = draft.metrics.test_accuracy - self.prev_accuracy;
        self.prev_accuracy = draft.metrics.test_accuracy;

        if accuracy_delta < self.plateau_epsilon {
            self.consecutive_small_delta += 1;
        } else {
            self.consecutive_small_delta = 0;
        }
        let plateau = self.consecutive_small_delta >= self.patience;
        let latency_over_budget = draft.metrics.round_comm_latency_s > self.latency_budget_s;

        let mut notes = Vec::new();
        if plateau {
            notes.push("plateau".to_string());
        }
        if latency_over_budget {
            notes.push("latency_over_budget".to_string());
        }
        if draft.no_update {
            notes.push("no_update".to_string());
        }
        if !draft.discarded_updates.is_empty() {
            notes.push(format!("discarded:{}", draft.discarded_updates.len()));
        }

        let feedback = Feedback { accuracy_delta, plateau, latency_over_budget, notes };
        let record = RoundRecord {
            plan: draft.plan,
            link_reports: draft.link_reports,
            survivors: draft.survivors,
            kept_updates: draft.kept_updates,
            discarded_updates: draft.discarded_updates,
            no_update: draft.no_update,
            metrics: draft.metrics,
            feedback: feedback.clone(),
        };
        (record, feedback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ClientProfile, RoundMetrics};

    fn telemetry(round_idx: usize, n: usize, num_channels: usize) -> TelemetrySnapshot {
        let profiles = (0..n)
            .map(|i| ClientProfile {
                client_id: i as u32,
                num_samples: 100 + i,
                class_histogram: vec![50, 50 + i],
                compute_speed: 1000.0,
                current_snr_db: 10.0 + i as f64,
                cumulative_participation: 0,
                cumulative_reward: 0.0,
            })
            .collect();
        TelemetrySnapshot {
            round_idx,
            profiles,
            num_channels,
            bandwidth_hz: 5e6,
            global_accuracy_so_far: 0.1,
        }
    }

    fn planner_cfg(policy: Policy) -> PlannerConfig {
        PlannerConfig {
            policy,
            hyper: Hyperparams { learning_rate: 0.1, batch_size: 32, local_epochs: 2 },
            quant_bits: QuantBits::B32,
            local_epochs_cap: 5,
            k_override: None,
            coverage_threshold: 1,
            master_seed: 42,
        }
    }

    fn metrics(test_accuracy: f64, comm_latency: f64) -> RoundMetrics {
        RoundMetrics {
            test_accuracy,
            mean_train_loss: 1.0,
            avg_selected_snr_db: 15.0,
            round_comm_latency_s: comm_latency,
            round_compute_latency_s: 0.5,
            round_payload_bits: 1000,
        }
    }

    fn draft(round_idx: usize, m: RoundMetrics) -> RoundDraft {
        RoundDraft {
            plan: RoundPlan {
                round_idx,
                policy: Policy::Random,
                selected_clients: vec![0],
                hyper: Hyperparams { learning_rate: 0.1, batch_size: 32, local_epochs: 2 },
                quant_bits: QuantBits::B32,
                k: 1,
            },
            link_reports: vec![],
            survivors: vec![0],
            kept_updates: vec![0],
            discarded_updates: vec![],
            no_update: false,
            metrics: m,
        }
    }

    #[test]
    fn first_plan_uses_config_defaults() {
        let mut planner = RulePlanner::new(planner_cfg(Policy::Latency));
        let plan = planner.plan(&telemetry(0, 15, 5), &Memory::new(), None);
        assert_eq!(plan.hyper.local_epochs, 2);
        assert_eq!(plan.quant_bits, QuantBits::B32);
        assert_eq!(plan.k, 5);
        assert_eq!(plan.selected_clients.len(), 5);
    }

    #[test]
    fn k_defaults_to_num_channels_and_caps_at_n() {
        let mut planner = RulePlanner::new(planner_cfg(Policy::LargestData));
        let plan = planner.plan(&telemetry(0, 3, 5), &Memory::new(), None);
        assert_eq!(plan.k, 3);
        assert_eq!(plan.selected_clients.len(), 3);
    }

    #[test]
    fn plateau_bumps_epochs_up_to_cap() {
        let mut planner = RulePlanner::new(planner_cfg(Policy::Random));
        let plateau = Feedback {
            accuracy_delta: 0.0,
            plateau: true,
            latency_over_budget: false,
            notes: vec![],
        };
        for round in 1..10 {
            let plan = planner.plan(&telemetry(round, 15, 5), &Memory::new(), Some(&plateau));
            assert_eq!(plan.hyper.local_epochs, (2 + round).min(5));
        }
    }

    #[test]
    fn latency_feedback_steps_quantization_down() {
        let mut planner = RulePlanner::new(planner_cfg(Policy::Random));
        let over = Feedback {
            accuracy_delta: 0.1,
            plateau: false,
            latency_over_budget: true,
            notes: vec![],
        };
        let p1 = planner.plan(&telemetry(1, 15, 5), &Memory::new(), Some(&over));
        assert_eq!(p1.quant_bits, QuantBits::B16);
        let p2 = planner.plan(&telemetry(2, 15, 5), &Memory::new(), Some(&over));
        assert_eq!(p2.quant_bits, QuantBits::B8);
        let p3 = planner.plan(&telemetry(3, 15, 5), &Memory::new(), Some(&over));
        assert_eq!(p3.quant_bits, QuantBits::B8);
        // persists without further flags
        let calm = Feedback {
            accuracy_delta: 0.1,
            plateau: false,
            latency_over_budget: false,
            notes: vec![],
        };
        let p4 = planner.plan(&telemetry(4, 15, 5), &Memory::new(), Some(&calm));
        assert_eq!(p4.quant_bits, QuantBits::B8);
    }

    #[test]
    fn plan_is_deterministic() {
        let t = telemetry(3, 15, 5);
        let mut a = RulePlanner::new(planner_cfg(Policy::Random));
        let mut b = RulePlanner::new(planner_cfg(Policy::Random));
        assert_eq!(a.plan(&t, &Memory::new(), None), b.plan(&t, &Memory::new(), None));
    }

    #[test]
    fn evaluator_measures_first_round_against_initial_accuracy() {
        let mut eval = ThresholdEvaluator::new(0.002, 2, 1.0, 0.1);
        let (_, feedback) = eval.evaluate_round(draft(0, metrics(0.35, 0.5)));
        assert!((feedback.accuracy_delta - 0.25).abs() < 1e-12);
        assert!(!feedback.plateau);
        assert!(!feedback.latency_over_budget);
    }

    #[test]
    fn plateau_needs_patience_consecutive_small_deltas() {
        let mut eval = ThresholdEvaluator::new(0.002, 2, 1.0, 0.5);
        let (_, f1) = eval.evaluate_round(draft(0, metrics(0.501, 0.5)));
        assert!(!f1.plateau);
        let (_, f2) = eval.evaluate_round(draft(1, metrics(0.502, 0.5)));
        assert!(f2.plateau);
        assert!(f2.accuracy_delta < 0.002);
        // a real improvement resets the streak
        let (_, f3) = eval.evaluate_round(draft(2, metrics(0.6, 0.5)));
        assert!(!f3.plateau);
    }

    #[test]
    fn latency_budget_flag() {
        let mut eval = ThresholdEvaluator::new(0.002, 2, 1.0, 0.0);
        let (_, under) = eval.evaluate_round(draft(0, metrics(0.2, 0.5)));
        assert!(!under.latency_over_budget);
        let (_, over) = eval.evaluate_round(draft(1, metrics(0.4, 1.5)));
        assert!(over.latency_over_budget);
        assert!(over.notes.contains(&"latency_over_budget".to_string()));
    }
}
