//! The control plane: telemetry, client-selection policies, the round
//! planner, the evaluator, and the append-only round memory.
//!
//! Planner and evaluator are deterministic components speaking a fixed
//! message protocol (snapshot in, plan out; draft in, record + feedback out),
//! so a different decision engine can be slotted in behind [`Planner`]
//! without touching the executor.

mod memory;
mod planner;
mod select;

pub use memory::{Memory, PolicyStats};
pub use planner::{Planner, PlannerConfig, RulePlanner, ThresholdEvaluator};
pub use select::{select_class_diversity, select_largest_data, select_latency, select_random};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{Hyperparams, QuantBits};
use crate::wireless::LinkReport;
use crate::ClientId;

/// Static and per-round state of one client as the control plane sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: ClientId,
    pub num_samples: usize,
    pub class_histogram: Vec<usize>,
    /// Samples per second of local compute.
    pub compute_speed: f64,
    pub current_snr_db: f64,
    pub cumulative_participation: u32,
    /// Incentive ledger stub: participation count times the unit reward.
    pub cumulative_reward: f64,
}

/// Everything the planner is allowed to look at for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub round_idx: usize,
    pub profiles: Vec<ClientProfile>,
    pub num_channels: usize,
    pub bandwidth_hz: f64,
    pub global_accuracy_so_far: f64,
}

/// Client-selection policy, as benchmarked in the case study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Random,
    Latency,
    LargestData,
    ClassDiversity,
}

impl Policy {
    pub const ALL: [Policy; 4] =
        [Policy::Random, Policy::Latency, Policy::LargestData, Policy::ClassDiversity];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Latency => "latency",
            Policy::LargestData => "largest_data",
            Policy::ClassDiversity => "class_diversity",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Policy::Random),
            "latency" => Ok(Policy::Latency),
            "largest_data" => Ok(Policy::LargestData),
            "class_diversity" => Ok(Policy::ClassDiversity),
            other => Err(Error::ConfigRange {
                field: "policy".into(),
                message: format!(
                    "unknown policy {other:?} (expected random, latency, largest_data, class_diversity)"
                ),
            }),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The control plane's full decision record for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round_idx: usize,
    pub policy: Policy,
    pub selected_clients: Vec<ClientId>,
    pub hyper: Hyperparams,
    pub quant_bits: QuantBits,
    pub k: usize,
}

/// Scalar metrics of one executed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub test_accuracy: f64,
    /// Mean training loss over received updates; 0 when none arrived.
    pub mean_train_loss: f64,
    pub avg_selected_snr_db: f64,
    pub round_comm_latency_s: f64,
    pub round_compute_latency_s: f64,
    /// Uplink bits actually transmitted by survivors this round.
    pub round_payload_bits: u64,
}

/// Evaluator output fed back into the next round's plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub accuracy_delta: f64,
    pub plateau: bool,
    pub latency_over_budget: bool,
    pub notes: Vec<String>,
}

/// A finalized memory entry: plan, outcomes, metrics, and feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub plan: RoundPlan,
    pub link_reports: Vec<LinkReport>,
    pub survivors: Vec<ClientId>,
    pub kept_updates: Vec<ClientId>,
    pub discarded_updates: Vec<ClientId>,
    /// True when no update survived and the global model was left unchanged.
    pub no_update: bool,
    pub metrics: RoundMetrics,
    pub feedback: Feedback,
}

/// A round record before the evaluator has attached feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDraft {
    pub plan: RoundPlan,
    pub link_reports: Vec<LinkReport>,
    pub survivors: Vec<ClientId>,
    pub kept_updates: Vec<ClientId>,
    pub discarded_updates: Vec<ClientId>,
    pub no_update: bool,
    pub metrics: RoundMetrics,
}
