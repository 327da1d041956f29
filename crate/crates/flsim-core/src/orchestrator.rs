//! The seeded end-to-end round loop and the policy-comparison harness.
//!
//! One round runs: sample SNR → telemetry → plan → select → assign channels →
//! local training → dropout → uplink → filter → aggregate → evaluate →
//! remember. Every stochastic draw comes from a labeled substream of the
//! master seed, so component call order cannot change results and a policy
//! swap cannot perturb the environment.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{resolve_dataset, SimConfig};
use crate::control::{
    ClientProfile, Memory, Planner, PlannerConfig, Policy, RoundDraft, RoundMetrics,
    RulePlanner, TelemetrySnapshot, ThresholdEvaluator,
};
use crate::dataset::ClientShard;
use crate::error::{Error, Result};
use crate::learning::{
    evaluate, fedavg, filter_updates, init_model, local_train, payload_bits, quantize_roundtrip,
    ModelDims, QuantBits,
};
use crate::rng::{derive_seed, stream, uniform_in, StreamLabel};
use crate::wireless::{
    achievable_rate, apply_dropout, assign_channels, round_comm_latency, sample_snr,
    transfer_latency, LinkReport,
};
use crate::{ClientId, Dataset, Params, Update};

/// Immutable world built once per run: data shards and client capabilities.
pub struct WorldState {
    pub shards: Vec<ClientShard>,
    pub compute_speeds: Vec<f64>,
    pub num_classes: usize,
}

impl WorldState {
    /// Partitions the data and draws per-client compute speeds.
    pub fn create(cfg: &SimConfig, train: &Dataset) -> Result<Self> {
        let shards = crate::dataset::dirichlet_partition(train, &cfg.partition)?;
        let compute_speeds = (0..cfg.partition.num_clients)
            .map(|c| {
                let mut rng = stream(cfg.master_seed, StreamLabel::ComputeSpeed, c as u64, 0);
                uniform_in(&mut rng, cfg.compute_speed_min, cfg.compute_speed_max)
            })
            .collect();
        Ok(Self { shards, compute_speeds, num_classes: train.num_classes() })
    }
}

/// Assembles the control plane's view of round `round_idx`. Pure read.
pub fn collect_telemetry(
    world: &WorldState,
    cfg: &SimConfig,
    round_idx: usize,
    snr: &BTreeMap<ClientId, f64>,
    participation: &[u32],
    global_accuracy_so_far: f64,
) -> TelemetrySnapshot {
    let profiles = world
        .shards
        .iter()
        .map(|shard| ClientProfile {
            client_id: shard.client_id,
            num_samples: shard.len(),
            class_histogram: shard.class_histogram.clone(),
            compute_speed: world.compute_speeds[shard.client_id as usize],
            current_snr_db: snr[&shard.client_id],
            cumulative_participation: participation[shard.client_id as usize],
            cumulative_reward: f64::from(participation[shard.client_id as usize])
                * cfg.unit_reward,
        })
        .collect();
    TelemetrySnapshot {
        round_idx,
        profiles,
        num_channels: cfg.wireless.num_channels,
        bandwidth_hz: cfg.wireless.bandwidth_hz_per_channel,
        global_accuracy_so_far,
    }
}

/// Run-level aggregates; every field is recomputable from the round records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_accuracy: f64,
    pub mean_selected_snr_db: f64,
    pub mean_round_comm_latency_s: f64,
    pub mean_round_compute_latency_s: f64,
    pub total_payload_bits: u64,
}

/// Full record of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub initial_accuracy: f64,
    pub rounds: Vec<crate::control::RoundRecord>,
    pub summary: Summary,
    /// Wall-clock duration; excluded from determinism comparisons.
    pub wall_time_s: f64,
}

/// Recomputes the summary block from the per-round records.
pub fn summarize(initial_accuracy: f64, rounds: &[crate::control::RoundRecord]) -> Summary {
    let n = rounds.len();
    let mean = |f: &dyn Fn(&crate::control::RoundRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            rounds.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Summary {
        final_accuracy: rounds.last().map_or(initial_accuracy, |r| r.metrics.test_accuracy),
        mean_selected_snr_db: mean(&|r| r.metrics.avg_selected_snr_db),
        mean_round_comm_latency_s: mean(&|r| r.metrics.round_comm_latency_s),
        mean_round_compute_latency_s: mean(&|r| r.metrics.round_compute_latency_s),
        total_payload_bits: rounds.iter().map(|r| r.metrics.round_payload_bits).sum(),
    }
}

/// Executes `cfg.rounds` federated rounds with the built-in rule planner.
pub fn run_simulation(cfg: &SimConfig, train: &Dataset, test: &Dataset) -> Result<SimulationReport> {
    let mut planner = RulePlanner::new(PlannerConfig {
        policy: cfg.policy,
        hyper: cfg.hyper.clone(),
        quant_bits: cfg.quant_bits,
        local_epochs_cap: cfg.local_epochs_cap,
        k_override: cfg.k_override,
        coverage_threshold: cfg.coverage_threshold,
        master_seed: cfg.master_seed,
    });
    run_simulation_with(cfg, train, test, &mut planner)
}

/// Executes the round loop with a caller-provided planning agent.
pub fn run_simulation_with(
    cfg: &SimConfig,
    train: &Dataset,
    test: &Dataset,
    planner: &mut dyn Planner,
) -> Result<SimulationReport> {
    cfg.validate()?;
    if train.feature_dim() != test.feature_dim() || train.num_classes() != test.num_classes() {
        return Err(Error::Consistency(format!(
            "train ({}x{} classes) and test ({}x{} classes) shapes differ",
            train.feature_dim(),
            train.num_classes(),
            test.feature_dim(),
            test.num_classes()
        )));
    }
    let started = Instant::now();
    let world = WorldState::create(cfg, train)?;
    let all_clients: Vec<ClientId> = world.shards.iter().map(|s| s.client_id).collect();
    let dims = ModelDims {
        feature_dim: train.feature_dim(),
        num_classes: train.num_classes(),
        hidden_dim: cfg.hidden_dim,
    };

    let mut global: Params = init_model(cfg.model, dims, cfg.master_seed);
    let (initial_accuracy, _) = evaluate(&global, test);
    let mut evaluator = ThresholdEvaluator::new(
        cfg.plateau_epsilon,
        cfg.patience,
        cfg.latency_budget_s,
        initial_accuracy,
    );
    let mut memory = Memory::new();
    let mut participation = vec![0u32; cfg.partition.num_clients];
    let mut feedback = None;
    let mut accuracy_so_far = initial_accuracy;

    for round_idx in 0..cfg.rounds {
        let snr = sample_snr(&all_clients, &cfg.wireless, round_idx);
        let telemetry =
            collect_telemetry(&world, cfg, round_idx, &snr, &participation, accuracy_so_far);
        let plan = planner.plan(&telemetry, &memory, feedback.as_ref());
        let selected = plan.selected_clients.clone();

        // link budget: uplink carries the quantized update, downlink the
        // full-precision global model
        let uplink_payload = payload_bits(global.len(), plan.quant_bits);
        let downlink_payload = payload_bits(global.len(), QuantBits::B32);
        let mut est_uplink = BTreeMap::new();
        let mut reports: BTreeMap<ClientId, LinkReport> = BTreeMap::new();
        for &c in &selected {
            let rate = achievable_rate(cfg.wireless.bandwidth_hz_per_channel, snr[&c]);
            let uplink = transfer_latency(uplink_payload, rate, cfg.wireless.header_bits)?;
            let downlink = transfer_latency(downlink_payload, rate, cfg.wireless.header_bits)?;
            est_uplink.insert(c, uplink);
            reports.insert(
                c,
                LinkReport {
                    client_id: c,
                    snr_db: snr[&c],
                    rate_bps: rate,
                    uplink_latency_s: uplink,
                    downlink_latency_s: downlink,
                    dropped: false,
                },
            );
        }
        let assignment = assign_channels(&selected, &est_uplink, cfg.wireless.num_channels)?;

        // local training on every selected client (dropout strikes later,
        // after the compute already happened)
        let mut by_id = selected.clone();
        by_id.sort_unstable();
        let mut updates: Vec<Update> = Vec::with_capacity(by_id.len());
        let mut compute_latency = 0.0f64;
        for &c in &by_id {
            let shard = &world.shards[c as usize];
            let seed = derive_seed(cfg.master_seed, StreamLabel::BatchShuffle, round_idx as u64, u64::from(c));
            let update = local_train(&global, shard, train, &plan.hyper, seed).map_err(|e| {
                match e {
                    Error::Divergence { epoch, batch } => Error::DivergedRun {
                        round: round_idx,
                        client: c,
                        epoch,
                        batch,
                        partial: Box::new(SimulationReport {
                            config: cfg.clone(),
                            initial_accuracy,
                            rounds: memory.records().to_vec(),
                            summary: summarize(initial_accuracy, memory.records()),
                            wall_time_s: started.elapsed().as_secs_f64(),
                        }),
                    },
                    other => other,
                }
            })?;
            compute_latency = compute_latency.max(
                plan.hyper.local_epochs as f64 * shard.len() as f64
                    / world.compute_speeds[c as usize],
            );
            updates.push(update);
            participation[c as usize] += 1;
        }

        let survivors = apply_dropout(&selected, &cfg.wireless, round_idx);
        for &c in &selected {
            if !survivors.contains(&c) {
                reports.get_mut(&c).expect("report built above").dropped = true;
            }
        }

        // only survivors' updates reach the uplink, quantized per plan
        let mut received: Vec<Update> = updates
            .into_iter()
            .filter(|u| survivors.contains(&u.client_id))
            .map(|u| quantize_roundtrip(&u, plan.quant_bits))
            .collect();
        received.sort_by_key(|u| u.client_id);
        let round_payload: u64 = received.iter().map(|u| u.payload_bits).sum();
        let mean_train_loss = if received.is_empty() {
            0.0
        } else {
            received.iter().map(|u| u.train_loss).sum::<f64>() / received.len() as f64
        };

        let comm_latency = round_comm_latency(&assignment, &reports)?;
        let (kept, discarded) = filter_updates(received, &global, cfg.filter_multiplier);
        let no_update = kept.is_empty();
        if !no_update {
            global = fedavg(&kept)?;
        }
        let (test_accuracy, _) = evaluate(&global, test);
        accuracy_so_far = test_accuracy;

        let avg_selected_snr_db =
            selected.iter().map(|c| snr[c]).sum::<f64>() / selected.len() as f64;
        let draft = RoundDraft {
            plan,
            link_reports: reports.into_values().collect(),
            survivors,
            kept_updates: kept.iter().map(|u| u.client_id).collect(),
            discarded_updates: discarded.iter().map(|u| u.client_id).collect(),
            no_update,
            metrics: RoundMetrics {
                test_accuracy,
                mean_train_loss,
                avg_selected_snr_db,
                round_comm_latency_s: comm_latency,
                round_compute_latency_s: compute_latency,
                round_payload_bits: round_payload,
            },
        };
        let (record, fb) = evaluator.evaluate_round(draft);
        memory.append(record)?;
        feedback = Some(fb);
    }

    Ok(SimulationReport {
        config: cfg.clone(),
        initial_accuracy,
        summary: summarize(initial_accuracy, memory.records()),
        rounds: memory.records().to_vec(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// One `(policy, seed, channels)` cell of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: Policy,
    pub seed: u64,
    pub num_channels: usize,
    pub avg_selected_snr_db: f64,
    pub avg_comm_latency_s: f64,
    pub final_test_accuracy: f64,
}

/// Mean and median over seeds for one `(policy, channels)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: Policy,
    pub num_channels: usize,
    pub mean_avg_selected_snr_db: f64,
    pub median_avg_selected_snr_db: f64,
    pub mean_avg_comm_latency_s: f64,
    pub median_avg_comm_latency_s: f64,
    pub mean_final_test_accuracy: f64,
    pub median_final_test_accuracy: f64,
}

/// Cross-policy benchmark output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub base_config: SimConfig,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub channels: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
    pub per_policy: Vec<PolicyAggregate>,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Runs `run_simulation` per `(policy, seed, channels)` on identical data.
///
/// Policies share per-round SNR and dropout substreams for a given seed, so
/// the comparison isolates the selection decision itself.
pub fn run_comparison(
    cfg: &SimConfig,
    train: &Dataset,
    test: &Dataset,
    policies: &[Policy],
    seeds: &[u64],
    channels: &[usize],
) -> Result<ComparisonReport> {
    if policies.is_empty() || seeds.is_empty() || channels.is_empty() {
        return Err(Error::Consistency(
            "comparison needs at least one policy, seed, and channel count".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut per_policy = Vec::new();
    for &policy in policies {
        for &k in channels {
            let mut group = Vec::new();
            for &seed in seeds {
                let run_cfg = cfg.with_policy(policy).with_master_seed(seed).with_num_channels(k);
                let report = run_simulation(&run_cfg, train, test)?;
                group.push(ComparisonRow {
                    policy,
                    seed,
                    num_channels: k,
                    avg_selected_snr_db: report.summary.mean_selected_snr_db,
                    avg_comm_latency_s: report.summary.mean_round_comm_latency_s,
                    final_test_accuracy: report.summary.final_accuracy,
                });
            }
            per_policy.push(PolicyAggregate {
                policy,
                num_channels: k,
                mean_avg_selected_snr_db: group.iter().map(|r| r.avg_selected_snr_db).sum::<f64>()
                    / group.len() as f64,
                median_avg_selected_snr_db: median_of(
                    group.iter().map(|r| r.avg_selected_snr_db).collect(),
                ),
                mean_avg_comm_latency_s: group.iter().map(|r| r.avg_comm_latency_s).sum::<f64>()
                    / group.len() as f64,
                median_avg_comm_latency_s: median_of(
                    group.iter().map(|r| r.avg_comm_latency_s).collect(),
                ),
                mean_final_test_accuracy: group
                    .iter()
                    .map(|r| r.final_test_accuracy)
                    .sum::<f64>()
                    / group.len() as f64,
                median_final_test_accuracy: median_of(
                    group.iter().map(|r| r.final_test_accuracy).collect(),
                ),
            });
            rows.extend(group);
        }
    }
    // canonical ordering: policy (declaration order), then seed, then channels
    let policy_rank =
        |p: Policy| Policy::ALL.iter().position(|&q| q == p).expect("every policy is in ALL");
    rows.sort_by_key(|r| (policy_rank(r.policy), r.seed, r.num_channels));
    per_policy.sort_by_key(|a| (policy_rank(a.policy), a.num_channels));
    Ok(ComparisonReport {
        base_config: cfg.clone(),
        policies: policies.to_vec(),
        seeds: seeds.to_vec(),
        channels: channels.to_vec(),
        rows,
        per_policy,
    })
}

/// Re-runs a stored report from its embedded config and demands bit-identical
/// records (wall time excluded).
pub fn replay(report_path: &Path) -> Result<SimulationReport> {
    let stored: SimulationReport =
        serde_json::from_str(&std::fs::read_to_string(report_path)?)?;
    let (train, test) = resolve_dataset(&stored.config)?;
    let fresh = run_simulation(&stored.config, &train, &test)?;

    let mut stored_value = serde_json::to_value(&stored)?;
    let mut fresh_value = serde_json::to_value(&fresh)?;
    for v in [&mut stored_value, &mut fresh_value] {
        v.as_object_mut().expect("report is a JSON object").remove("wall_time_s");
    }
    if let Some(field) = first_divergence("", &stored_value, &fresh_value) {
        return Err(Error::Reproducibility { field });
    }
    Ok(fresh)
}

/// Path of the first field where two JSON trees differ, depth-first in the
/// left tree's key order.
pub fn first_divergence(
    path: &str,
    left: &serde_json::Value,
    right: &serde_json::Value,
) -> Option<String> {
    use serde_json::Value;
    let here = || if path.is_empty() { "<root>".to_string() } else { path.to_string() };
    match (left, right) {
        (Value::Object(l), Value::Object(r)) => {
            for (key, lv) in l {
                let sub = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match r.get(key) {
                    None => return Some(sub),
                    Some(rv) => {
                        if let Some(d) = first_divergence(&sub, lv, rv) {
                            return Some(d);
                        }
                    }
                }
            }
            for key in r.keys() {
                if !l.contains_key(key) {
                    return Some(if path.is_empty() {
                        key.clone()
                    } else {
                        format!("{path}.{key}")
                    });
                }
            }
            None
        }
        (Value::Array(l), Value::Array(r)) => {
            for (i, (lv, rv)) in l.iter().zip(r.iter()).enumerate() {
                if let Some(d) = first_divergence(&format!("{path}[{i}]"), lv, rv) {
                    return Some(d);
                }
            }
            if l.len() != r.len() {
                return Some(format!("{path}.len"));
            }
            None
        }
        (l, r) => {
            if l == r {
                None
            } else {
                Some(here())
            }
        }
    }
}
