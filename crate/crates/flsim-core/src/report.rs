//! Bit-exact report emission: JSON with stable key order, CSV for plots.

use crate::config::SimConfig;
use crate::dataset::{dirichlet_partition, histogram_entropy};
use crate::error::{Error, Result};
use crate::orchestrator::{summarize, ComparisonReport, SimulationReport};
use crate::Dataset;

/// Output encoding of `emit_*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::ConfigRange {
                field: "format".into(),
                message: format!("unknown format {other:?} (expected json or csv)"),
            }),
        }
    }
}

/// Header of the comparison CSV.
pub const COMPARISON_CSV_HEADER: &str =
    "policy,seed,num_channels,avg_selected_snr_db,avg_comm_latency_s,final_test_accuracy";

/// Header of the per-round CSV of a single simulation report.
pub const ROUNDS_CSV_HEADER: &str = "round,policy,test_accuracy,mean_train_loss,avg_selected_snr_db,round_comm_latency_s,round_compute_latency_s,round_payload_bits,no_update";

/// Shortest round-trip decimal for a float, locale-independent.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Serializes a simulation report after checking that its summary matches a
/// recomputation from the records.
pub fn emit_report(report: &SimulationReport, format: ReportFormat) -> Result<Vec<u8>> {
    let recomputed = summarize(report.initial_accuracy, &report.rounds);
    if recomputed != report.summary {
        return Err(Error::ReportInconsistent(format!(
            "summary does not match its records (stored {:?}, recomputed {recomputed:?})",
            report.summary
        )));
    }
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(report)?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        ReportFormat::Csv => {
            let mut out = String::from(ROUNDS_CSV_HEADER);
            out.push('\n');
            for r in &report.rounds {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.plan.round_idx,
                    r.plan.policy,
                    fmt_f64(r.metrics.test_accuracy),
                    fmt_f64(r.metrics.mean_train_loss),
                    fmt_f64(r.metrics.avg_selected_snr_db),
                    fmt_f64(r.metrics.round_comm_latency_s),
                    fmt_f64(r.metrics.round_compute_latency_s),
                    r.metrics.round_payload_bits,
                    r.no_update,
                ));
            }
            Ok(out.into_bytes())
        }
    }
}

/// Serializes a comparison report; the CSV is the plot interface.
pub fn emit_comparison(report: &ComparisonReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(report)?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        ReportFormat::Csv => {
            let mut out = String::from(COMPARISON_CSV_HEADER);
            out.push('\n');
            for row in &report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.policy,
                    row.seed,
                    row.num_channels,
                    fmt_f64(row.avg_selected_snr_db),
                    fmt_f64(row.avg_comm_latency_s),
                    fmt_f64(row.final_test_accuracy),
                ));
            }
            Ok(out.into_bytes())
        }
    }
}

/// Header of the partition-stats CSV; histogram columns follow.
pub const PARTITION_STATS_HEADER_PREFIX: &str = "client_id,num_samples,entropy_nats";

/// Per-client partition summary: sizes, label entropies, class histograms.
pub fn partition_stats(cfg: &SimConfig, train: &Dataset) -> Result<String> {
    let shards = dirichlet_partition(train, &cfg.partition)?;
    let mut out = String::from(PARTITION_STATS_HEADER_PREFIX);
    for class in 0..train.num_classes() {
        out.push_str(&format!(",class_{class}"));
    }
    out.push('\n');
    for shard in &shards {
        out.push_str(&format!(
            "{},{},{}",
            shard.client_id,
            shard.len(),
            fmt_f64(histogram_entropy(&shard.class_histogram)),
        ));
        for count in &shard.class_histogram {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SynthConfig;
    use crate::orchestrator::run_simulation;

    fn small_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.synth =
            SynthConfig { classes: 4, samples_per_class: 40, test_per_class: 15, feature_dim: 8 };
        cfg.partition.num_clients = 6;
        cfg.wireless.num_channels = 3;
        cfg.rounds = 3;
        cfg
    }

    fn small_report() -> SimulationReport {
        let cfg = small_cfg();
        let (train, test) = crate::config::resolve_dataset(&cfg).unwrap();
        run_simulation(&cfg, &train, &test).unwrap()
    }

    #[test]
    fn json_emission_is_deterministic_and_round_trips() {
        let report = small_report();
        let a = emit_report(&report, ReportFormat::Json).unwrap();
        let b = emit_report(&report, ReportFormat::Json).unwrap();
        assert_eq!(a, b);
        let reloaded: SimulationReport = serde_json::from_slice(&a).unwrap();
        assert_eq!(report, reloaded);
    }

    #[test]
    fn csv_has_documented_header() {
        assert_eq!(
            COMPARISON_CSV_HEADER,
            "policy,seed,num_channels,avg_selected_snr_db,avg_comm_latency_s,final_test_accuracy"
        );
        let report = small_report();
        let csv = emit_report(&report, ReportFormat::Csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(ROUNDS_CSV_HEADER));
        assert_eq!(text.lines().count(), 1 + report.rounds.len());
        assert!(!text.contains('\r'));
    }

    #[test]
    fn tampered_summary_is_rejected() {
        let mut report = small_report();
        report.summary.final_accuracy += 0.25;
        assert!(matches!(
            emit_report(&report, ReportFormat::Json),
            Err(Error::ReportInconsistent(_))
        ));
    }

    #[test]
    fn partition_stats_shape_and_entropy_consistency() {
        let cfg = small_cfg();
        let (train, _) = crate::config::resolve_dataset(&cfg).unwrap();
        let stats = partition_stats(&cfg, &train).unwrap();
        let lines: Vec<&str> = stats.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[0].starts_with(PARTITION_STATS_HEADER_PREFIX));
        // entropy column must match a recomputation from the emitted histogram
        for row in &lines[1..] {
            let cols: Vec<&str> = row.split(',').collect();
            let entropy: f64 = cols[2].parse().unwrap();
            let hist: Vec<usize> = cols[3..].iter().map(|c| c.parse().unwrap()).collect();
            let expect = histogram_entropy(&hist);
            assert!((entropy - expect).abs() < 1e-12);
            let n: usize = cols[1].parse().unwrap();
            assert_eq!(n, hist.iter().sum::<usize>());
        }
    }

    #[test]
    fn partition_stats_default_cell_has_fifteen_rows() {
        let cfg = SimConfig::default();
        let (train, _) = crate::config::resolve_dataset(&cfg).unwrap();
        let stats = partition_stats(&cfg, &train).unwrap();
        assert_eq!(stats.lines().count(), 1 + 15);
    }

    #[test]
    fn near_uniform_alpha_gives_near_global_entropy() {
        let mut cfg = small_cfg();
        cfg.partition.alpha = 1e6;
        let (train, _) = crate::config::resolve_dataset(&cfg).unwrap();
        let global = histogram_entropy(&train.global_histogram());
        let stats = partition_stats(&cfg, &train).unwrap();
        for row in stats.lines().skip(1) {
            let entropy: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
            assert!((entropy - global).abs() < 0.1, "entropy {entropy} vs global {global}");
        }
    }
}
