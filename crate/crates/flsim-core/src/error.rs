//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed binary input (bad magic, bad header field).
    #[error("format error: {0}")]
    Format(String),

    /// Inputs that are individually valid but mutually inconsistent.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Dataset too small for the requested partition.
    #[error("infeasible partition: need at least {needed} samples for {clients} clients, dataset has {available}")]
    InfeasiblePartition {
        needed: usize,
        clients: usize,
        available: usize,
    },

    /// A quantity left its mathematical domain (e.g. non-positive rate).
    #[error("domain error: {0}")]
    Domain(String),

    /// Local training produced a non-finite loss.
    #[error("divergence at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },

    /// A simulation aborted mid-run on divergence; the rounds completed so
    /// far are retained.
    #[error("divergence in round {round} (client {client}, epoch {epoch}, batch {batch}); partial report retained")]
    DivergedRun {
        round: usize,
        client: crate::ClientId,
        epoch: usize,
        batch: usize,
        partial: Box<crate::orchestrator::SimulationReport>,
    },

    /// Aggregation over an empty or zero-weight update set.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// Config file could not be parsed.
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// Config field outside its documented range.
    #[error("config range error: {field}: {message}")]
    ConfigRange { field: String, message: String },

    /// Replay of a stored report diverged from a fresh run.
    #[error("reproducibility error: first divergent field: {field}")]
    Reproducibility { field: String },

    /// A report's summary does not match its per-round records.
    #[error("report inconsistency: {0}")]
    ReportInconsistent(String),

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
