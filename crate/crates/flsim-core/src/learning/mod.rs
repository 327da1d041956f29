//! The numeric core: model init, local SGD, quantization, update filtering,
//! weighted aggregation, and global evaluation.

mod aggregate;
mod model;
mod quantize;

pub use aggregate::{fedavg, filter_updates};
pub use model::{evaluate, gradient, init_model, local_train, loss_and_gradient};
pub use quantize::{quantize_roundtrip, quantize_values};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::ClientId;

/// Supported model architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Multinomial logistic regression: `(D+1)*C` parameters.
    Logistic,
    /// One hidden tanh layer of width `H`.
    Mlp1,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Mlp1 => "mlp1",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "mlp1" => Ok(ModelKind::Mlp1),
            other => Err(Error::ConfigRange {
                field: "model".into(),
                message: format!("unknown model kind {other:?} (expected logistic or mlp1)"),
            }),
        }
    }
}

/// Shape of a model: input width, class count, hidden width (mlp1 only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
}

impl ModelDims {
    pub fn param_count(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Logistic => (self.feature_dim + 1) * self.num_classes,
            ModelKind::Mlp1 => {
                self.hidden_dim * self.feature_dim
                    + self.hidden_dim
                    + self.num_classes * self.hidden_dim
                    + self.num_classes
            }
        }
    }
}

/// A flat real-valued parameter vector plus its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<S: Scalar> {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub values: Vec<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checkpoint encoding: `[kind u8][D u32][C u32][H u32][len u64]` header,
    /// then one little-endian 64-bit float per parameter.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 * 3 + 8 + self.values.len() * 8);
        out.push(match self.kind {
            ModelKind::Logistic => 0u8,
            ModelKind::Mlp1 => 1u8,
        });
        out.extend_from_slice(&(self.dims.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.hidden_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_f64().expect("finite parameter").to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 1 + 4 * 3 + 8;
        if bytes.len() < HEADER {
            return Err(Error::Format("checkpoint shorter than its header".into()));
        }
        let kind = match bytes[0] {
            0 => ModelKind::Logistic,
            1 => ModelKind::Mlp1,
            k => return Err(Error::Format(format!("unknown model kind byte {k}"))),
        };
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let dims = ModelDims {
            feature_dim: u32_at(1) as usize,
            num_classes: u32_at(5) as usize,
            hidden_dim: u32_at(9) as usize,
        };
        let len = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        if len != dims.param_count(kind) {
            return Err(Error::Format(format!(
                "checkpoint declares {len} values, dims require {}",
                dims.param_count(kind)
            )));
        }
        if bytes.len() != HEADER + len * 8 {
            return Err(Error::Format(format!(
                "checkpoint has {} bytes, expected {}",
                bytes.len(),
                HEADER + len * 8
            )));
        }
        let values = bytes[HEADER..]
            .chunks_exact(8)
            .map(|c| S::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Self { kind, dims, values })
    }
}

/// Uplink quantization width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u32", try_from = "u32")]
pub enum QuantBits {
    B8,
    B16,
    B32,
}

impl QuantBits {
    pub fn bits(self) -> u32 {
        match self {
            QuantBits::B8 => 8,
            QuantBits::B16 => 16,
            QuantBits::B32 => 32,
        }
    }

    /// One step down the 32 → 16 → 8 ladder; 8 is the floor.
    pub fn lower(self) -> Self {
        match self {
            QuantBits::B32 => QuantBits::B16,
            QuantBits::B16 | QuantBits::B8 => QuantBits::B8,
        }
    }
}

impl From<QuantBits> for u32 {
    fn from(q: QuantBits) -> u32 {
        q.bits()
    }
}

impl TryFrom<u32> for QuantBits {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            8 => Ok(QuantBits::B8),
            16 => Ok(QuantBits::B16),
            32 => Ok(QuantBits::B32),
            other => Err(Error::ConfigRange {
                field: "quant_bits".into(),
                message: format!("must be one of 8, 16, 32; got {other}"),
            }),
        }
    }
}

/// Size in bits of a quantized parameter payload: the packed values plus one
/// 32-bit scale.
pub fn payload_bits(num_params: usize, bits: QuantBits) -> u64 {
    num_params as u64 * u64::from(bits.bits()) + 32
}

/// One client's trained model, as shipped over the uplink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate<S: Scalar> {
    pub client_id: ClientId,
    pub new_params: ModelParams<S>,
    pub num_samples: usize,
    pub train_loss: f64,
    pub payload_bits: u64,
    pub quant_bits: QuantBits,
}

/// Local-training knobs chosen by the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Hyperparams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated form rejects NaN
    pub fn validate(&self) -> Result<()> {
        // zero is allowed: it freezes training without changing the pipeline
        if !(self.learning_rate >= 0.0) {
            return Err(Error::ConfigRange {
                field: "learning_rate".into(),
                message: "must be >= 0".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigRange { field: "batch_size".into(), message: "must be >= 1".into() });
        }
        if self.local_epochs == 0 {
            return Err(Error::ConfigRange { field: "local_epochs".into(), message: "must be >= 1".into() });
        }
        Ok(())
    }
}
