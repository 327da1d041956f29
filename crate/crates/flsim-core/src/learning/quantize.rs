//! Uniform symmetric quantization of update payloads.

use super::{payload_bits, ModelUpdate, QuantBits};
use crate::scalar::Scalar;

/// Quantize-dequantize a vector at the given width.
///
/// 32 bits is the identity. Otherwise values snap to the symmetric grid
/// `round(v / step) * step` with `step = max_abs / (2^(bits-1) - 1)`, which
/// bounds the per-coordinate error by `step / 2` and represents `±max_abs`
/// exactly. Returns the dequantized vector and the payload size in bits
/// (packed values plus one 32-bit scale).
pub fn quantize_values<S: Scalar>(values: &[S], bits: QuantBits) -> (Vec<S>, u64) {
    let payload = payload_bits(values.len(), bits);
    if bits == QuantBits::B32 {
        return (values.to_vec(), payload);
    }
    let max_abs = values.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    if max_abs == S::zero() {
        // all-zero vector: step is 0, mapping is the identity
        return (values.to_vec(), payload);
    }
    let levels = S::from_f64_lossy(f64::from((1u32 << (bits.bits() - 1)) - 1));
    let step = max_abs / levels;
    let quantized = values.iter().map(|&v| (v / step).round() * step).collect();
    (quantized, payload)
}

/// Quantize-dequantize an update in place of its parameters, recomputing the
/// payload size.
pub fn quantize_roundtrip<S: Scalar>(update: &ModelUpdate<S>, bits: QuantBits) -> ModelUpdate<S> {
    let (values, payload) = quantize_values(&update.new_params.values, bits);
    let mut out = update.clone();
    out.new_params.values = values;
    out.payload_bits = payload;
    out.quant_bits = bits;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamLabel};
    use rand::Rng;

    #[test]
    fn identity_at_32_bits() {
        let values: Vec<f64> = vec![0.1, -2.5, 3.75, 0.0];
        let (q, payload) = quantize_values(&values, QuantBits::B32);
        assert_eq!(q, values);
        assert_eq!(payload, 4 * 32 + 32);
    }

    #[test]
    fn endpoints_are_representable() {
        let values: Vec<f64> = vec![-1.0, 1.0];
        let (q, _) = quantize_values(&values, QuantBits::B8);
        assert_eq!(q, values);
    }

    #[test]
    fn all_zero_vector_is_identity() {
        let values: Vec<f64> = vec![0.0; 7];
        let (q, _) = quantize_values(&values, QuantBits::B8);
        assert_eq!(q, values);
    }

    #[test]
    fn error_bounded_by_half_step() {
        let mut rng = stream(3, StreamLabel::Init, 0, 0);
        for bits in [QuantBits::B8, QuantBits::B16] {
            for _ in 0..1000 {
                let values: Vec<f64> =
                    (0..32).map(|_| rng.gen::<f64>() * 20.0 - 10.0).collect();
                let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let step = max_abs / (f64::from((1u32 << (bits.bits() - 1)) - 1));
                let (q, _) = quantize_values(&values, bits);
                for (orig, deq) in values.iter().zip(&q) {
                    assert!(
                        (orig - deq).abs() <= step / 2.0 + 1e-15,
                        "error {} exceeds step/2 {}",
                        (orig - deq).abs(),
                        step / 2.0
                    );
                }
            }
        }
    }

    #[test]
    fn payload_accounting() {
        let values: Vec<f64> = vec![1.0; 100];
        assert_eq!(quantize_values(&values, QuantBits::B8).1, 100 * 8 + 32);
        assert_eq!(quantize_values(&values, QuantBits::B16).1, 100 * 16 + 32);
    }
}
