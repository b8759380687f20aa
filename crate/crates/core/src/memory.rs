//! Inference memory footprint model: KV-cache bytes against weight bytes.
//!
//! The cache stores keys and values for every layer, token and hidden unit,
//! at an effective width of `kv_bits + scale_bits/block_size` bits per
//! element. The fraction reported here deliberately excludes activation
//! scratch memory, so it is a lower bound on the share a runtime would see.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Static description of a model for footprint estimates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub num_layers: u64,
    pub hidden_size: u64,
    pub num_params: u64,
    pub weight_bits: u32,
    pub kv_bits: u32,
    pub kv_block_size: u64,
    /// Bits of per-block scale storage; 0 models an unquantized cache.
    pub scale_bits: u32,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0
            || self.hidden_size == 0
            || self.num_params == 0
            || self.weight_bits == 0
            || self.kv_bits == 0
            || self.kv_block_size == 0
        {
            return Err(Error::Config("model spec fields must be positive".into()));
        }
        Ok(())
    }

    /// Effective bits per cached element: kv_bits + scale_bits/block_size.
    pub fn kv_effective_bits(&self) -> f64 {
        self.kv_bits as f64 + self.scale_bits as f64 / self.kv_block_size as f64
    }
}

/// Byte split of one inference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub kv_bytes: u64,
    pub weight_bytes: u64,
    /// kv / (kv + weights); activation scratch is not modeled.
    pub kv_fraction: f64,
}

/// Cache and weight bytes for a batch of sequences of a given length.
pub fn kv_memory_model(spec: &ModelSpec, batch: u64, seqlen: u64) -> Result<MemoryBreakdown> {
    spec.validate()?;
    if batch == 0 || seqlen == 0 {
        return Err(Error::Config(format!(
            "batch ({batch}) and sequence length ({seqlen}) must be positive"
        )));
    }

    // 2 (K and V) * layers * batch * seqlen * hidden elements, each costing
    // kv_bits + scale_bits/block_size bits; kept in exact integer arithmetic
    // as bits * block_size until the final division.
    let elements = checked_product(&[2, spec.num_layers, batch, seqlen, spec.hidden_size])?;
    let bits_per_block_elements =
        spec.kv_bits as u128 * spec.kv_block_size as u128 + spec.scale_bits as u128;
    let scaled_bits = (elements as u128)
        .checked_mul(bits_per_block_elements)
        .ok_or_else(|| Error::Range("kv byte count overflows".into()))?;
    let kv_bytes = scaled_bits.div_ceil(8 * spec.kv_block_size as u128);

    let weight_bits = (spec.num_params as u128) * (spec.weight_bits as u128);
    let weight_bytes = weight_bits.div_ceil(8);

    let kv_bytes = u64::try_from(kv_bytes)
        .map_err(|_| Error::Range("kv byte count exceeds u64".into()))?;
    let weight_bytes = u64::try_from(weight_bytes)
        .map_err(|_| Error::Range("weight byte count exceeds u64".into()))?;
    let kv_fraction = kv_bytes as f64 / (kv_bytes as f64 + weight_bytes as f64);
    Ok(MemoryBreakdown { kv_bytes, weight_bytes, kv_fraction })
}

fn checked_product(factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| Error::Range("element count overflows".into()))
}
