//! Append-only per-layer store of quantized keys and values.
//!
//! Every token row is quantized block-wise on its own, so prefilling a prompt
//! in one call produces the same bytes as appending its tokens one at a time
//! — the streaming property decode relies on. Padding to the compute-friendly
//! token multiple happens only in [`KvCache::materialize`]'s dequantized
//! working copy; the store itself never holds padded rows, so peak stored
//! bytes are unaffected by materialization.

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::codec::QuantizedTensor;
use crate::matrix::Matrix;
use crate::{Error, Result, Scalar};

/// Layout of one cache: layer count, hidden geometry and codec parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvCacheConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub block_size: usize,
    pub bits: u8,
    pub pad_multiple: usize,
}

pub const DEFAULT_PAD_MULTIPLE: usize = 16;

impl KvCacheConfig {
    pub fn new(
        num_layers: usize,
        hidden_size: usize,
        num_heads: usize,
        block_size: usize,
        bits: u8,
    ) -> Result<Self> {
        let cfg = KvCacheConfig {
            num_layers,
            hidden_size,
            num_heads,
            head_dim: if num_heads > 0 { hidden_size / num_heads } else { 0 },
            block_size,
            bits,
            pad_multiple: DEFAULT_PAD_MULTIPLE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_pad_multiple(mut self, pad_multiple: usize) -> Result<Self> {
        self.pad_multiple = pad_multiple;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0
            || self.hidden_size == 0
            || self.num_heads == 0
            || self.head_dim == 0
            || self.block_size == 0
            || self.pad_multiple == 0
        {
            return Err(Error::Config("all cache dimensions must be positive".into()));
        }
        if self.num_heads * self.head_dim != self.hidden_size {
            return Err(Error::Config(format!(
                "hidden size {} is not num_heads {} x head_dim {}",
                self.hidden_size, self.num_heads, self.head_dim
            )));
        }
        Ok(())
    }

    /// Index bits plus amortized scale storage, e.g. 4 + 32/256 = 4.125.
    pub fn effective_bits_per_element(&self) -> f64 {
        self.bits as f64 + 32.0 / self.block_size as f64
    }
}

/// Smallest multiple of `pad_multiple` that covers `token_count`.
pub fn padded_len(token_count: usize, pad_multiple: usize) -> usize {
    token_count.div_ceil(pad_multiple) * pad_multiple
}

/// Quantized keys and values of one decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    keys: QuantizedTensor,
    values: QuantizedTensor,
}

impl LayerCache {
    pub(crate) fn from_tensors(keys: QuantizedTensor, values: QuantizedTensor) -> Result<Self> {
        if keys.rows() != values.rows() {
            return Err(Error::Corruption(format!(
                "layer holds {} key rows but {} value rows",
                keys.rows(),
                values.rows()
            )));
        }
        Ok(LayerCache { keys, values })
    }

    pub fn token_count(&self) -> usize {
        self.keys.rows()
    }

    pub fn keys(&self) -> &QuantizedTensor {
        &self.keys
    }

    pub fn values(&self) -> &QuantizedTensor {
        &self.values
    }

    pub fn stored_bytes(&self) -> u64 {
        self.keys.stored_bytes() + self.values.stored_bytes()
    }
}

/// Materialized working copy of one layer: dequantized keys/values padded to
/// the compute multiple, plus the count of rows that are real tokens.
pub struct Materialized<T> {
    pub keys: Matrix<T>,
    pub values: Matrix<T>,
    pub valid_len: usize,
}

/// Multi-layer append-only KV store bound to one codebook.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    config: KvCacheConfig,
    codebook: Codebook<T>,
    layers: Vec<LayerCache>,
}

impl<T: Scalar> KvCache<T> {
    /// Empty cache quantizing with the NormalFloat codebook of `config.bits`.
    pub fn new(config: KvCacheConfig) -> Result<Self> {
        let codebook = Codebook::normal_float(config.bits)?;
        Self::with_codebook(config, codebook)
    }

    /// Empty cache quantizing with an explicit codebook (the benchmark path
    /// swaps in the uniform comparator here).
    pub fn with_codebook(config: KvCacheConfig, codebook: Codebook<T>) -> Result<Self> {
        config.validate()?;
        if codebook.bits() != config.bits {
            return Err(Error::Config(format!(
                "codebook {:?} is {}-bit but the config says {} bits",
                codebook.id(),
                codebook.bits(),
                config.bits
            )));
        }
        let layers = (0..config.num_layers)
            .map(|_| {
                Ok(LayerCache {
                    keys: QuantizedTensor::empty(config.hidden_size, config.block_size, &codebook)?,
                    values: QuantizedTensor::empty(
                        config.hidden_size,
                        config.block_size,
                        &codebook,
                    )?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(KvCache { config, codebook, layers })
    }

    pub(crate) fn from_parts(
        config: KvCacheConfig,
        codebook: Codebook<T>,
        layers: Vec<LayerCache>,
    ) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.num_layers {
            return Err(Error::Corruption(format!(
                "snapshot holds {} layers, config says {}",
                layers.len(),
                config.num_layers
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            let consistent = layer.keys.rows() == layer.values.rows()
                && layer.keys.cols() == config.hidden_size
                && layer.values.cols() == config.hidden_size
                && layer.keys.block_size() == config.block_size
                && layer.values.block_size() == config.block_size
                && layer.keys.codebook_id() == codebook.id()
                && layer.values.codebook_id() == codebook.id();
            if !consistent {
                return Err(Error::Corruption(format!("layer {i} is inconsistent with the config")));
            }
        }
        Ok(KvCache { config, codebook, layers })
    }

    pub fn config(&self) -> &KvCacheConfig {
        &self.config
    }

    pub fn codebook(&self) -> &Codebook<T> {
        &self.codebook
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, layer: usize) -> Result<&LayerCache> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::Config(format!("layer {layer} out of range")))
    }

    pub fn token_count(&self, layer: usize) -> Result<usize> {
        Ok(self.layer(layer)?.token_count())
    }

    /// Quantize and append a whole block of token rows (the prefill path; also
    /// valid as a continuation on a non-empty layer).
    pub fn append_prefill(
        &mut self,
        layer: usize,
        keys: &Matrix<T>,
        values: &Matrix<T>,
    ) -> Result<()> {
        if keys.rows() != values.rows() || keys.cols() != values.cols() {
            return Err(Error::Shape(format!(
                "keys are {}x{} but values are {}x{}",
                keys.rows(),
                keys.cols(),
                values.rows(),
                values.cols()
            )));
        }
        if keys.cols() != self.config.hidden_size {
            return Err(Error::Shape(format!(
                "token width {} does not match hidden size {}",
                keys.cols(),
                self.config.hidden_size
            )));
        }
        if layer >= self.layers.len() {
            return Err(Error::Config(format!("layer {layer} out of range")));
        }
        let entry = &mut self.layers[layer];
        for i in 0..keys.rows() {
            entry.keys.push_row(keys.row(i), &self.codebook)?;
            entry.values.push_row(values.row(i), &self.codebook)?;
        }
        Ok(())
    }

    /// Quantize and append a single token (the decode path). Previously
    /// stored bytes are untouched.
    pub fn append_token(&mut self, layer: usize, key: &[T], value: &[T]) -> Result<()> {
        if key.len() != self.config.hidden_size || value.len() != self.config.hidden_size {
            return Err(Error::Shape(format!(
                "token width {}/{} does not match hidden size {}",
                key.len(),
                value.len(),
                self.config.hidden_size
            )));
        }
        if layer >= self.layers.len() {
            return Err(Error::Config(format!("layer {layer} out of range")));
        }
        let entry = &mut self.layers[layer];
        entry.keys.push_row(key, &self.codebook)?;
        entry.values.push_row(value, &self.codebook)?;
        Ok(())
    }

    /// Dequantize a layer into padded working matrices. Rows past `valid_len`
    /// are zero-filled; the store is not modified or padded.
    pub fn materialize(&self, layer: usize) -> Result<Materialized<T>> {
        let entry = self.layer(layer)?;
        let valid_len = entry.token_count();
        if valid_len == 0 {
            return Err(Error::State(format!("layer {layer} is empty")));
        }
        let l_pad = padded_len(valid_len, self.config.pad_multiple);
        let mut keys = Matrix::zeros(l_pad, self.config.hidden_size);
        let mut values = Matrix::zeros(l_pad, self.config.hidden_size);
        for i in 0..valid_len {
            keys.row_mut(i).copy_from_slice(&entry.keys.decode_row(i, &self.codebook)?);
            values.row_mut(i).copy_from_slice(&entry.values.decode_row(i, &self.codebook)?);
        }
        Ok(Materialized { keys, values, valid_len })
    }

    /// Exact bytes held by the store across all layers: per layer,
    /// 2 x token_count x (ceil(d/2) index bytes + ceil(d/B) x 4 scale bytes).
    pub fn memory_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.stored_bytes()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode_tensor;
    use crate::rng;
    use proptest::prelude::*;

    fn config(layers: usize, d: usize, heads: usize, block: usize) -> KvCacheConfig {
        KvCacheConfig::new(layers, d, heads, block, 4).unwrap()
    }

    #[test]
    fn new_cache_is_empty_per_layer() {
        let cache = KvCache::<f64>::new(config(32, 64, 4, 16)).unwrap();
        assert_eq!(cache.num_layers(), 32);
        for layer in 0..32 {
            assert_eq!(cache.token_count(layer).unwrap(), 0);
        }
        assert_eq!(cache.memory_bytes(), 0);
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        assert!(matches!(KvCacheConfig::new(1, 65, 4, 16, 4), Err(Error::Config(_))));
        assert!(matches!(KvCacheConfig::new(0, 64, 4, 16, 4), Err(Error::Config(_))));
    }

    #[test]
    fn prefill_counts_tokens() {
        let mut cache = KvCache::<f64>::new(config(2, 32, 2, 8)).unwrap();
        let mut r = rng::seeded(1);
        let k = rng::normal_matrix(&mut r, 8, 32, 1.0);
        let v = rng::normal_matrix(&mut r, 8, 32, 1.0);
        cache.append_prefill(0, &k, &v).unwrap();
        assert_eq!(cache.token_count(0).unwrap(), 8);
        assert_eq!(cache.token_count(1).unwrap(), 0);
    }

    #[test]
    fn store_equals_direct_encode_decode() {
        let mut cache = KvCache::<f64>::new(config(1, 32, 2, 8)).unwrap();
        let mut r = rng::seeded(2);
        let k = rng::normal_matrix(&mut r, 5, 32, 1.0);
        let v = rng::normal_matrix(&mut r, 5, 32, 1.0);
        cache.append_prefill(0, &k, &v).unwrap();
        let m = cache.materialize(0).unwrap();
        let direct = decode_tensor(
            &crate::codec::encode_tensor(&k, 8, cache.codebook()).unwrap(),
            cache.codebook(),
        )
        .unwrap();
        assert_eq!(m.keys.row_slice(0, 5), direct);
    }

    #[test]
    fn prefill_equals_token_appends_bytewise() {
        let cfg = config(1, 64, 4, 16);
        let mut r = rng::seeded(3);
        let k = rng::normal_matrix::<f64>(&mut r, 16, 64, 1.0);
        let v = rng::normal_matrix::<f64>(&mut r, 16, 64, 1.0);

        let mut bulk = KvCache::<f64>::new(cfg.clone()).unwrap();
        bulk.append_prefill(0, &k, &v).unwrap();

        let mut steps = KvCache::<f64>::new(cfg).unwrap();
        for i in 0..16 {
            steps.append_token(0, k.row(i), v.row(i)).unwrap();
        }

        assert_eq!(bulk.layer(0).unwrap(), steps.layer(0).unwrap());
    }

    #[test]
    fn append_preserves_prior_bytes() {
        let mut cache = KvCache::<f64>::new(config(1, 32, 2, 8)).unwrap();
        let mut r = rng::seeded(4);
        let k1: Vec<f64> = rng::normal_vec(&mut r, 32);
        let v1: Vec<f64> = rng::normal_vec(&mut r, 32);
        cache.append_token(0, &k1, &v1).unwrap();
        let before = (
            cache.layer(0).unwrap().keys().packed().to_vec(),
            cache.layer(0).unwrap().keys().scales().to_vec(),
        );
        let k2: Vec<f64> = rng::normal_vec(&mut r, 32);
        let v2: Vec<f64> = rng::normal_vec(&mut r, 32);
        cache.append_token(0, &k2, &v2).unwrap();
        let keys = cache.layer(0).unwrap().keys();
        assert_eq!(&keys.packed()[..before.0.len()], before.0.as_slice());
        assert_eq!(&keys.scales()[..before.1.len()], before.1.as_slice());
        assert_eq!(cache.token_count(0).unwrap(), 2);
    }

    #[test]
    fn materialize_pads_to_multiple() {
        let mut cache = KvCache::<f64>::new(config(1, 32, 2, 8)).unwrap();
        let mut r = rng::seeded(5);
        let k: Vec<f64> = rng::normal_vec(&mut r, 32);
        cache.append_token(0, &k, &k).unwrap();
        let m = cache.materialize(0).unwrap();
        assert_eq!(m.valid_len, 1);
        assert_eq!(m.keys.rows(), 16);
        for i in 1..16 {
            assert!(m.keys.row(i).iter().all(|&x| x == 0.0));
            assert!(m.values.row(i).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn padded_len_cases() {
        assert_eq!(padded_len(1, 16), 16);
        assert_eq!(padded_len(32, 16), 32);
        assert_eq!(padded_len(338, 16), 352);
        assert_eq!(padded_len(17, 16), 32);
        assert_eq!(padded_len(5, 1), 5);
    }

    #[test]
    fn materialize_does_not_change_stored_bytes() {
        let mut cache = KvCache::<f64>::new(config(1, 32, 2, 8)).unwrap();
        let mut r = rng::seeded(6);
        let k: Vec<f64> = rng::normal_vec(&mut r, 32);
        cache.append_token(0, &k, &k).unwrap();
        let before = cache.memory_bytes();
        let _ = cache.materialize(0).unwrap();
        let _ = cache.materialize(0).unwrap();
        assert_eq!(cache.memory_bytes(), before);
    }

    #[test]
    fn memory_bytes_formula() {
        // 1 layer, 1 token, d=256, B=256: 2 x (128 + 4) = 264
        let mut cache = KvCache::<f64>::new(config(1, 256, 4, 256)).unwrap();
        assert_eq!(cache.memory_bytes(), 0);
        let mut r = rng::seeded(7);
        let k: Vec<f64> = rng::normal_vec(&mut r, 256);
        cache.append_token(0, &k, &k).unwrap();
        assert_eq!(cache.memory_bytes(), 264);
        assert_eq!(cache.config().effective_bits_per_element(), 4.125);
    }

    #[test]
    fn empty_layer_cannot_materialize() {
        let cache = KvCache::<f64>::new(config(1, 32, 2, 8)).unwrap();
        assert!(matches!(cache.materialize(0), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatches_rejected() {
        let mut cache = KvCache::<f64>::new(config(1, 32, 2, 8)).unwrap();
        let m16 = Matrix::<f64>::zeros(2, 16);
        let m32 = Matrix::<f64>::zeros(2, 32);
        assert!(matches!(cache.append_prefill(0, &m16, &m16), Err(Error::Shape(_))));
        assert!(matches!(cache.append_prefill(0, &m32, &m16), Err(Error::Shape(_))));
        assert!(matches!(cache.append_token(0, &[0.0; 16], &[0.0; 16]), Err(Error::Shape(_))));
        assert!(matches!(cache.append_token(1, &[0.0; 32], &[0.0; 32]), Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn streaming_split_is_invisible(split in 0usize..=12, seed in 0u64..500) {
            let cfg = config(1, 32, 2, 8);
            let mut r = rng::seeded(seed);
            let k = rng::normal_matrix::<f64>(&mut r, 12, 32, 1.0);
            let v = rng::normal_matrix::<f64>(&mut r, 12, 32, 1.0);

            let mut full = KvCache::<f64>::new(cfg.clone()).unwrap();
            full.append_prefill(0, &k, &v).unwrap();

            let mut mixed = KvCache::<f64>::new(cfg).unwrap();
            if split > 0 {
                mixed
                    .append_prefill(0, &k.row_slice(0, split), &v.row_slice(0, split))
                    .unwrap();
            }
            for i in split..12 {
                mixed.append_token(0, k.row(i), v.row(i)).unwrap();
            }
            prop_assert_eq!(full.layer(0).unwrap(), mixed.layer(0).unwrap());
        }

        #[test]
        fn appends_extend_byte_prefix(extra in 1usize..4, seed in 0u64..500) {
            let mut cache = KvCache::<f64>::new(config(1, 16, 2, 8)).unwrap();
            let mut r = rng::seeded(seed);
            let k: Vec<f64> = rng::normal_vec(&mut r, 16);
            cache.append_token(0, &k, &k).unwrap();
            let snap_packed = cache.layer(0).unwrap().keys().packed().to_vec();
            let snap_scales = cache.layer(0).unwrap().keys().scales().to_vec();
            for _ in 0..extra {
                let t: Vec<f64> = rng::normal_vec(&mut r, 16);
                cache.append_token(0, &t, &t).unwrap();
            }
            let keys = cache.layer(0).unwrap().keys();
            prop_assert_eq!(&keys.packed()[..snap_packed.len()], snap_packed.as_slice());
            prop_assert_eq!(&keys.scales()[..snap_scales.len()], snap_scales.as_slice());
        }
    }
}
