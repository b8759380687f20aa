//! Multi-head attention prefill and decode against the quantized cache.
//!
//! Both phases see the same quantized world: keys and values go through the
//! cache before any attention math, so decode step 1 on a fresh prompt and
//! prefill agree about what the cache contains. Padded rows get -inf logits
//! ahead of the max-subtracted softmax, making their weights exactly zero;
//! since every sum also runs in a fixed ascending order, outputs are
//! bit-identical whichever pad multiple the cache uses.

use crate::cache::KvCache;
use crate::matrix::{dot, row_times_matrix, Matrix};
use crate::{Error, Result, Scalar};

/// Query/key/value projection weights of one decoder layer, each `d x d`.
#[derive(Debug, Clone)]
pub struct AttentionWeights<T> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn new(query: Matrix<T>, key: Matrix<T>, value: Matrix<T>) -> Result<Self> {
        let d = query.rows();
        for (name, m) in [("query", &query), ("key", &key), ("value", &value)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Shape(format!(
                    "{name} weights must be {d}x{d}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::Data(format!("{name} weights contain non-finite entries")));
            }
        }
        Ok(AttentionWeights { query, key, value })
    }

    pub fn hidden_size(&self) -> usize {
        self.query.rows()
    }
}

/// Result of one decode step: the attention output row plus the per-head
/// weights over valid (unpadded) positions.
#[derive(Debug, Clone)]
pub struct DecodeOutput<T> {
    pub output: Vec<T>,
    pub attn_weights: Option<Vec<Vec<T>>>,
}

/// `(XW_Q, XW_K, XW_V)`, no biases.
pub fn project_qkv<T: Scalar>(
    x: &Matrix<T>,
    w: &AttentionWeights<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    Ok((x.matmul(&w.query)?, x.matmul(&w.key)?, x.matmul(&w.value)?))
}

/// Process a whole prompt: project, quantize K/V into the cache, then run
/// causal multi-head attention over the dequantized store.
pub fn prefill<T: Scalar>(
    x: &Matrix<T>,
    w: &AttentionWeights<T>,
    cache: &mut KvCache<T>,
    layer: usize,
) -> Result<Matrix<T>> {
    if cache.token_count(layer)? != 0 {
        return Err(Error::State(format!("prefill requires an empty layer, layer {layer} holds tokens")));
    }
    let (q, k, v) = project_qkv(x, w)?;
    cache.append_prefill(layer, &k, &v)?;
    let mat = cache.materialize(layer)?;
    let num_heads = cache.config().num_heads;

    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        // Causal mask: row i sees positions 0..=i.
        let (row, _) = attend_single(q.row(i), &mat.keys, &mat.values, num_heads, i + 1)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// One decode step: project the token, append its quantized key/value (the
/// new token attends to itself), then attend over the padded working copy.
pub fn decode_step<T: Scalar>(
    token: &[T],
    w: &AttentionWeights<T>,
    cache: &mut KvCache<T>,
    layer: usize,
) -> Result<DecodeOutput<T>> {
    let d = cache.config().hidden_size;
    if token.len() != d {
        return Err(Error::Shape(format!("token width {} != hidden size {d}", token.len())));
    }
    if w.hidden_size() != d {
        return Err(Error::Shape(format!(
            "weights are {}x{} but hidden size is {d}",
            w.hidden_size(),
            w.hidden_size()
        )));
    }
    let t_q = row_times_matrix(token, &w.query)?;
    let t_k = row_times_matrix(token, &w.key)?;
    let t_v = row_times_matrix(token, &w.value)?;

    cache.append_token(layer, &t_k, &t_v)?;
    let mat = cache.materialize(layer)?;
    let (output, weights) =
        attend_single(&t_q, &mat.keys, &mat.values, cache.config().num_heads, mat.valid_len)?;
    Ok(DecodeOutput { output, attn_weights: Some(weights) })
}

/// Scaled dot-product attention of one query row against key/value matrices
/// whose rows past `valid_len` are padding. Returns the output row and the
/// per-head weights over valid positions.
///
/// Used verbatim by decode, prefill (with the causal prefix as `valid_len`)
/// and the unquantized reference paths in the benchmark, so all of them share
/// one accumulation order.
pub fn attend_single<T: Scalar>(
    q: &[T],
    keys: &Matrix<T>,
    values: &Matrix<T>,
    num_heads: usize,
    valid_len: usize,
) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    let d = q.len();
    if keys.cols() != d || values.cols() != d || keys.rows() != values.rows() {
        return Err(Error::Shape(format!(
            "query width {d} against keys {}x{} / values {}x{}",
            keys.rows(),
            keys.cols(),
            values.rows(),
            values.cols()
        )));
    }
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::Shape(format!("hidden size {d} not divisible into {num_heads} heads")));
    }
    let l_pad = keys.rows();
    if valid_len == 0 || valid_len > l_pad {
        return Err(Error::State(format!(
            "valid_len {valid_len} out of range for {l_pad} cached rows"
        )));
    }
    let head_dim = d / num_heads;
    let inv_sqrt = T::one() / T::from_usize(head_dim).sqrt();

    let mut output = vec![T::zero(); d];
    let mut head_weights = Vec::with_capacity(num_heads);
    let mut logits = vec![T::zero(); l_pad];
    let mut probs = vec![T::zero(); l_pad];

    for h in 0..num_heads {
        let off = h * head_dim;
        let q_h = &q[off..off + head_dim];

        for (j, logit) in logits.iter_mut().enumerate() {
            *logit = if j < valid_len {
                dot(q_h, &keys.row(j)[off..off + head_dim]) * inv_sqrt
            } else {
                T::neg_infinity()
            };
        }

        // Max-subtracted softmax; exp(-inf - max) is exactly zero, so padded
        // positions add nothing to the denominator or the output.
        let mut max = T::neg_infinity();
        for &l in &logits {
            max = max.max(l);
        }
        let mut denom = T::zero();
        for (p, &l) in probs.iter_mut().zip(&logits) {
            *p = (l - max).exp();
            denom = denom + *p;
        }
        for p in probs.iter_mut() {
            *p = *p / denom;
        }

        let out_h = &mut output[off..off + head_dim];
        for (j, &p) in probs.iter().enumerate() {
            let v_h = &values.row(j)[off..off + head_dim];
            for k in 0..head_dim {
                out_h[k] = out_h[k] + p * v_h[k];
            }
        }
        head_weights.push(probs[..valid_len].to_vec());
    }
    Ok((output, head_weights))
}
