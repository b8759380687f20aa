//! Block-wise absmax quantization against a codebook.
//!
//! Quantization scheme, per block:
//!   scale      = max(|x|)                  (stored as IEEE-754 f32)
//!   index[i]   = nearest codepoint to x[i]/scale, ties toward the lower index
//!   dequant[i] = scale * codepoint[index[i]]
//! A zero scale stores the zero codepoint's index everywhere and skips the
//! division entirely.
//!
//! Tensors quantize each token row independently in `ceil(cols/block_size)`
//! contiguous blocks (the final block may be ragged) and nibble-pack the
//! indices row by row: element 2i sits in the low nibble and element 2i+1 in
//! the high nibble of byte i of the row, with odd row widths padding the last
//! nibble with the zero codepoint's index. Rows are therefore self-contained
//! byte runs, which is what makes the cache append-only at the byte level.

use crate::codebook::Codebook;
use crate::matrix::Matrix;
use crate::{Error, Result, Scalar};

/// One quantized block: an f32 absmax scale plus one codepoint index per element.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub scale: f32,
    pub indices: Vec<u8>,
}

/// Quantize one block of values against `cb`.
pub fn quantize_block<T: Scalar>(values: &[T], cb: &Codebook<T>) -> Result<QuantizedBlock> {
    if values.is_empty() {
        return Err(Error::Domain("cannot quantize an empty block".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("block contains non-finite values".into()));
    }
    let absmax = values.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let scale = absmax.as_f32();
    if !scale.is_finite() {
        return Err(Error::Data(format!("block absmax {absmax} exceeds the f32 scale range")));
    }
    if scale == 0.0 {
        return Ok(QuantizedBlock {
            scale: 0.0,
            indices: vec![cb.zero_index() as u8; values.len()],
        });
    }
    let s = T::from_f32(scale);
    let indices = values.iter().map(|&v| cb.nearest_index(v / s) as u8).collect();
    Ok(QuantizedBlock { scale, indices })
}

/// Expand a quantized block back to values: `scale * codepoint[index]`.
pub fn dequantize_block<T: Scalar>(qb: &QuantizedBlock, cb: &Codebook<T>) -> Result<Vec<T>> {
    let s = T::from_f32(qb.scale);
    let cps = cb.codepoints();
    qb.indices
        .iter()
        .map(|&i| {
            cps.get(i as usize)
                .map(|&c| s * c)
                .ok_or_else(|| {
                    Error::Corruption(format!(
                        "index {i} out of range for a {}-bit codebook",
                        cb.bits()
                    ))
                })
        })
        .collect()
}

/// Pack 4-bit indices two per byte, low nibble first; an odd count pads the
/// final high nibble with `pad`.
pub fn pack_nibbles(indices: &[u8], pad: u8) -> Vec<u8> {
    debug_assert!(indices.iter().all(|&i| i < 16) && pad < 16);
    let mut out = Vec::with_capacity(indices.len().div_ceil(2));
    let mut chunks = indices.chunks_exact(2);
    for pair in &mut chunks {
        out.push(pair[0] | (pair[1] << 4));
    }
    if let [last] = chunks.remainder() {
        out.push(last | (pad << 4));
    }
    out
}

/// Recover `count` 4-bit indices from packed bytes.
pub fn unpack_nibbles(bytes: &[u8], count: usize) -> Vec<u8> {
    debug_assert!(count <= bytes.len() * 2);
    let mut out = Vec::with_capacity(count);
    for (i, &b) in bytes.iter().enumerate() {
        out.push(b & 0x0F);
        if 2 * i + 1 < count {
            out.push(b >> 4);
        }
    }
    out.truncate(count);
    out
}

/// A quantized `rows x cols` activation matrix: per-row per-block f32 scales
/// plus nibble-packed codepoint indices. Rows can only be appended, never
/// rewritten, so previously stored bytes are stable for the cache's lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    block_size: usize,
    bits: u8,
    codebook_id: String,
    scales: Vec<f32>,
    packed: Vec<u8>,
}

impl QuantizedTensor {
    /// An empty tensor ready to receive rows quantized against `cb`.
    pub fn empty<T: Scalar>(cols: usize, block_size: usize, cb: &Codebook<T>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Shape("tensor must have at least one column".into()));
        }
        if block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        if cb.bits() > 4 {
            return Err(Error::Config(format!(
                "the nibble-packed tensor layout holds at most 4-bit indices, got {} bits",
                cb.bits()
            )));
        }
        Ok(QuantizedTensor {
            rows: 0,
            cols,
            block_size,
            bits: cb.bits(),
            codebook_id: cb.id().to_string(),
            scales: Vec::new(),
            packed: Vec::new(),
        })
    }

    /// Quantize one row and append it.
    pub fn push_row<T: Scalar>(&mut self, row: &[T], cb: &Codebook<T>) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::Shape(format!(
                "row of width {} appended to a {}-column tensor",
                row.len(),
                self.cols
            )));
        }
        if cb.id() != self.codebook_id {
            return Err(Error::Config(format!(
                "tensor is bound to codebook {:?}, got {:?}",
                self.codebook_id,
                cb.id()
            )));
        }
        let mut indices = Vec::with_capacity(self.cols);
        for block in row.chunks(self.block_size) {
            let qb = quantize_block(block, cb)?;
            self.scales.push(qb.scale);
            indices.extend_from_slice(&qb.indices);
        }
        self.packed.extend_from_slice(&pack_nibbles(&indices, cb.zero_index() as u8));
        self.rows += 1;
        Ok(())
    }

    /// Dequantize row `i`.
    pub fn decode_row<T: Scalar>(&self, i: usize, cb: &Codebook<T>) -> Result<Vec<T>> {
        if cb.id() != self.codebook_id {
            return Err(Error::Config(format!(
                "tensor is bound to codebook {:?}, got {:?}",
                self.codebook_id,
                cb.id()
            )));
        }
        let bpr = self.bytes_per_row();
        let indices = unpack_nibbles(&self.packed[i * bpr..(i + 1) * bpr], self.cols);
        let row_scales = &self.scales[i * self.blocks_per_row()..(i + 1) * self.blocks_per_row()];
        let cps = cb.codepoints();
        let mut out = Vec::with_capacity(self.cols);
        for (j, &idx) in indices.iter().enumerate() {
            let c = *cps.get(idx as usize).ok_or_else(|| {
                Error::Corruption(format!(
                    "row {i} col {j}: index {idx} out of range for a {}-bit codebook",
                    self.bits
                ))
            })?;
            out.push(T::from_f32(row_scales[j / self.block_size]) * c);
        }
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn codebook_id(&self) -> &str {
        &self.codebook_id
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn blocks_per_row(&self) -> usize {
        self.cols.div_ceil(self.block_size)
    }

    pub fn bytes_per_row(&self) -> usize {
        self.cols.div_ceil(2)
    }

    /// Exact bytes held by the store: packed nibbles plus 4 bytes per scale.
    pub fn stored_bytes(&self) -> u64 {
        self.packed.len() as u64 + 4 * self.scales.len() as u64
    }

    /// Reassemble a tensor from decoded parts, validating the layout invariants.
    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        block_size: usize,
        bits: u8,
        codebook_id: String,
        scales: Vec<f32>,
        packed: Vec<u8>,
    ) -> Result<Self> {
        if cols == 0 || block_size == 0 || !(2..=4).contains(&bits) {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "invalid tensor header: cols={cols}, block_size={block_size}, bits={bits}"
                ),
            });
        }
        let want_scales = rows * cols.div_ceil(block_size);
        if scales.len() != want_scales {
            return Err(Error::Corruption(format!(
                "tensor holds {} scales, expected {want_scales}",
                scales.len()
            )));
        }
        let want_packed = rows * cols.div_ceil(2);
        if packed.len() != want_packed {
            return Err(Error::Corruption(format!(
                "tensor holds {} packed bytes, expected {want_packed}",
                packed.len()
            )));
        }
        Ok(QuantizedTensor { rows, cols, block_size, bits, codebook_id, scales, packed })
    }
}

/// Quantize an `l x d` matrix row-blockwise against `cb`.
pub fn encode_tensor<T: Scalar>(
    m: &Matrix<T>,
    block_size: usize,
    cb: &Codebook<T>,
) -> Result<QuantizedTensor> {
    if m.rows() == 0 {
        return Err(Error::Shape("tensor must have at least one row".into()));
    }
    if !m.is_finite() {
        return Err(Error::Data("tensor contains non-finite entries".into()));
    }
    let mut qt = QuantizedTensor::empty(m.cols(), block_size, cb)?;
    for i in 0..m.rows() {
        qt.push_row(m.row(i), cb)?;
    }
    Ok(qt)
}

/// Dequantize a whole tensor back to an `l x d` matrix.
pub fn decode_tensor<T: Scalar>(qt: &QuantizedTensor, cb: &Codebook<T>) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(qt.rows(), qt.cols());
    for i in 0..qt.rows() {
        let row = qt.decode_row(i, cb)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}
