//! File formats: quantized `.nqt` tensors, raw f32 tensors and full cache
//! snapshots. All multi-byte integers and floats are little-endian.
//!
//! `.nqt` layout:
//!   bytes 0..4   magic "NQKV"
//!   byte  4      format version (1); readers reject anything else
//!   bytes 5..9   u32 header length
//!   ...          UTF-8 JSON header {rows, cols, block_size, bits, codebook_id}
//!   ...          scales, f32 per block, row-major block order
//!   ...          nibble-packed indices, row-major
//!
//! Raw tensor layout: one JSON header line `{"rows":R,"cols":C}` terminated
//! by a newline, then R*C*4 bytes of row-major f32 payload.
//!
//! Snapshot layout: magic "NQKS", version byte 1, u32-prefixed JSON cache
//! config, u32 layer count, then per layer the keys and values `.nqt`
//! payloads, each with a u64 length prefix. Writing is deterministic, so a
//! load/save cycle reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::{KvCache, KvCacheConfig, LayerCache};
use crate::codebook::Codebook;
use crate::codec::QuantizedTensor;
use crate::matrix::Matrix;
use crate::{Error, Result, Scalar};

pub const NQT_MAGIC: [u8; 4] = *b"NQKV";
pub const NQT_VERSION: u8 = 1;
const SNAPSHOT_MAGIC: [u8; 4] = *b"NQKS";
const SNAPSHOT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct NqtHeader {
    rows: usize,
    cols: usize,
    block_size: usize,
    bits: u8,
    codebook_id: String,
}

/// Serialize a quantized tensor in the `.nqt` layout.
pub fn write_nqt<W: Write>(w: &mut W, qt: &QuantizedTensor) -> Result<()> {
    let header = NqtHeader {
        rows: qt.rows(),
        cols: qt.cols(),
        block_size: qt.block_size(),
        bits: qt.bits(),
        codebook_id: qt.codebook_id().to_string(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(&NQT_MAGIC)?;
    w.write_all(&[NQT_VERSION])?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    for s in qt.scales() {
        w.write_all(&s.to_le_bytes())?;
    }
    w.write_all(qt.packed())?;
    Ok(())
}

/// Parse a `.nqt` payload, validating magic, version and layout invariants.
pub fn read_nqt<R: Read>(r: &mut R) -> Result<QuantizedTensor> {
    let mut offset = 0u64;
    let magic = read_array::<4, R>(r, &mut offset, "magic")?;
    if magic != NQT_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad magic {magic:02x?}") });
    }
    let [version] = read_array::<1, R>(r, &mut offset, "version")?;
    if version != NQT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unknown format version {version}, expected {NQT_VERSION}"),
        });
    }
    let header_len = u32::from_le_bytes(read_array::<4, R>(r, &mut offset, "header length")?);
    let header_start = offset;
    let header_bytes = read_vec(r, &mut offset, header_len as usize, "JSON header")?;
    let header: NqtHeader = serde_json::from_slice(&header_bytes).map_err(|e| Error::Format {
        offset: header_start,
        message: format!("invalid JSON header: {e}"),
    })?;

    let num_scales = header
        .rows
        .checked_mul(header.cols.div_ceil(header.block_size.max(1)))
        .ok_or_else(|| Error::Range("scale count overflows".into()))?;
    let scale_bytes = read_vec(r, &mut offset, num_scales * 4, "scales")?;
    let scales: Vec<f32> = scale_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let packed_len = header.rows * header.cols.div_ceil(2);
    let packed = read_vec(r, &mut offset, packed_len, "packed indices")?;

    QuantizedTensor::from_parts(
        header.rows,
        header.cols,
        header.block_size,
        header.bits,
        header.codebook_id,
        scales,
        packed,
    )
}

pub fn write_nqt_file<P: AsRef<Path>>(path: P, qt: &QuantizedTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_nqt(&mut w, qt)?;
    w.flush()?;
    Ok(())
}

pub fn read_nqt_file<P: AsRef<Path>>(path: P) -> Result<QuantizedTensor> {
    read_nqt(&mut BufReader::new(File::open(path)?))
}

#[derive(Serialize, Deserialize)]
struct RawHeader {
    rows: usize,
    cols: usize,
}

/// Write a raw tensor: JSON header line plus little-endian f32 payload.
pub fn write_raw_tensor<W: Write>(w: &mut W, m: &Matrix<f32>) -> Result<()> {
    let header = serde_json::to_string(&RawHeader { rows: m.rows(), cols: m.cols() })
        .expect("header serializes");
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a raw tensor, validating the payload length against the header.
pub fn read_raw_tensor<R: Read>(r: &mut R) -> Result<Matrix<f32>> {
    // header line, capped so a binary file cannot make us buffer forever
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format {
                offset: line.len() as u64,
                message: "missing newline after JSON header".into(),
            });
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 65536 {
            return Err(Error::Format {
                offset: line.len() as u64,
                message: "header line exceeds 64 KiB".into(),
            });
        }
    }
    let header: RawHeader = serde_json::from_slice(&line).map_err(|e| Error::Format {
        offset: 0,
        message: format!("invalid JSON header: {e}"),
    })?;
    let payload_start = line.len() as u64 + 1;
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Range("payload size overflows".into()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Format {
            offset: payload_start,
            message: format!(
                "payload holds {} bytes, expected {expected} for {}x{}",
                payload.len(),
                header.rows,
                header.cols
            ),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Matrix::from_vec(header.rows, header.cols, data)
}

pub fn write_raw_tensor_file<P: AsRef<Path>>(path: P, m: &Matrix<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw_tensor(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_raw_tensor_file<P: AsRef<Path>>(path: P) -> Result<Matrix<f32>> {
    read_raw_tensor(&mut BufReader::new(File::open(path)?))
}

/// Write a full cache snapshot: config plus every layer's key/value tensors.
pub fn write_cache_snapshot<W: Write, T: Scalar>(w: &mut W, cache: &KvCache<T>) -> Result<()> {
    w.write_all(&SNAPSHOT_MAGIC)?;
    w.write_all(&[SNAPSHOT_VERSION])?;
    let config = serde_json::to_vec(cache.config()).expect("config serializes");
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&(cache.num_layers() as u32).to_le_bytes())?;
    for layer in 0..cache.num_layers() {
        let entry = cache.layer(layer)?;
        for tensor in [entry.keys(), entry.values()] {
            let mut block = Vec::new();
            write_nqt(&mut block, tensor)?;
            w.write_all(&(block.len() as u64).to_le_bytes())?;
            w.write_all(&block)?;
        }
    }
    Ok(())
}

/// Restore a cache snapshot; the codebook is rebuilt from the stored id.
pub fn read_cache_snapshot<R: Read, T: Scalar>(r: &mut R) -> Result<KvCache<T>> {
    let mut offset = 0u64;
    let magic = read_array::<4, R>(r, &mut offset, "magic")?;
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad magic {magic:02x?}") });
    }
    let [version] = read_array::<1, R>(r, &mut offset, "version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unknown snapshot version {version}, expected {SNAPSHOT_VERSION}"),
        });
    }
    let config_len = u32::from_le_bytes(read_array::<4, R>(r, &mut offset, "config length")?);
    let config_start = offset;
    let config_bytes = read_vec(r, &mut offset, config_len as usize, "JSON config")?;
    let config: KvCacheConfig =
        serde_json::from_slice(&config_bytes).map_err(|e| Error::Format {
            offset: config_start,
            message: format!("invalid JSON config: {e}"),
        })?;
    let layer_count = u32::from_le_bytes(read_array::<4, R>(r, &mut offset, "layer count")?);

    let mut codebook: Option<Codebook<T>> = None;
    let mut layers = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        let keys = read_snapshot_tensor(r, &mut offset)?;
        let values = read_snapshot_tensor(r, &mut offset)?;
        if keys.codebook_id() != values.codebook_id() {
            return Err(Error::Corruption(format!(
                "layer mixes codebooks {:?} and {:?}",
                keys.codebook_id(),
                values.codebook_id()
            )));
        }
        if codebook.is_none() {
            codebook = Some(Codebook::from_id(keys.codebook_id())?);
        }
        let cb = codebook.as_ref().expect("codebook was just populated");
        if keys.codebook_id() != cb.id() {
            return Err(Error::Corruption(format!(
                "snapshot mixes codebooks {:?} and {:?}",
                cb.id(),
                keys.codebook_id()
            )));
        }
        layers.push(LayerCache::from_tensors(keys, values)?);
    }
    let codebook = match codebook {
        Some(cb) => cb,
        None => Codebook::normal_float(config.bits)?,
    };
    KvCache::from_parts(config, codebook, layers)
}

fn read_snapshot_tensor<R: Read>(r: &mut R, offset: &mut u64) -> Result<QuantizedTensor> {
    let len = u64::from_le_bytes(read_array::<8, R>(r, offset, "tensor length")?);
    let block = read_vec(r, offset, len as usize, "tensor payload")?;
    read_nqt(&mut block.as_slice())
}

pub fn write_cache_snapshot_file<P: AsRef<Path>, T: Scalar>(
    path: P,
    cache: &KvCache<T>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cache_snapshot(&mut w, cache)?;
    w.flush()?;
    Ok(())
}

pub fn read_cache_snapshot_file<P: AsRef<Path>, T: Scalar>(path: P) -> Result<KvCache<T>> {
    read_cache_snapshot(&mut BufReader::new(File::open(path)?))
}

fn read_array<const N: usize, R: Read>(
    r: &mut R,
    offset: &mut u64,
    what: &str,
) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact_at(r, &mut buf, offset, what)?;
    Ok(buf)
}

fn read_vec<R: Read>(r: &mut R, offset: &mut u64, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    read_exact_at(r, &mut buf, offset, what)?;
    Ok(buf)
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::Format {
                offset: *offset + filled as u64,
                message: format!(
                    "truncated while reading {what}: expected {} bytes, got {filled}",
                    buf.len()
                ),
            });
        }
        filled += n;
    }
    *offset += buf.len() as u64;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_tensor;
    use crate::rng;

    fn sample_tensor() -> QuantizedTensor {
        let cb = Codebook::<f32>::normal_float(4).unwrap();
        let mut r = rng::seeded(1);
        let m = rng::normal_matrix::<f32>(&mut r, 6, 20, 1.0);
        encode_tensor(&m, 8, &cb).unwrap()
    }

    #[test]
    fn nqt_roundtrip_is_exact() {
        let qt = sample_tensor();
        let mut buf = Vec::new();
        write_nqt(&mut buf, &qt).unwrap();
        let back = read_nqt(&mut buf.as_slice()).unwrap();
        assert_eq!(back, qt);

        // writing the reread tensor reproduces the bytes
        let mut buf2 = Vec::new();
        write_nqt(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn nqt_golden_layout() {
        // 1x4 grid-aligned row at scale 1: values [1, -1, 0, 0.5] quantize to
        // indices [15, 0, 7, 12] -> nibbles 0x0F, 0xC7, scale bytes 1.0f32.
        let cb = Codebook::<f32>::normal_float(4).unwrap();
        let m = Matrix::from_vec(1, 4, vec![1.0f32, -1.0, 0.0, 0.5]).unwrap();
        let qt = encode_tensor(&m, 4, &cb).unwrap();
        let mut buf = Vec::new();
        write_nqt(&mut buf, &qt).unwrap();

        let header = br#"{"rows":1,"cols":4,"block_size":4,"bits":4,"codebook_id":"nf4"}"#;
        let mut expected = Vec::new();
        expected.extend_from_slice(b"NQKV");
        expected.push(1);
        expected.extend_from_slice(&(header.len() as u32).to_le_bytes());
        expected.extend_from_slice(header);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&[0x0F, 0xC7]);
        assert_eq!(buf, expected);
    }

    #[test]
    fn nqt_rejects_bad_magic_and_version() {
        let qt = sample_tensor();
        let mut buf = Vec::new();
        write_nqt(&mut buf, &qt).unwrap();

        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            read_nqt(&mut wrong_magic.as_slice()),
            Err(Error::Format { offset: 0, .. })
        ));

        let mut wrong_version = buf.clone();
        wrong_version[4] = 2;
        assert!(matches!(
            read_nqt(&mut wrong_version.as_slice()),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn nqt_reports_truncation_offset() {
        let qt = sample_tensor();
        let mut buf = Vec::new();
        write_nqt(&mut buf, &qt).unwrap();
        buf.truncate(buf.len() - 3);
        match read_nqt(&mut buf.as_slice()) {
            Err(Error::Format { message, .. }) => assert!(message.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn raw_tensor_roundtrip_and_length_check() {
        let mut r = rng::seeded(2);
        let m = rng::normal_matrix::<f32>(&mut r, 2, 3, 1.0);
        let mut buf = Vec::new();
        write_raw_tensor(&mut buf, &m).unwrap();
        let back = read_raw_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut short = buf.clone();
        short.truncate(buf.len() - 4);
        match read_raw_tensor(&mut short.as_slice()) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("expected 24"), "{message}");
                assert!(message.contains("20"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn raw_tensor_rejects_missing_header() {
        let garbage = [0u8; 16];
        assert!(matches!(
            read_raw_tensor(&mut garbage.as_slice()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn snapshot_roundtrip_is_byte_identical() {
        let cfg = KvCacheConfig::new(3, 32, 2, 8, 4).unwrap();
        let mut cache = KvCache::<f32>::new(cfg).unwrap();
        let mut r = rng::seeded(3);
        for layer in 0..3 {
            let k = rng::normal_matrix(&mut r, 4 + layer, 32, 1.0);
            let v = rng::normal_matrix(&mut r, 4 + layer, 32, 1.0);
            cache.append_prefill(layer, &k, &v).unwrap();
        }
        let mut buf = Vec::new();
        write_cache_snapshot(&mut buf, &cache).unwrap();
        let restored: KvCache<f32> = read_cache_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(restored.config(), cache.config());
        for layer in 0..3 {
            assert_eq!(restored.layer(layer).unwrap(), cache.layer(layer).unwrap());
        }
        let mut buf2 = Vec::new();
        write_cache_snapshot(&mut buf2, &restored).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn snapshot_preserves_uniform_codebooks() {
        let cfg = KvCacheConfig::new(1, 16, 2, 8, 4).unwrap();
        let mut cache =
            KvCache::<f64>::with_codebook(cfg, Codebook::uniform(4).unwrap()).unwrap();
        let mut r = rng::seeded(4);
        let k: Vec<f64> = rng::normal_vec(&mut r, 16);
        cache.append_token(0, &k, &k).unwrap();
        let mut buf = Vec::new();
        write_cache_snapshot(&mut buf, &cache).unwrap();
        let restored: KvCache<f64> = read_cache_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(restored.codebook().id(), "uniform4");
        assert_eq!(restored.layer(0).unwrap(), cache.layer(0).unwrap());
    }
}
