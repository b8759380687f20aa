//! `nqkv` — the command-line surface over the quantization toolkit.
//!
//! Every subcommand prints machine-readable JSON to stdout; `--pretty` swaps
//! in an aligned human table. Exit codes: 0 on success, 2 on configuration
//! errors, 3 on data/format errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nqkv_core::bench::{
    error_benchmark, simulate_decode, BenchReport, CacheCodecKind, ErrorBenchConfig,
    SimulateConfig,
};
use nqkv_core::codebook::Codebook;
use nqkv_core::codec::{decode_tensor, encode_tensor};
use nqkv_core::io;
use nqkv_core::memory::{kv_memory_model, ModelSpec};
use nqkv_core::normality::{block_normality_report, render_report_table, TokenSelector};
use nqkv_core::rng::SampleDist;
use nqkv_core::{Error, Result};

#[derive(Parser)]
#[command(name = "nqkv", version, about = "Block-wise NormalFloat KV-cache quantization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Render a human-readable table instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the codepoints of a NormalFloat codebook.
    Codebook {
        #[arg(long, default_value_t = 4)]
        bits: u8,
        /// Emit JSON (the default output format).
        #[arg(long, conflicts_with = "pretty")]
        json: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Quantize a raw f32 tensor into a .nqt file.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output_path: PathBuf,
        #[arg(long, default_value_t = 256)]
        block_size: usize,
        #[arg(long, default_value_t = 4)]
        bits: u8,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Dequantize a .nqt file back into a raw f32 tensor.
    Dequantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output_path: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Per-block D'Agostino-Pearson normality report for a raw tensor.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 256)]
        block_size: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Token row whose blocks are tested (default 0).
        #[arg(long, conflicts_with = "pooled")]
        token: Option<usize>,
        /// Pool each block across all token rows instead.
        #[arg(long)]
        pooled: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// KV-cache memory footprint for a model spec.
    Memsize {
        /// JSON file holding the model description.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        batch: u64,
        #[arg(long)]
        seqlen: u64,
        /// Override the spec's cache bit width.
        #[arg(long)]
        kv_bits: Option<u32>,
        /// Override the spec's quantization block size.
        #[arg(long)]
        block_size: Option<u64>,
        /// Override the spec's per-block scale width in bits.
        #[arg(long)]
        scale_bits: Option<u32>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Codec round-trip error benchmark across distributions.
    Bench {
        #[arg(long, default_value_t = 1000)]
        blocks: usize,
        /// Number of consecutive seeds to run, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        block_size: usize,
        #[arg(long, default_value_t = 4)]
        bits: u8,
        /// Distributions to draw blocks from.
        #[arg(long = "dist", value_delimiter = ',', default_values_t =
            ["normal".to_string(), "uniform".to_string(), "laplace".to_string()])]
        distributions: Vec<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Synthetic decode-divergence simulation against an exact cache.
    Simulate {
        #[arg(long, default_value_t = 128)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 32)]
        prompt: usize,
        #[arg(long = "gen", default_value_t = 32)]
        gen_len: usize,
        /// Number of consecutive seeds to run, starting at --seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        block_size: usize,
        #[arg(long, default_value_t = 4)]
        bits: u8,
        #[arg(long, default_value_t = 16)]
        pad_multiple: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Codebook { bits, json: _, output } => {
            let cb = Codebook::<f64>::normal_float(bits)?;
            if output.pretty {
                println!("{:<7}{}", "index", "codepoint");
                for (i, c) in cb.codepoints().iter().enumerate() {
                    println!("{i:<7}{c:.10}");
                }
            } else {
                print_json(&serde_json::json!({
                    "bits": bits,
                    "codebook_id": cb.id(),
                    "codepoints": cb.codepoints(),
                }));
            }
            Ok(())
        }
        Command::Quantize { input, output_path, block_size, bits, output } => {
            let matrix = io::read_raw_tensor_file(&input)?;
            let cb = Codebook::<f32>::normal_float(bits)?;
            let qt = encode_tensor(&matrix, block_size, &cb)?;
            io::write_nqt_file(&output_path, &qt)?;
            let summary = serde_json::json!({
                "rows": qt.rows(),
                "cols": qt.cols(),
                "block_size": qt.block_size(),
                "bits": qt.bits(),
                "codebook_id": qt.codebook_id(),
                "stored_bytes": qt.stored_bytes(),
                "out": output_path,
            });
            if output.pretty {
                println!(
                    "quantized {}x{} -> {} ({} bytes stored)",
                    qt.rows(),
                    qt.cols(),
                    output_path.display(),
                    qt.stored_bytes()
                );
            } else {
                print_json(&summary);
            }
            Ok(())
        }
        Command::Dequantize { input, output_path, output } => {
            let qt = io::read_nqt_file(&input)?;
            let cb = Codebook::<f32>::from_id(qt.codebook_id())?;
            let matrix = decode_tensor(&qt, &cb)?;
            io::write_raw_tensor_file(&output_path, &matrix)?;
            if output.pretty {
                println!(
                    "dequantized {}x{} -> {}",
                    matrix.rows(),
                    matrix.cols(),
                    output_path.display()
                );
            } else {
                print_json(&serde_json::json!({
                    "rows": matrix.rows(),
                    "cols": matrix.cols(),
                    "codebook_id": qt.codebook_id(),
                    "out": output_path,
                }));
            }
            Ok(())
        }
        Command::Analyze { input, block_size, alpha, token, pooled, output } => {
            let matrix = io::read_raw_tensor_file(&input)?.map(|v| v as f64);
            let selector = if pooled {
                TokenSelector::Pooled
            } else {
                TokenSelector::Row(token.unwrap_or(0))
            };
            let reports = block_normality_report(&matrix, block_size, alpha, selector)?;
            if output.pretty {
                print!("{}", render_report_table(&reports, alpha));
            } else {
                print_json(&reports);
            }
            Ok(())
        }
        Command::Memsize { model, batch, seqlen, kv_bits, block_size, scale_bits, output } => {
            let text = std::fs::read_to_string(&model)?;
            let mut spec: ModelSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid model spec: {e}")))?;
            if let Some(bits) = kv_bits {
                spec.kv_bits = bits;
            }
            if let Some(block) = block_size {
                spec.kv_block_size = block;
            }
            if let Some(bits) = scale_bits {
                spec.scale_bits = bits;
            }
            let breakdown = kv_memory_model(&spec, batch, seqlen)?;
            if output.pretty {
                println!("model          {}", spec.name);
                println!("effective bits {:.4}", spec.kv_effective_bits());
                println!("kv bytes       {}", breakdown.kv_bytes);
                println!("weight bytes   {}", breakdown.weight_bytes);
                println!("kv fraction    {:.4}", breakdown.kv_fraction);
            } else {
                print_json(&serde_json::json!({
                    "model": spec,
                    "batch": batch,
                    "seqlen": seqlen,
                    "effective_kv_bits": spec.kv_effective_bits(),
                    "kv_bytes": breakdown.kv_bytes,
                    "weight_bytes": breakdown.weight_bytes,
                    "kv_fraction": breakdown.kv_fraction,
                }));
            }
            Ok(())
        }
        Command::Bench { blocks, seeds, seed, block_size, bits, distributions, output } => {
            let distributions = distributions
                .iter()
                .map(|name| SampleDist::parse(name))
                .collect::<Result<Vec<_>>>()?;
            let report = error_benchmark(&ErrorBenchConfig {
                block_size,
                bits,
                num_blocks: blocks,
                seeds: seed_range(seed, seeds),
                distributions,
            })?;
            emit_report(&report, output.pretty);
            Ok(())
        }
        Command::Simulate {
            d,
            heads,
            prompt,
            gen_len,
            seeds,
            seed,
            block_size,
            bits,
            pad_multiple,
            output,
        } => {
            let report = simulate_decode(
                &SimulateConfig {
                    hidden_size: d,
                    num_heads: heads,
                    prompt_len: prompt,
                    gen_len,
                    block_size,
                    bits,
                    pad_multiple,
                    seeds: seed_range(seed, seeds),
                },
                &CacheCodecKind::ALL,
            )?;
            emit_report(&report, output.pretty);
            Ok(())
        }
    }
}

fn seed_range(base: u64, count: u64) -> Vec<u64> {
    (base..base + count).collect()
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("reports serialize"));
}

fn emit_report(report: &BenchReport, pretty: bool) {
    if !pretty {
        print_json(report);
        return;
    }
    if let Some(sections) = &report.codec_error {
        println!("{:<12}{:<12}{:<14}{:<14}", "dist", "codec", "mean_rmse", "max_error");
        for section in sections {
            for stats in &section.codecs {
                println!(
                    "{:<12}{:<12}{:<14.6}{:<14.6}",
                    section.distribution, stats.codec, stats.mean_rmse, stats.max_error
                );
            }
        }
    }
    if let Some(sections) = &report.divergence {
        println!("{:<12}{:<18}{:<12}{}", "codec", "mean_divergence", "agreement", "cache_bytes");
        for section in sections {
            println!(
                "{:<12}{:<18.8}{:<12.3}{}",
                section.codec,
                section.mean_divergence,
                section.final_argmax_agreement,
                section.cache_memory_bytes.map_or("-".to_string(), |b| b.to_string())
            );
        }
    }
}
