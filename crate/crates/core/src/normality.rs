//! The statistical evidence behind the quantile codebook: standardization,
//! Q-Q points and the D'Agostino-Pearson omnibus normality test, applied per
//! token row or per block.
//!
//! The K² statistic combines the D'Agostino (1970) skewness z-transform with
//! the Anscombe-Glynn (1983) kurtosis z-transform; under normality K² is
//! chi-squared with 2 degrees of freedom, so the p-value has the closed form
//! exp(-K²/2). The moment conventions match scipy's `normaltest` (biased
//! n-divisor moments inside the transforms); correctness is accepted via the
//! Monte Carlo calibration tests rather than formula transcription alone.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::normal::normal_quantile;
use crate::{Error, Result, Scalar};

/// Outcome of a D'Agostino-Pearson test on one block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalityReport {
    pub block_index: usize,
    pub n: usize,
    pub skew_z: f64,
    pub kurt_z: f64,
    pub k2: f64,
    pub p_value: f64,
    pub normal_at_alpha: bool,
}

/// Shift to mean 0 and scale to sample standard deviation 1 (n-1 divisor).
pub fn standardize<T: Scalar>(sample: &[T]) -> Result<Vec<T>> {
    if sample.len() < 2 {
        return Err(Error::SampleSize(format!(
            "standardize needs at least 2 values, got {}",
            sample.len()
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("sample contains non-finite values".into()));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().fold(0.0, |a, &v| a + v.as_f64()) / n;
    let ss = sample.iter().fold(0.0, |a, &v| {
        let d = v.as_f64() - mean;
        a + d * d
    });
    let sd = (ss / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateData("sample is constant".into()));
    }
    Ok(sample.iter().map(|&v| T::from_f64((v.as_f64() - mean) / sd)).collect())
}

/// Q-Q points: sorted standardized sample against normal quantiles at the
/// plotting positions (i + 1/2)/n.
pub fn qq_points<T: Scalar>(sample: &[T]) -> Result<Vec<(T, T)>> {
    if sample.len() < 3 {
        return Err(Error::SampleSize(format!(
            "qq_points needs at least 3 values, got {}",
            sample.len()
        )));
    }
    let mut empirical = standardize(sample)?;
    empirical.sort_by(|a, b| a.partial_cmp(b).expect("standardized values are finite"));
    let n = empirical.len();
    empirical
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let p = (i as f64 + 0.5) / n as f64;
            Ok((T::from_f64(normal_quantile(p)?), e))
        })
        .collect()
}

/// D'Agostino-Pearson omnibus normality test.
pub fn dap_test<T: Scalar>(sample: &[T], alpha: f64) -> Result<NormalityReport> {
    let n = sample.len();
    if n < 20 {
        return Err(Error::SampleSize(format!(
            "the kurtosis z-transform needs n >= 20, got {n}"
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("sample contains non-finite values".into()));
    }
    let nf = n as f64;
    let mean = sample.iter().fold(0.0, |a, &v| a + v.as_f64()) / nf;
    let (mut m2, mut m3, mut m4) = (0.0f64, 0.0f64, 0.0f64);
    for &v in sample {
        let d = v.as_f64() - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 == 0.0 {
        return Err(Error::DegenerateData("sample has zero variance".into()));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);

    let skew_z = skewness_z(skew, nf);
    let kurt_z = kurtosis_z(kurt, nf);
    let k2 = skew_z * skew_z + kurt_z * kurt_z;
    // chi-squared(2) survival function
    let p_value = (-k2 / 2.0).exp();
    Ok(NormalityReport {
        block_index: 0,
        n,
        skew_z,
        kurt_z,
        k2,
        p_value,
        normal_at_alpha: p_value > alpha,
    })
}

/// D'Agostino (1970) transform of sample skewness to an approximate z score.
fn skewness_z(skew: f64, n: f64) -> f64 {
    let y = skew * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = (2.0 * (beta2 - 1.0)).sqrt() - 1.0;
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    delta * (y / alpha).asinh()
}

/// Anscombe-Glynn (1983) transform of sample kurtosis to an approximate z score.
fn kurtosis_z(kurt: f64, n: f64) -> f64 {
    let eb2 = 3.0 * (n - 1.0) / (n + 1.0);
    let vb2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    let x = (kurt - eb2) / vb2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let t1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    // cbrt carries the sign of a negative denominator
    let t2 = ((1.0 - 2.0 / a) / denom).cbrt();
    (t1 - t2) / (2.0 / (9.0 * a)).sqrt()
}

/// Which sample each block contributes to the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSelector {
    /// Test the blocks of a single token row.
    Row(usize),
    /// Pool each block's columns across every token row.
    Pooled,
}

/// Run the DAP test block by block over an `l x d` matrix, emitting one
/// report row per block.
pub fn block_normality_report<T: Scalar>(
    matrix: &Matrix<T>,
    block_size: usize,
    alpha: f64,
    selector: TokenSelector,
) -> Result<Vec<NormalityReport>> {
    if block_size < 20 {
        return Err(Error::SampleSize(format!(
            "block size {block_size} is below the DAP validity floor of 20"
        )));
    }
    if let TokenSelector::Row(row) = selector {
        if row >= matrix.rows() {
            return Err(Error::Shape(format!(
                "token row {row} out of range for {} rows",
                matrix.rows()
            )));
        }
    }
    let num_blocks = matrix.cols().div_ceil(block_size);
    let mut reports = Vec::with_capacity(num_blocks);
    for b in 0..num_blocks {
        let start = b * block_size;
        let end = ((b + 1) * block_size).min(matrix.cols());
        let sample: Vec<T> = match selector {
            TokenSelector::Row(row) => matrix.row(row)[start..end].to_vec(),
            TokenSelector::Pooled => {
                let mut pooled = Vec::with_capacity((end - start) * matrix.rows());
                for i in 0..matrix.rows() {
                    pooled.extend_from_slice(&matrix.row(i)[start..end]);
                }
                pooled
            }
        };
        let mut report = dap_test(&sample, alpha)?;
        report.block_index = b;
        reports.push(report);
    }
    Ok(reports)
}

/// Aligned-text rendering of per-block reports (block, p-value, > alpha?).
pub fn render_report_table(reports: &[NormalityReport], alpha: f64) -> String {
    let mut out = format!("{:<8}{:<12}>{alpha}?\n", "block", "pvalue");
    for r in reports {
        out.push_str(&format!(
            "{:<8}{:<12.5}{}\n",
            r.block_index,
            r.p_value,
            if r.normal_at_alpha { "yes" } else { "no" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::oracle::quantile_oracle;
    use crate::rng;

    #[test]
    fn standardize_two_points() {
        let s = standardize(&[-1.0f64, 1.0]).unwrap();
        // sample std of {-1, 1} is sqrt(2), so values map to +-1/sqrt(2)
        let e = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s[0] + e).abs() < 1e-15 && (s[1] - e).abs() < 1e-15);
    }

    #[test]
    fn standardize_is_affine_invariant_and_idempotent() {
        let mut r = rng::seeded(1);
        let x: Vec<f64> = rng::normal_vec(&mut r, 512);
        let shifted: Vec<f64> = x.iter().map(|v| 3.0 * v + 7.0).collect();
        let a = standardize(&x).unwrap();
        let b = standardize(&shifted).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-9);
        }
        let again = standardize(&a).unwrap();
        for (p, q) in a.iter().zip(&again) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_of_standard_sample_is_gentle() {
        let mut r = rng::seeded(2);
        let x: Vec<f64> = rng::normal_vec(&mut r, 4096);
        let s = standardize(&x).unwrap();
        let mean_shift: f64 =
            x.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
        assert!(mean_shift < 0.05, "mean shift {mean_shift}");
    }

    #[test]
    fn standardize_rejects_degenerate_input() {
        assert!(matches!(standardize(&[1.0f64]), Err(Error::SampleSize(_))));
        assert!(matches!(standardize(&[2.0f64; 8]), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn qq_theoretical_is_antisymmetric_and_increasing() {
        let mut r = rng::seeded(3);
        let x: Vec<f64> = rng::normal_vec(&mut r, 101);
        let pts = qq_points(&x).unwrap();
        let n = pts.len();
        for i in 0..n {
            assert!((pts[i].0 + pts[n - 1 - i].0).abs() < 1e-12);
            if i > 0 {
                assert!(pts[i].0 > pts[i - 1].0);
            }
        }
    }

    #[test]
    fn qq_fixed_point_when_sample_sits_on_quantiles() {
        let n = 256;
        let sample: Vec<f64> =
            (0..n).map(|i| quantile_oracle((i as f64 + 0.5) / n as f64)).collect();
        let pts = qq_points(&sample).unwrap();
        for (theo, emp) in pts {
            // standardization rescales slightly; the points stay on y = x
            assert!((theo - emp).abs() < 0.02, "{theo} vs {emp}");
        }
    }

    #[test]
    fn qq_slope_near_one_for_normal_sample() {
        let mut r = rng::seeded(4);
        let x: Vec<f64> = rng::normal_vec(&mut r, 4096);
        let pts = qq_points(&x).unwrap();
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for &(t, e) in &pts {
            sxx += t * t;
            sxy += t * e;
        }
        let slope = sxy / sxx;
        assert!((0.97..=1.03).contains(&slope), "slope {slope}");
    }

    #[test]
    fn dap_zero_k2_means_p_one() {
        // p = exp(-K^2/2) at K^2 = 0
        assert_eq!((-0.0f64 / 2.0).exp(), 1.0);
        let mut r = rng::seeded(5);
        let x: Vec<f64> = rng::normal_vec(&mut r, 4096);
        let rep = dap_test(&x, 0.05).unwrap();
        assert!((rep.p_value - (-rep.k2 / 2.0).exp()).abs() < 1e-12);
        assert!(rep.k2 >= 0.0);
        assert_eq!(rep.normal_at_alpha, rep.p_value > 0.05);
    }

    #[test]
    fn dap_is_affine_invariant() {
        let mut r = rng::seeded(6);
        let x: Vec<f64> = rng::normal_vec(&mut r, 1024);
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 7.0).collect();
        let a = dap_test(&x, 0.05).unwrap();
        let b = dap_test(&y, 0.05).unwrap();
        assert!((a.k2 - b.k2).abs() < 1e-9, "{} vs {}", a.k2, b.k2);
    }

    #[test]
    fn dap_calibration_on_normal_samples() {
        // trimmed-down version of the acceptance run
        let mut rejections = 0;
        let trials = 300;
        for seed in 0..trials {
            let mut r = rng::seeded(seed);
            let x: Vec<f64> = rng::normal_vec(&mut r, 4096);
            if !dap_test(&x, 0.05).unwrap().normal_at_alpha {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!((0.01..=0.10).contains(&rate), "rejection rate {rate}");
    }

    #[test]
    fn dap_rejects_uniform_samples() {
        let mut rejections = 0;
        for seed in 0..100 {
            let mut r = rng::seeded(seed);
            let x: Vec<f64> = rng::uniform_vec(&mut r, 4096);
            if dap_test(&x, 0.05).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections >= 99, "only {rejections}/100 uniform samples rejected");
    }

    #[test]
    fn dap_rejects_small_and_constant_samples() {
        assert!(matches!(dap_test(&[0.0f64; 19], 0.05), Err(Error::SampleSize(_))));
        assert!(matches!(dap_test(&[1.0f64; 64], 0.05), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn block_report_covers_all_blocks() {
        let mut r = rng::seeded(7);
        let m = Matrix::from_vec(1, 4096, rng::normal_vec::<f64>(&mut r, 4096)).unwrap();
        let reports = block_normality_report(&m, 256, 0.05, TokenSelector::Row(0)).unwrap();
        assert_eq!(reports.len(), 16);
        for (i, rep) in reports.iter().enumerate() {
            assert_eq!(rep.block_index, i);
            assert_eq!(rep.n, 256);
        }
        let table = render_report_table(&reports, 0.05);
        assert_eq!(table.lines().count(), 17);
    }

    #[test]
    fn contaminated_block_is_flagged() {
        let mut hits = 0;
        let trials = 60;
        for seed in 0..trials {
            let mut r = rng::seeded(seed);
            let mut row: Vec<f64> = rng::normal_vec(&mut r, 4096);
            // replace block 5 with uniform data spread wide enough to matter
            let uni: Vec<f64> = rng::uniform_vec(&mut r, 256);
            row[5 * 256..6 * 256].copy_from_slice(&uni);
            let m = Matrix::from_vec(1, 4096, row).unwrap();
            let reports = block_normality_report(&m, 256, 0.05, TokenSelector::Row(0)).unwrap();
            if !reports[5].normal_at_alpha {
                hits += 1;
            }
        }
        assert!(hits >= 59, "uniform block flagged in only {hits}/{trials} runs");
    }

    #[test]
    fn pooled_selector_uses_all_rows() {
        let mut r = rng::seeded(8);
        let m = Matrix::from_vec(4, 64, rng::normal_vec::<f64>(&mut r, 256)).unwrap();
        let reports = block_normality_report(&m, 32, 0.05, TokenSelector::Pooled).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].n, 128);
    }

    #[test]
    fn block_report_propagates_block_errors() {
        assert!(matches!(
            block_normality_report(&Matrix::<f64>::zeros(1, 64), 32, 0.05, TokenSelector::Row(0)),
            Err(Error::DegenerateData(_))
        ));
        assert!(matches!(
            block_normality_report(&Matrix::<f64>::zeros(1, 64), 8, 0.05, TokenSelector::Row(0)),
            Err(Error::SampleSize(_))
        ));
    }
}
