//! Empirical certification of outage and MSE-satisfaction guarantees.
//!
//! Sampling is split into a fixed number of chunks, each driven by its own
//! seeded substream, so the counts are identical whether the chunks run
//! sequentially or in parallel and regardless of thread scheduling.

use nalgebra::DVector;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::model::{
    compute_mse, compute_sinr, realize_broadcast_with_rng, realize_channels_with_rng, substream,
    BroadcastScenario, InterferenceScenario, ModelError,
};

/// Normal quantile for the 99% two-sided Wilson interval.
pub const WILSON_Z: f64 = 2.576;

/// Number of independent sampling substreams.
pub const N_CHUNKS: usize = 64;

/// Wilson score interval half-width at rate `r` from `n` samples.
pub fn wilson_halfwidth(r: f64, n: usize) -> f64 {
    let n = n as f64;
    let z = WILSON_Z;
    (z / (1.0 + z * z / n)) * (r * (1.0 - r) / n + z * z / (4.0 * n * n)).sqrt()
}

/// Per-user empirical violation rates with confidence half-widths.
#[derive(Debug, Clone)]
pub struct OutageReport {
    /// Empirical violation rate per user (outage for SINR, excess for MSE).
    pub rates: Vec<f64>,
    /// Wilson 99% half-width per user.
    pub half_widths: Vec<f64>,
    /// Allowed violation probability per user.
    pub targets: Vec<f64>,
    /// `rate_k <= target_k + half_width_k`.
    pub pass: Vec<bool>,
    pub n_samples: usize,
    pub seed: u64,
}

impl OutageReport {
    pub fn all_pass(&self) -> bool {
        self.pass.iter().all(|&b| b)
    }

    fn from_counts(counts: Vec<u64>, targets: Vec<f64>, n: usize, seed: u64) -> Self {
        let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let half_widths: Vec<f64> = rates.iter().map(|&r| wilson_halfwidth(r, n)).collect();
        let pass = rates
            .iter()
            .zip(&half_widths)
            .zip(&targets)
            .map(|((&r, &h), &t)| r <= t + h)
            .collect();
        OutageReport {
            rates,
            half_widths,
            targets,
            pass,
            n_samples: n,
            seed,
        }
    }
}

fn chunk_sizes(n: usize) -> Vec<usize> {
    (0..N_CHUNKS)
        .map(|i| n / N_CHUNKS + usize::from(i < n % N_CHUNKS))
        .collect()
}

fn outage_chunk(scenario: &InterferenceScenario, p: &[f64], n: usize, seed: u64) -> Vec<u64> {
    let mut rng = substream(seed, "interference-realization");
    let mut counts = vec![0u64; scenario.k_links];
    for _ in 0..n {
        let h = realize_channels_with_rng(scenario, &mut rng);
        let sinr = compute_sinr(&h, scenario, p);
        for (k, &g) in sinr.iter().enumerate() {
            if g <= scenario.alpha[k] {
                counts[k] += 1;
            }
        }
    }
    counts
}

fn sum_counts(parts: Vec<Vec<u64>>, k: usize) -> Vec<u64> {
    let mut total = vec![0u64; k];
    for part in parts {
        for (t, c) in total.iter_mut().zip(part) {
            *t += c;
        }
    }
    total
}

/// Chunked outage counts, sequential path. Always available; the parallel
/// path produces byte-identical totals.
pub fn outage_counts_sequential(
    scenario: &InterferenceScenario,
    p: &[f64],
    n_samples: usize,
    seed: u64,
) -> Vec<u64> {
    let parts = chunk_sizes(n_samples)
        .into_iter()
        .enumerate()
        .map(|(i, n)| outage_chunk(scenario, p, n, seed ^ i as u64))
        .collect();
    sum_counts(parts, scenario.k_links)
}

/// Chunked outage counts over a rayon pool.
#[cfg(feature = "parallel")]
pub fn outage_counts_parallel(
    scenario: &InterferenceScenario,
    p: &[f64],
    n_samples: usize,
    seed: u64,
) -> Vec<u64> {
    let parts: Vec<Vec<u64>> = chunk_sizes(n_samples)
        .into_par_iter()
        .enumerate()
        .map(|(i, n)| outage_chunk(scenario, p, n, seed ^ i as u64))
        .collect();
    sum_counts(parts, scenario.k_links)
}

fn outage_counts(
    scenario: &InterferenceScenario,
    p: &[f64],
    n_samples: usize,
    seed: u64,
) -> Vec<u64> {
    #[cfg(feature = "parallel")]
    {
        outage_counts_parallel(scenario, p, n_samples, seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        outage_counts_sequential(scenario, p, n_samples, seed)
    }
}

/// Estimates per-user SINR outage rates `Pr(SINR_k <= alpha_k)` under the
/// channel-error law and checks them against the allowed probabilities.
pub fn estimate_outage(
    scenario: &InterferenceScenario,
    p: &[f64],
    n_samples: usize,
    seed: u64,
) -> OutageReport {
    let counts = outage_counts(scenario, p, n_samples, seed);
    OutageReport::from_counts(counts, scenario.eps.clone(), n_samples, seed)
}

fn mse_chunk(
    scenario: &BroadcastScenario,
    q: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<u64>, ModelError> {
    let mut rng = substream(seed, "broadcast-realization");
    let mut counts = vec![0u64; scenario.k];
    for _ in 0..n {
        let delta = realize_broadcast_with_rng(scenario, &mut rng);
        let mse = compute_mse(&delta, scenario, q)?;
        for (k, &m) in mse.iter().enumerate() {
            if m > scenario.mu[k] {
                counts[k] += 1;
            }
        }
    }
    Ok(counts)
}

fn mse_counts(
    scenario: &BroadcastScenario,
    q: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<u64>, ModelError> {
    #[cfg(feature = "parallel")]
    {
        let parts: Vec<Vec<u64>> = chunk_sizes(n_samples)
            .into_par_iter()
            .enumerate()
            .map(|(i, n)| mse_chunk(scenario, q, n, seed ^ i as u64))
            .collect::<Result<_, _>>()?;
        Ok(sum_counts(parts, scenario.k))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let parts = chunk_sizes(n_samples)
            .into_iter()
            .enumerate()
            .map(|(i, n)| mse_chunk(scenario, q, n, seed ^ i as u64))
            .collect::<Result<_, _>>()?;
        Ok(sum_counts(parts, scenario.k))
    }
}

/// Estimates per-user MSE excess rates `Pr(MSE_k > mu_k)`, compared against
/// the allowed rates `1 - phi_k`.
pub fn estimate_mse_satisfaction(
    scenario: &BroadcastScenario,
    q: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<OutageReport, ModelError> {
    let counts = mse_counts(scenario, q, n_samples, seed)?;
    let targets = scenario.phi.iter().map(|&p| 1.0 - p).collect();
    Ok(OutageReport::from_counts(counts, targets, n_samples, seed))
}

/// Equal-width per-user histogram of realized MSE values.
#[derive(Debug, Clone)]
pub struct MseHistogram {
    pub n_bins: usize,
    /// Per-user bin edges: `edges[k]` has `n_bins + 1` entries.
    pub edges: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Samples realized MSE values and bins them per user with equal-width bins
/// spanning the observed range. A degenerate (constant) sample range is
/// widened by a relative hair so every value lands in a bin.
pub fn histogram_mse(
    scenario: &BroadcastScenario,
    q: &[f64],
    n_samples: usize,
    seed: u64,
    n_bins: usize,
) -> Result<MseHistogram, ModelError> {
    assert!(n_bins > 0);
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); scenario.k];
    for (i, n) in chunk_sizes(n_samples).into_iter().enumerate() {
        let mut rng = substream(seed ^ i as u64, "broadcast-realization");
        for _ in 0..n {
            let delta = realize_broadcast_with_rng(scenario, &mut rng);
            let mse = compute_mse(&delta, scenario, q)?;
            for (k, &m) in mse.iter().enumerate() {
                samples[k].push(m);
            }
        }
    }
    let mut edges = Vec::with_capacity(scenario.k);
    let mut counts = Vec::with_capacity(scenario.k);
    for user in &samples {
        let lo = user.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = user.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            hi = lo + 1e-12 * (1.0 + lo.abs());
        }
        let width = (hi - lo) / n_bins as f64;
        let e: Vec<f64> = (0..=n_bins).map(|b| lo + width * b as f64).collect();
        let mut c = vec![0u64; n_bins];
        for &m in user {
            let b = (((m - lo) / width) as usize).min(n_bins - 1);
            c[b] += 1;
        }
        edges.push(e);
        counts.push(c);
    }
    Ok(MseHistogram {
        n_bins,
        edges,
        counts,
        n_samples,
        seed,
    })
}

/// Writes a report as `user,rate,halfwidth,target,pass` CSV.
pub fn write_outage_csv<W: std::io::Write>(
    report: &OutageReport,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "user,rate,halfwidth,target,pass")?;
    for k in 0..report.rates.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            k, report.rates[k], report.half_widths[k], report.targets[k], report.pass[k]
        )?;
    }
    Ok(())
}

/// Writes a histogram as `user,bin_lo,bin_hi,count` CSV.
pub fn write_histogram_csv<W: std::io::Write>(
    hist: &MseHistogram,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "user,bin_lo,bin_hi,count")?;
    for (k, (edges, counts)) in hist.edges.iter().zip(&hist.counts).enumerate() {
        for (b, &c) in counts.iter().enumerate() {
            writeln!(out, "{},{},{},{}", k, edges[b], edges[b + 1], c)?;
        }
    }
    Ok(())
}

/// Empirical SINR quantiles are sometimes useful alongside the report; this
/// returns the realized SINR vectors for external analysis.
pub fn sample_sinr(
    scenario: &InterferenceScenario,
    p: &[f64],
    n_samples: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(n_samples);
    for (i, n) in chunk_sizes(n_samples).into_iter().enumerate() {
        let mut rng = substream(seed ^ i as u64, "interference-realization");
        for _ in 0..n {
            let h = realize_channels_with_rng(scenario, &mut rng);
            out.push(DVector::from_vec(compute_sinr(&h, scenario, p)));
        }
    }
    out
}
