//! Per-frame latency benchmarking with warmup and Student-t confidence
//! intervals, plus the dense-vs-sparse and speedup comparisons built on it.

use std::hint::black_box;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{forward_chunk, forward_profiled, OpProfile, StreamState};
use crate::model::{model_memory_mb, ModelWeights};
use crate::pruning::prune_unstructured;

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom.
const T975: [f64; 30] = [
    12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060, 2.2622, 2.2281, 2.2010,
    2.1788, 2.1604, 2.1448, 2.1314, 2.1199, 2.1098, 2.1009, 2.0930, 2.0860, 2.0796, 2.0739,
    2.0687, 2.0639, 2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423,
];
const Z975: f64 = 1.959964;

/// 0.975 quantile of Student's t with `df` degrees of freedom. Beyond the
/// table, interpolates linearly in `1/df` between df = 30 and the normal limit.
pub fn t_quantile_975(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T975[df - 1],
        _ => Z975 + (T975[29] - Z975) * 30.0 / df as f64,
    }
}

/// Sample mean and 95% CI half-width `t * s / sqrt(n)` (unbiased `s`).
pub fn mean_ci95(xs: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 samples, got {n}")));
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, t_quantile_975(n - 1) * var.sqrt() / (n as f64).sqrt()))
}

/// True when two mean ± half-width intervals intersect.
pub fn cis_overlap(a: &BenchmarkReport, b: &BenchmarkReport) -> bool {
    (a.mean_ms_per_frame - b.mean_ms_per_frame).abs()
        <= a.ci95_half_width_ms + b.ci95_half_width_ms
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchParams {
    pub frames_per_sample: usize,
    pub samples: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            frames_per_sample: 100,
            samples: 100,
            warmup: 10,
            seed: 42,
        }
    }
}

impl BenchParams {
    fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::arg("benchmark needs at least 2 samples"));
        }
        if self.frames_per_sample == 0 {
            return Err(Error::arg("benchmark needs at least 1 frame per sample"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_name: String,
    pub mean_ms_per_frame: f64,
    pub ci95_half_width_ms: f64,
    pub samples: usize,
    pub frames_per_sample: usize,
    pub warmup_samples: usize,
    pub memory_mb: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub host: String,
    /// Raw per-frame milliseconds of every measured sample.
    pub samples_ms: Vec<f64>,
}

impl BenchmarkReport {
    fn from_samples(
        name: &str,
        w: &ModelWeights,
        params: &BenchParams,
        samples_ms: Vec<f64>,
    ) -> Result<Self> {
        let (mean, half) = mean_ci95(&samples_ms)?;
        Ok(Self {
            config_name: name.to_string(),
            mean_ms_per_frame: mean,
            ci95_half_width_ms: half,
            samples: samples_ms.len(),
            frames_per_sample: params.frames_per_sample,
            warmup_samples: params.warmup,
            memory_mb: model_memory_mb(w),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            host: host_descriptor(),
            samples_ms,
        })
    }
}

/// CPU model, OS/arch and logical core count, for labelling reports.
pub fn host_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{cpu}; {}-{}; {cores} logical cores",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Deterministic non-negative input frames for timing runs.
pub fn bench_input(freq_bins: usize, frames: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| (0..freq_bins).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect()
}

struct Runner<'a> {
    w: &'a ModelWeights,
    input: Vec<Vec<f32>>,
    state: StreamState,
}

impl<'a> Runner<'a> {
    fn new(w: &'a ModelWeights, params: &BenchParams) -> Self {
        Self {
            w,
            input: bench_input(w.spec().freq_bins, params.frames_per_sample, params.seed),
            state: StreamState::new(w.spec()),
        }
    }

    /// Milliseconds per frame for one pass over the input.
    fn sample(&mut self) -> Result<f64> {
        self.state.reset();
        let start = Instant::now();
        let out = forward_chunk(self.w, &mut self.state, &self.input)?;
        let elapsed = start.elapsed();
        black_box(out);
        Ok(elapsed.as_secs_f64() * 1e3 / self.input.len() as f64)
    }
}

/// Times `forward` over a fixed seeded input: `warmup` discarded samples,
/// then `samples` measured ones.
pub fn benchmark(w: &ModelWeights, name: &str, params: &BenchParams) -> Result<BenchmarkReport> {
    let mut reports = benchmark_interleaved(&[(name, w)], params)?;
    Ok(reports.remove(0))
}

/// Benchmarks several models with samples taken round-robin, so slow drifts
/// in machine load hit every model alike. Each model gets the same
/// parameters and the same seeded input.
pub fn benchmark_interleaved(
    models: &[(&str, &ModelWeights)],
    params: &BenchParams,
) -> Result<Vec<BenchmarkReport>> {
    params.validate()?;
    let mut runners: Vec<Runner> = models.iter().map(|(_, w)| Runner::new(w, params)).collect();
    for _ in 0..params.warmup {
        for r in runners.iter_mut() {
            r.sample()?;
        }
    }
    let mut samples = vec![Vec::with_capacity(params.samples); runners.len()];
    for s in 0..params.samples {
        // rotate the starting model so none is always measured first
        let k = runners.len();
        for i in 0..k {
            let idx = (s + i) % k;
            samples[idx].push(runners[idx].sample()?);
        }
    }
    models
        .iter()
        .zip(samples)
        .map(|((name, w), xs)| BenchmarkReport::from_samples(name, w, params, xs))
        .collect()
}

/// Benchmarks `base` with each GRU sparsity fraction applied (the dense
/// kernels do the same work regardless of zeros).
pub fn compare_sparse_dense(
    base: &ModelWeights,
    fracs: &[f64],
    params: &BenchParams,
) -> Result<Vec<BenchmarkReport>> {
    let models = fracs
        .iter()
        .map(|&f| Ok((format!("frac_gru={f:.2}"), prune_unstructured(base, f)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&str, &ModelWeights)> = models.iter().map(|(n, w)| (n.as_str(), w)).collect();
    benchmark_interleaved(&refs, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub config: String,
    pub mean_ms: f64,
    pub ci95_ms: f64,
    pub memory_mb: f64,
    pub speedup: f64,
    pub memory_reduction: f64,
}

pub fn speedup_table(reports: &[BenchmarkReport], baseline: &str) -> Result<Vec<SpeedupRow>> {
    let base = reports
        .iter()
        .find(|r| r.config_name == baseline)
        .ok_or_else(|| Error::arg(format!("baseline {baseline:?} not among the reports")))?;
    Ok(reports
        .iter()
        .map(|r| SpeedupRow {
            config: r.config_name.clone(),
            mean_ms: r.mean_ms_per_frame,
            ci95_ms: r.ci95_half_width_ms,
            memory_mb: r.memory_mb,
            speedup: base.mean_ms_per_frame / r.mean_ms_per_frame,
            memory_reduction: base.memory_mb / r.memory_mb,
        })
        .collect())
}

pub const SPEEDUP_CSV_HEADER: &str = "config,mean_ms,ci95_ms,memory_mb,speedup";

pub fn speedup_csv(rows: &[SpeedupRow]) -> String {
    let mut out = String::from(SPEEDUP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.4},{:.4}\n",
            r.config, r.mean_ms, r.ci95_ms, r.memory_mb, r.speedup
        ));
    }
    out
}

/// Profiles `repeats` passes over `frames` seeded frames and sums the
/// per-category time.
pub fn profile(w: &ModelWeights, frames: usize, repeats: usize, seed: u64) -> Result<OpProfile> {
    let input = bench_input(w.spec().freq_bins, frames, seed);
    let mut total = OpProfile::default();
    for _ in 0..repeats.max(1) {
        let (out, p) = forward_profiled(w, &input)?;
        black_box(out);
        total.recurrent += p.recurrent;
        total.conv_deconv += p.conv_deconv;
        total.other += p.other;
    }
    Ok(total)
}
