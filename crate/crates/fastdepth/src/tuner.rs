//! Per-signature schedule search and the on-disk schedule cache.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fastdepth_core::graph::NetGraph;
use fastdepth_core::ops::{self, BatchNorm, ConvParams};
use fastdepth_core::schedule::{
    enumerate_schedules, median, CacheEntry, OpKind, OpSignature, Schedule, ScheduleCache,
};
use fastdepth_core::tensor::uniform_vec;
use fastdepth_core::{Fill, Tensor, TensorShape};

use crate::error::{Error, Result};

pub const MIN_RUNS: usize = 5;
pub const MIN_WARMUP: usize = 2;

/// File name of the schedule cache inside a cache directory.
pub const CACHE_FILE: &str = "schedules.tsv";

/// Environment variable naming the schedule-cache directory.
pub const CACHE_DIR_ENV: &str = "FASTDEPTH_CACHE_DIR";

/// Machine identifier stored with every cache entry:
/// `os-arch-ncpu-hostname`.
pub fn host_tag() -> String {
    let ncpu = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let hostname = std::fs::read_to_string("/etc/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .or_else(|| std::env::var("COMPUTERNAME").ok())
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "unknown".into());
    let tag = format!("{}-{}-{ncpu}-{hostname}", std::env::consts::OS, std::env::consts::ARCH);
    tag.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

/// One timed execution series of a convolution.
#[derive(Debug, Clone)]
pub struct Timing {
    pub median_ns: u64,
    pub samples: Vec<u64>,
    pub output: Tensor,
}

fn check_counts(warmup: usize, runs: usize) -> Result<()> {
    if runs < MIN_RUNS || warmup < MIN_WARMUP {
        return Err(Error::Usage(format!(
            "timing needs at least {MIN_RUNS} runs and {MIN_WARMUP} warmup runs (got {runs} and {warmup})"
        )));
    }
    Ok(())
}

/// Seeded input, weights and an identity batch norm for `sig`.
fn seeded_operands(sig: &OpSignature, seed: u64) -> Result<(Tensor, ConvParams)> {
    let spec = sig.spec();
    let x = Tensor::create(TensorShape::new(1, sig.in_c, sig.h, sig.w)?, Fill::seeded(seed));
    let params = ConvParams {
        weight: uniform_vec(seed ^ 0x5eed, spec.weight_len(), -0.1, 0.1),
        bias: None,
        bn: Some(BatchNorm::identity(spec.out_c)),
    };
    Ok((x, params))
}

fn run_op(sig: &OpSignature, x: &Tensor, params: &ConvParams, schedule: &Schedule) -> Result<Tensor> {
    let spec = sig.spec();
    Ok(match sig.kind {
        OpKind::Transposed => ops::transpose_conv2d(x, &spec, params, true, schedule)?,
        _ => ops::conv2d(x, &spec, params, true, schedule)?,
    })
}

/// Run `f` `warmup` times untimed, then `runs` times timed. Returns the
/// per-run wall times in nanoseconds (at least 1) and the last result.
pub(crate) fn measure<T>(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<(Vec<u64>, T)> {
    let mut last = None;
    for _ in 0..warmup {
        last = Some(f()?);
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = f()?;
        samples.push((start.elapsed().as_nanos() as u64).max(1));
        last = Some(out);
    }
    Ok((samples, last.expect("at least one run")))
}

/// Time `schedule` on seeded data shaped like `sig` and return the median.
pub fn time_schedule(sig: &OpSignature, schedule: &Schedule, warmup: usize, runs: usize, seed: u64) -> Result<Timing> {
    check_counts(warmup, runs)?;
    let (x, params) = seeded_operands(sig, seed)?;
    let (samples, output) = measure(warmup, runs, || run_op(sig, &x, &params, schedule))?;
    Ok(Timing {
        median_ns: median(&samples),
        samples,
        output,
    })
}

#[derive(Debug, Clone)]
pub struct SignatureTuning {
    pub sig: OpSignature,
    /// Every candidate with its median, in enumeration order.
    pub candidates: Vec<(Schedule, u64)>,
    pub best: Schedule,
    pub best_ns: u64,
    pub naive_ns: u64,
    /// Largest deviation of any candidate's output from the reference kernel.
    pub max_abs_diff: f32,
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    pub host: String,
    pub runs: usize,
    pub signatures: Vec<SignatureTuning>,
}

impl TuneReport {
    /// The winners as a cache tagged with this report's host.
    pub fn to_cache(&self) -> Result<ScheduleCache> {
        let mut cache = ScheduleCache::new(self.host.clone());
        self.merge_into(&mut cache)?;
        Ok(cache)
    }

    /// Insert (or replace) every winner in `cache`.
    pub fn merge_into(&self, cache: &mut ScheduleCache) -> Result<()> {
        for t in &self.signatures {
            cache.insert(
                t.sig,
                CacheEntry {
                    schedule: t.best,
                    median_ns: t.best_ns,
                    samples: self.runs as u32,
                    host: self.host.clone(),
                },
            )?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<44} {:<20} {:>12} {:>12} {:>7}\n", "signature", "best", "best ms", "naive ms", "speedup");
        for t in &self.signatures {
            s.push_str(&format!(
                "{:<44} {:<20} {:>12} {:>12} {:>6.2}x\n",
                t.sig.to_string(),
                t.best.id(),
                format_ms(t.best_ns),
                format_ms(t.naive_ns),
                t.naive_ns as f64 / t.best_ns as f64
            ));
        }
        s
    }
}

/// Distinct convolution signatures of `graph`, in first-use order.
pub fn graph_signatures(graph: &NetGraph) -> Vec<OpSignature> {
    let mut seen = BTreeSet::new();
    (0..graph.layers.len())
        .filter_map(|i| graph.signature(i))
        .filter(|s| seen.insert(*s))
        .collect()
}

/// Time every candidate schedule of every distinct convolution in `graph`
/// and keep the fastest. The reference kernel wins ties.
pub fn tune_graph(graph: &NetGraph, warmup: usize, runs: usize, host: &str) -> Result<TuneReport> {
    tune_signatures(&graph_signatures(graph), warmup, runs, host)
}

/// [`tune_graph`] over an explicit signature list.
pub fn tune_signatures(sigs: &[OpSignature], warmup: usize, runs: usize, host: &str) -> Result<TuneReport> {
    check_counts(warmup, runs)?;
    let mut signatures = Vec::new();
    for (i, &sig) in sigs.iter().enumerate() {
        let seed = i as u64;
        let naive = time_schedule(&sig, &Schedule::naive(), warmup, runs, seed)?;
        let mut candidates = vec![(Schedule::naive(), naive.median_ns)];
        let (mut best, mut best_ns) = (Schedule::naive(), naive.median_ns);
        let mut max_abs_diff = 0f32;
        for schedule in enumerate_schedules(&sig).into_iter().filter(|s| !s.is_naive()) {
            let t = time_schedule(&sig, &schedule, warmup, runs, seed)?;
            max_abs_diff = max_abs_diff.max(t.output.max_abs_diff(&naive.output)?);
            candidates.push((schedule, t.median_ns));
            if t.median_ns < best_ns {
                (best, best_ns) = (schedule, t.median_ns);
            }
        }
        signatures.push(SignatureTuning {
            sig,
            candidates,
            best,
            best_ns,
            naive_ns: naive.median_ns,
            max_abs_diff,
        });
    }
    Ok(TuneReport {
        host: host.to_string(),
        runs,
        signatures,
    })
}

/// The cache file under `dir`.
pub fn cache_file(dir: &Path) -> PathBuf {
    dir.join(CACHE_FILE)
}

/// Cache directory from an explicit flag or [`CACHE_DIR_ENV`].
pub fn resolve_cache_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

/// Load a cache file for `host`. A missing file gives an empty cache.
pub fn load_cache(path: &Path, host: &str) -> Result<ScheduleCache> {
    match std::fs::read_to_string(path) {
        Ok(text) => ScheduleCache::from_text(host, &text).map_err(|e| Error::format(path, e.to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ScheduleCache::new(host)),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn save_cache(cache: &ScheduleCache, path: &Path) -> Result<()> {
    std::fs::write(path, cache.to_text()).map_err(|e| Error::io(path, e))
}

/// Milliseconds with nanosecond precision, e.g. `12.034500`. Parses back
/// exactly with [`parse_ms`].
pub fn format_ms(ns: u64) -> String {
    format!("{}.{:06}", ns / 1_000_000, ns % 1_000_000)
}

/// Inverse of [`format_ms`].
pub fn parse_ms(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.')?;
    if frac.len() != 6 || !frac.bytes().all(|b| b.is_ascii_digit()) || whole.is_empty() {
        return None;
    }
    whole.parse::<u64>().ok()?.checked_mul(1_000_000)?.checked_add(frac.parse().ok()?)
}
