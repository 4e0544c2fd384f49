//! Scan throughput measurement: sequential baseline versus the chunked
//! worker-pool scan across worker counts. Ordering assertions (speedup,
//! linear scaling) belong to the callers; this module just measures.

use std::time::Instant;

use num_complex::Complex64;
use stream_core::rng::CounterRng;
use stream_core::scan::ScanBuffer;

use crate::parallel::scan_buffer_parallel;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub workers: usize,
    pub seconds: f64,
    pub tokens_per_sec: f64,
    pub speedup: f64,
    pub combine_ops: u64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub n: usize,
    pub channels: usize,
    pub m: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchResult {
    pub fn print(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "# scan benchmark: n={} channels={} m={} repeats={}", self.n, self.channels, self.m, self.repeats)?;
        writeln!(w, "workers seconds tokens_per_sec speedup combine_ops")?;
        for r in &self.rows {
            writeln!(
                w,
                "{} {:.6} {:.0} {:.3} {}",
                r.workers, r.seconds, r.tokens_per_sec, r.speedup, r.combine_ops
            )?;
        }
        Ok(())
    }
}

fn random_leaf_buffer(n: usize, m: usize, seed: u64) -> ScanBuffer {
    let mut rng = CounterRng::new(seed);
    let mut buf = ScanBuffer::zeros(m, n);
    for j in 0..n * m {
        // Stable transition factors, |a| <= 1.
        let mag = (-rng.range_f64(0.01, 1.0)).exp();
        let ph = rng.range_f64(0.0, std::f64::consts::TAU);
        buf.a[j] = Complex64::new(mag * ph.cos(), mag * ph.sin());
        buf.b[j] = Complex64::new(rng.normal(), rng.normal());
    }
    buf
}

/// Times `channels` independent length-n scans per timing pass at each
/// worker count. The same leaf data is reused so only the scan is measured;
/// the per-pass buffer restore is excluded from the clock.
pub fn bench_scan(
    n: usize,
    channels: usize,
    m: usize,
    workers_list: &[usize],
    repeats: usize,
    seed: u64,
) -> BenchResult {
    let base = random_leaf_buffer(n, m, seed);
    let mut scratch = base.clone();
    let mut rows = Vec::with_capacity(workers_list.len());
    let mut baseline = None;
    for &workers in workers_list {
        let mut best = f64::INFINITY;
        let mut ops = 0u64;
        for _ in 0..repeats.max(1) {
            let mut elapsed = 0.0;
            ops = 0;
            for _ in 0..channels {
                scratch.a.copy_from_slice(&base.a);
                scratch.b.copy_from_slice(&base.b);
                let start = Instant::now();
                let stats = scan_buffer_parallel(&mut scratch, workers);
                elapsed += start.elapsed().as_secs_f64();
                ops += stats.combine_ops;
            }
            best = best.min(elapsed);
        }
        let tokens = (n * channels) as f64;
        if baseline.is_none() {
            baseline = Some(best);
        }
        rows.push(BenchRow {
            workers,
            seconds: best,
            tokens_per_sec: tokens / best,
            speedup: baseline.expect("set above") / best,
            combine_ops: ops,
        });
    }
    BenchResult { n, channels, m, repeats, rows }
}

/// Sequential-scan wall time for one (n, m) instance, for linear-time checks.
pub fn time_sequential(n: usize, m: usize, seed: u64, repeats: usize) -> f64 {
    let base = random_leaf_buffer(n, m, seed);
    let mut scratch = base.clone();
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        scratch.a.copy_from_slice(&base.a);
        scratch.b.copy_from_slice(&base.b);
        let start = Instant::now();
        scan_buffer_parallel(&mut scratch, 1);
        best = best.min(start.elapsed().as_secs_f64());
    }
    best
}
