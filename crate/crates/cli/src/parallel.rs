//! Worker-pool execution of the chunked scan and an order-preserving
//! parallel map for batch work.
//!
//! The parallel scan runs the same three phases as the single-threaded
//! chunked scan with one chunk per worker: chunk scans and carry
//! applications execute concurrently on disjoint slices, the tiny carry
//! combine stays sequential. Because the per-element arithmetic is
//! identical, the result is bitwise equal to the single-threaded chunked
//! scan with the same chunk count, and with one worker it is bitwise equal
//! to the sequential scan.

use num_complex::Complex64;
use stream_core::scan::{
    apply_carry_in_place, chunk_ranges, scan_span_in_place, ScanBuffer, ScanError, ScanPair,
    ScanStats,
};

/// Splits `data` into the given element ranges (scaled by `m`) as disjoint
/// mutable slices.
fn split_ranges<'a>(
    data: &'a mut [Complex64],
    ranges: &[(usize, usize)],
    m: usize,
) -> Vec<&'a mut [Complex64]> {
    let mut out = Vec::with_capacity(ranges.len());
    let mut rest = data;
    let mut offset = 0;
    for &(s, e) in ranges {
        let (chunk, tail) = rest.split_at_mut((e - s) * m);
        debug_assert_eq!(offset, s * m);
        offset += chunk.len();
        out.push(chunk);
        rest = tail;
    }
    out
}

/// Three-phase chunked scan over a flat buffer with `workers` threads.
pub fn scan_buffer_parallel(buf: &mut ScanBuffer, workers: usize) -> ScanStats {
    let m = buf.m();
    let len = buf.len();
    let ranges = chunk_ranges(len, workers.max(1));
    if ranges.len() <= 1 {
        let ops = scan_span_in_place(m, &mut buf.a, &mut buf.b);
        return ScanStats { combine_ops: ops, chunks: 1 };
    }

    // Phase 1: independent chunk scans.
    let mut ops = 0u64;
    {
        let a_chunks = split_ranges(&mut buf.a, &ranges, m);
        let b_chunks = split_ranges(&mut buf.b, &ranges, m);
        let counts: Vec<u64> = std::thread::scope(|scope| {
            let handles: Vec<_> = a_chunks
                .into_iter()
                .zip(b_chunks)
                .map(|(a, b)| scope.spawn(move || scan_span_in_place(m, a, b)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("scan worker")).collect()
        });
        ops += counts.iter().sum::<u64>();
    }

    // Phase 2: exclusive scan over chunk totals (sequential, tiny).
    let mut carries: Vec<(Vec<Complex64>, Vec<Complex64>)> = Vec::with_capacity(ranges.len());
    let mut carry_a = vec![Complex64::new(1.0, 0.0); m];
    let mut carry_b = vec![Complex64::new(0.0, 0.0); m];
    for (c, &(s, e)) in ranges.iter().enumerate() {
        let _ = s;
        if c > 0 {
            carries.push((carry_a.clone(), carry_b.clone()));
        }
        if c + 1 < ranges.len() {
            let last = e - 1;
            let ta = &buf.a[last * m..(last + 1) * m];
            let tb = &buf.b[last * m..(last + 1) * m];
            if c == 0 {
                carry_a.copy_from_slice(ta);
                carry_b.copy_from_slice(tb);
            } else {
                // combine(carry, total): same arithmetic as apply_carry on
                // one element, keeping parity with the sequential version.
                let mut new_a = ta.to_vec();
                let mut new_b = tb.to_vec();
                ops += apply_carry_in_place(&carry_a, &carry_b, &mut new_a, &mut new_b);
                carry_a = new_a;
                carry_b = new_b;
            }
        }
    }

    // Phase 3: apply carries to chunks 1.. concurrently.
    {
        let mut a_chunks = split_ranges(&mut buf.a, &ranges, m);
        let mut b_chunks = split_ranges(&mut buf.b, &ranges, m);
        a_chunks.remove(0);
        b_chunks.remove(0);
        let counts: Vec<u64> = std::thread::scope(|scope| {
            let handles: Vec<_> = a_chunks
                .into_iter()
                .zip(b_chunks)
                .zip(carries.iter())
                .map(|((a, b), (ca, cb))| {
                    scope.spawn(move || apply_carry_in_place(ca, cb, a, b))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("carry worker")).collect()
        });
        ops += counts.iter().sum::<u64>();
    }
    ScanStats { combine_ops: ops, chunks: ranges.len() }
}

/// Inclusive parallel prefix combine over pairs. With one worker the result
/// is bitwise identical to the sequential scan.
pub fn scan_parallel(pairs: &[ScanPair], workers: usize) -> Result<Vec<ScanPair>, ScanError> {
    let mut buf = ScanBuffer::from_pairs(pairs)?;
    scan_buffer_parallel(&mut buf, workers);
    Ok(buf.into_pairs())
}

/// Like [`scan_parallel`] but also returns combine-operation counts.
pub fn scan_parallel_with_stats(
    pairs: &[ScanPair],
    workers: usize,
) -> Result<(Vec<ScanPair>, ScanStats), ScanError> {
    let mut buf = ScanBuffer::from_pairs(pairs)?;
    let stats = scan_buffer_parallel(&mut buf, workers);
    Ok((buf.into_pairs(), stats))
}

/// Order-preserving parallel map: `out[i] = f(i)`. The result is identical
/// for every worker count; work is dealt in strides so uneven item costs
/// balance out.
pub fn parallel_map_indexed<T, F>(workers: usize, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(count.max(1));
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut local = Vec::new();
                    let mut i = w;
                    while i < count {
                        local.push((i, f(i)));
                        i += workers;
                    }
                    local
                })
            })
            .collect();
        let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
        for h in handles {
            for (i, v) in h.join().expect("map worker") {
                slots[i] = Some(v);
            }
        }
        slots
    });
    slots.iter_mut().map(|s| s.take().expect("all indices filled")).collect()
}

/// Logical cores, used as the default worker count.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
