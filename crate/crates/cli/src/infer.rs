//! Streaming inference: constant work per event, recurrent state only.
//!
//! Replaying a file through the streaming path reproduces the batch forward
//! on the same file (the per-token arithmetic is identical), and per-event
//! cost does not grow with history, which the latency probe measures.

use std::io::{BufRead, Read};
use std::time::Instant;

use stream_core::geometry::{event_token_id, EventRecord, Sensor};
use stream_core::model::{EventClassifier, ModelError};
use stream_core::rng::CounterRng;

use crate::formats::{decode_event_record, EVENT_RECORD_LEN};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

#[derive(Debug, Clone, Default)]
pub struct StreamOutcome {
    pub processed: usize,
    pub skipped: usize,
    pub final_logits: Option<Vec<f64>>,
}

/// Feeds events through the model one at a time. Malformed events (parse
/// failures, out-of-bounds pixels, ids beyond the vocabulary) are skipped
/// and counted. `emit` fires every `every` processed events (0 = never)
/// with the current class posteriors.
pub fn run_events<I, F>(
    model: &EventClassifier,
    sensor: Sensor,
    events: I,
    every: usize,
    mut emit: F,
) -> Result<StreamOutcome, ModelError>
where
    I: IntoIterator<Item = Result<EventRecord, String>>,
    F: FnMut(usize, u64, &[f64]),
{
    let mut state = model.streaming_state();
    let mut outcome = StreamOutcome::default();
    for item in events {
        let event = match item {
            Ok(e) if sensor.contains(&e) => e,
            _ => {
                outcome.skipped += 1;
                continue;
            }
        };
        let id = event_token_id(&event, sensor);
        if model.stream_push(&mut state, event.t as f64 * 1e-6, id).is_err() {
            outcome.skipped += 1;
            continue;
        }
        outcome.processed += 1;
        if every > 0 && outcome.processed % every == 0 {
            if let Some(logits) = model.stream_logits(&state) {
                emit(outcome.processed, event.t, &softmax(&logits));
            }
        }
    }
    outcome.final_logits = model.stream_logits(&state);
    Ok(outcome)
}

#[derive(Debug, Clone, Copy)]
pub struct LatencyProbe {
    pub at: usize,
    pub median_nanos: f64,
}

/// Measures per-event processing time around the given event indices while
/// streaming `total` synthetic events. Reports the median over a window of
/// `window` events centered on each probe point.
pub fn latency_probe(
    model: &EventClassifier,
    sensor: Sensor,
    total: usize,
    probes: &[usize],
    window: usize,
    seed: u64,
) -> Result<Vec<LatencyProbe>, ModelError> {
    let mut rng = CounterRng::new(seed);
    let mut state = model.streaming_state();
    let mut samples: Vec<Vec<f64>> = probes.iter().map(|_| Vec::new()).collect();
    let half = window / 2;
    let mut t_us = 0u64;
    for k in 0..total {
        t_us += rng.next_below(200) + 1;
        let event = EventRecord {
            t: t_us,
            x: rng.next_below(sensor.width as u64) as u16,
            y: rng.next_below(sensor.height as u64) as u16,
            polarity: rng.bernoulli(0.5),
        };
        let id = event_token_id(&event, sensor);
        let t_sec = event.t as f64 * 1e-6;
        let probe_slot = probes
            .iter()
            .position(|&p| k >= p.saturating_sub(half) && k < p + half);
        match probe_slot {
            Some(slot) => {
                let start = Instant::now();
                model.stream_push(&mut state, t_sec, id)?;
                samples[slot].push(start.elapsed().as_nanos() as f64);
            }
            None => model.stream_push(&mut state, t_sec, id)?,
        }
    }
    Ok(probes
        .iter()
        .zip(samples.iter_mut())
        .map(|(&at, window_samples)| {
            window_samples.sort_by(|a, b| a.partial_cmp(b).expect("finite durations"));
            let median = if window_samples.is_empty() {
                0.0
            } else {
                window_samples[window_samples.len() / 2]
            };
            LatencyProbe { at, median_nanos: median }
        })
        .collect())
}

/// Iterator over binary event records (after the header has been consumed).
pub fn binary_event_iter(mut r: impl Read) -> impl Iterator<Item = Result<EventRecord, String>> {
    let mut index = 0usize;
    std::iter::from_fn(move || {
        let mut buf = [0u8; EVENT_RECORD_LEN];
        match r.read_exact(&mut buf) {
            Ok(()) => {
                let out = decode_event_record(&buf, index).map_err(|e| e.to_string());
                index += 1;
                Some(out)
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => None,
            Err(e) => Some(Err(e.to_string())),
        }
    })
}

/// Iterator over CSV event lines (header and comments skipped).
pub fn csv_event_iter(r: impl BufRead) -> impl Iterator<Item = Result<EventRecord, String>> {
    r.lines().filter_map(|line| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e.to_string())),
        };
        let trimmed = line.trim();
        if trimmed.is_empty()
            || trimmed.starts_with('#')
            || trimmed == crate::formats::EVENT_CSV_HEADER
        {
            return None;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Some(Err(format!("expected 4 fields: {trimmed:?}")));
        }
        let parse = || -> Option<EventRecord> {
            Some(EventRecord {
                t: fields[0].trim().parse().ok()?,
                x: fields[1].trim().parse().ok()?,
                y: fields[2].trim().parse().ok()?,
                polarity: match fields[3].trim() {
                    "0" => false,
                    "1" => true,
                    _ => return None,
                },
            })
        };
        Some(parse().ok_or_else(|| format!("bad event line: {trimmed:?}")))
    })
}
