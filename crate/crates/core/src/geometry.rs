//! Raw sensor data to token sequences: 3-axis point-cloud serialization
//! with farthest-point sampling and kNN grouping, and event-stream
//! tokenization with window-splice mixing and geometric augmentation.
//!
//! Tie-breaks are deterministic everywhere (lexicographic coordinates or
//! smallest index) so results are reproducible and checkable against the
//! brute-force references in the tests.

use alloc::vec;
use alloc::vec::Vec;

use crate::layer::TokenSequence;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeometryError {
    EmptyInput,
    KTooLarge { k: usize, n: usize },
    BadIndex { index: usize, len: usize },
    OutOfBounds { index: usize },
    UnsortedTime { index: usize },
    NonFinite { index: usize },
    VocabTooSmall { needed: usize, found: usize },
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeometryError::EmptyInput => write!(f, "empty input set"),
            GeometryError::KTooLarge { k, n } => write!(f, "k={k} exceeds point count {n}"),
            GeometryError::BadIndex { index, len } => {
                write!(f, "index {index} out of range for {len} points")
            }
            GeometryError::OutOfBounds { index } => {
                write!(f, "event {index} outside sensor bounds")
            }
            GeometryError::UnsortedTime { index } => {
                write!(f, "event timestamps decrease at index {index}")
            }
            GeometryError::NonFinite { index } => write!(f, "non-finite coordinate at {index}"),
            GeometryError::VocabTooSmall { needed, found } => {
                write!(f, "embedding table has {found} rows, need {needed}")
            }
        }
    }
}

impl core::error::Error for GeometryError {}

/// A 3D point in dataset units (typically normalized to the unit sphere).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn axis(&self, s: usize) -> f64 {
        match s {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    fn lex_key(&self) -> (f64, f64, f64) {
        (self.x, self.y, self.z)
    }
}

fn check_points(points: &[Point3]) -> Result<(), GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(GeometryError::NonFinite { index: i });
        }
    }
    Ok(())
}

/// One event from an event camera: microsecond timestamp, pixel, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: bool,
}

/// Sensor geometry for bounds checks and token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sensor {
    pub width: u16,
    pub height: u16,
}

impl Sensor {
    pub fn new(width: u16, height: u16) -> Self {
        Self { width, height }
    }

    /// Distinct token ids: one per (pixel, polarity).
    pub fn vocab(&self) -> usize {
        2 * self.width as usize * self.height as usize
    }

    pub fn contains(&self, e: &EventRecord) -> bool {
        e.x < self.width && e.y < self.height
    }
}

pub fn validate_events(events: &[EventRecord], sensor: Sensor) -> Result<(), GeometryError> {
    for (i, e) in events.iter().enumerate() {
        if !sensor.contains(e) {
            return Err(GeometryError::OutOfBounds { index: i });
        }
        if i > 0 && e.t < events[i - 1].t {
            return Err(GeometryError::UnsortedTime { index: i });
        }
    }
    Ok(())
}

/// Unique token id of an event: `polarity * W * H + y * W + x`. Injective
/// on (x, y, polarity) within sensor bounds.
pub fn event_token_id(e: &EventRecord, sensor: Sensor) -> u32 {
    let w = sensor.width as u32;
    let h = sensor.height as u32;
    (e.polarity as u32) * w * h + (e.y as u32) * w + e.x as u32
}

/// Pointwise feature map from coordinates to the model width.
pub trait PointEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, p: &Point3, out: &mut [f64]);
}

/// Affine encoder, the default pointwise map.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPointEncoder {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearPointEncoder {
    pub fn init(n: usize, rng: &mut CounterRng) -> Self {
        Self { w: Tensor::init_uniform(n, 3, rng), b: Tensor::vector(n) }
    }
}

impl PointEncoder for LinearPointEncoder {
    fn dim(&self) -> usize {
        self.w.rows()
    }

    fn encode(&self, p: &Point3, out: &mut [f64]) {
        self.w.matvec_into(&[p.x, p.y, p.z], out);
        for (o, b) in out.iter_mut().zip(&self.b.data) {
            *o += b;
        }
    }
}

/// Learned per-axis scale and shift marking which sort axis a segment came
/// from: three distinct (scale, shift) pairs of width n.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisEmbedding {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl AxisEmbedding {
    pub fn init(n: usize, rng: &mut CounterRng) -> Self {
        let mut scale = Tensor::filled(3, n, 1.0);
        let mut shift = Tensor::zeros(3, n);
        for i in 0..3 * n {
            scale.data[i] += 0.1 * rng.normal();
            shift.data[i] = 0.1 * rng.normal();
        }
        Self { scale, shift }
    }
}

/// Serializes a point set by sorting it along each of the three axes and
/// concatenating the results: output length 3N, segment s ordered by axis s
/// with that axis value as the ordering coordinate. Features are the encoded
/// point, scaled and shifted per axis. Ties break lexicographically by
/// (x, y, z), which makes the output invariant to input permutation.
pub fn serialize_points(
    points: &[Point3],
    encoder: &dyn PointEncoder,
    emb: &AxisEmbedding,
) -> Result<TokenSequence, GeometryError> {
    check_points(points)?;
    let n_points = points.len();
    let width = encoder.dim();
    let mut t = Vec::with_capacity(3 * n_points);
    let mut feats = vec![0.0; 3 * n_points * width];
    let mut encoded = vec![0.0; width];
    let mut segment_starts = Vec::with_capacity(3);
    for axis in 0..3 {
        if axis > 0 {
            segment_starts.push(axis * n_points);
        } else {
            segment_starts.push(0);
        }
        let mut order: Vec<usize> = (0..n_points).collect();
        order.sort_by(|&i, &j| {
            let ka = (points[i].axis(axis), points[i].x, points[i].y, points[i].z);
            let kb = (points[j].axis(axis), points[j].x, points[j].y, points[j].z);
            ka.partial_cmp(&kb).expect("finite coordinates")
        });
        for (slot, &idx) in order.iter().enumerate() {
            let p = &points[idx];
            t.push(p.axis(axis));
            encoder.encode(p, &mut encoded);
            let row = (axis * n_points + slot) * width;
            for c in 0..width {
                feats[row + c] = emb.scale.at(axis, c) * encoded[c] + emb.shift.at(axis, c);
            }
        }
    }
    TokenSequence::with_segments(t, feats, width, segment_starts)
        .map_err(|_| GeometryError::NonFinite { index: 0 })
}

/// Farthest point sampling: greedy max-min selection starting from
/// `seed_index`, ties broken by smallest index.
pub fn fps(points: &[Point3], k: usize, seed_index: usize) -> Result<Vec<usize>, GeometryError> {
    check_points(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(GeometryError::KTooLarge { k, n });
    }
    if seed_index >= n {
        return Err(GeometryError::BadIndex { index: seed_index, len: n });
    }
    let mut selected = Vec::with_capacity(k);
    selected.push(seed_index);
    let mut min_d2: Vec<f64> = points.iter().map(|p| p.dist2(&points[seed_index])).collect();
    while selected.len() < k {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = points[i].dist2(&points[best]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// FPS from the canonical seed: the lexicographically smallest point. This
/// makes the selected point set a function of the set, not its ordering.
pub fn fps_canonical(points: &[Point3], k: usize) -> Result<Vec<usize>, GeometryError> {
    check_points(points)?;
    let mut seed = 0;
    for (i, p) in points.iter().enumerate() {
        if p.lex_key() < points[seed].lex_key() {
            seed = i;
        }
    }
    fps(points, k, seed)
}

/// k nearest neighbors of each center by Euclidean distance, ties broken by
/// smaller index. Each group starts with the center itself (distance zero).
pub fn knn_group(
    points: &[Point3],
    centers: &[usize],
    k: usize,
) -> Result<Vec<Vec<usize>>, GeometryError> {
    check_points(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(GeometryError::KTooLarge { k, n });
    }
    let mut groups = Vec::with_capacity(centers.len());
    for &c in centers {
        if c >= n {
            return Err(GeometryError::BadIndex { index: c, len: n });
        }
        let mut dist: Vec<(f64, usize)> =
            points.iter().enumerate().map(|(i, p)| (p.dist2(&points[c]), i)).collect();
        dist.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        groups.push(dist[..k].iter().map(|&(_, i)| i).collect());
    }
    Ok(groups)
}

/// Tokenizes an event stream: one token per event, id from
/// [`event_token_id`], feature row looked up in `table`, ordering coordinate
/// in seconds.
pub fn tokenize_events(
    events: &[EventRecord],
    sensor: Sensor,
    table: &Tensor,
) -> Result<TokenSequence, GeometryError> {
    if events.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    validate_events(events, sensor)?;
    if table.rows() < sensor.vocab() {
        return Err(GeometryError::VocabTooSmall { needed: sensor.vocab(), found: table.rows() });
    }
    let width = table.cols();
    let mut t = Vec::with_capacity(events.len());
    let mut feats = Vec::with_capacity(events.len() * width);
    for e in events {
        t.push(e.t as f64 * 1e-6);
        feats.extend_from_slice(table.row(event_token_id(e, sensor) as usize));
    }
    TokenSequence::new(t, feats, width).map_err(|_| GeometryError::NonFinite { index: 0 })
}

/// Result of splicing a window of stream b into stream a.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedStream {
    pub events: Vec<EventRecord>,
    /// Convex soft label: (1 - lambda) on a's class, lambda on b's.
    pub label: Vec<f64>,
    /// Fraction of output events that came from b.
    pub lambda: f64,
}

/// Deterministic core of the event mixer: replace a's events in
/// `[tau, tau + w)` with b's events from `[sigma, sigma + w)`, shifted so
/// the windows align, then re-sort by time.
pub fn event_cutmix_window(
    a: &[EventRecord],
    label_a: usize,
    b: &[EventRecord],
    label_b: usize,
    classes: usize,
    tau: u64,
    w: u64,
    sigma: u64,
) -> MixedStream {
    let mut events: Vec<EventRecord> = Vec::with_capacity(a.len() + b.len());
    let mut from_b = 0usize;
    for e in a {
        let inside = e.t >= tau && e.t < tau.saturating_add(w);
        if !inside {
            events.push(*e);
        }
    }
    for e in b {
        if e.t >= sigma && e.t < sigma.saturating_add(w) {
            let mut shifted = *e;
            shifted.t = e.t - sigma + tau;
            events.push(shifted);
            from_b += 1;
        }
    }
    events.sort_by_key(|e| e.t);
    let total = events.len();
    let lambda = if total == 0 { 0.0 } else { from_b as f64 / total as f64 };
    let mut label = vec![0.0; classes];
    label[label_a] += 1.0 - lambda;
    label[label_b] += lambda;
    MixedStream { events, label, lambda }
}

/// Randomized event mixer: draws the window length within a's duration, its
/// position in a, and an equal-length source window in b.
pub fn event_cutmix(
    a: &[EventRecord],
    label_a: usize,
    b: &[EventRecord],
    label_b: usize,
    classes: usize,
    rng: &mut CounterRng,
) -> Result<MixedStream, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let a_start = a[0].t;
    let a_end = a[a.len() - 1].t;
    let b_start = b[0].t;
    let b_end = b[b.len() - 1].t;
    // +1 so a full-duration window can cover the last event too.
    let dur_a = a_end - a_start + 1;
    let w = rng.next_below(dur_a + 1);
    let tau = a_start + rng.next_below(dur_a - w + 1);
    let sigma_max = (b_end - b_start + 1).saturating_sub(w);
    let sigma = b_start + rng.next_below(sigma_max.max(1));
    Ok(event_cutmix_window(a, label_a, b, label_b, classes, tau, w, sigma))
}

/// Geometric augmentation probabilities. All zero means identity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentConfig {
    pub flip_h: f64,
    pub flip_v: f64,
    pub translate: f64,
    pub max_translate: u16,
    pub time_jitter: f64,
}

impl AugmentConfig {
    /// The preset used for event-stream training.
    pub fn standard() -> Self {
        Self { flip_h: 0.5, flip_v: 0.0, translate: 0.5, max_translate: 4, time_jitter: 0.5 }
    }
}

/// Rescales all timestamps by `s` (rounded to the microsecond grid).
pub fn time_scale(events: &mut [EventRecord], s: f64) {
    for e in events.iter_mut() {
        e.t = crate::math::round(e.t as f64 * s) as u64;
    }
}

/// Applies spatial flips, a small spatial translation (clamped to sensor
/// bounds), and time-scale jitter with factor in [0.9, 1.1], each with its
/// configured probability.
pub fn augment_events(
    events: &[EventRecord],
    sensor: Sensor,
    config: &AugmentConfig,
    rng: &mut CounterRng,
) -> Vec<EventRecord> {
    let mut out = events.to_vec();
    if config.flip_h > 0.0 && rng.bernoulli(config.flip_h) {
        for e in out.iter_mut() {
            e.x = sensor.width - 1 - e.x;
        }
    }
    if config.flip_v > 0.0 && rng.bernoulli(config.flip_v) {
        for e in out.iter_mut() {
            e.y = sensor.height - 1 - e.y;
        }
    }
    if config.translate > 0.0 && rng.bernoulli(config.translate) {
        let r = config.max_translate as i64;
        let dx = rng.next_below((2 * r + 1) as u64) as i64 - r;
        let dy = rng.next_below((2 * r + 1) as u64) as i64 - r;
        for e in out.iter_mut() {
            e.x = ((e.x as i64 + dx).clamp(0, sensor.width as i64 - 1)) as u16;
            e.y = ((e.y as i64 + dy).clamp(0, sensor.height as i64 - 1)) as u16;
        }
    }
    if config.time_jitter > 0.0 && rng.bernoulli(config.time_jitter) {
        let s = rng.range_f64(0.9, 1.1);
        time_scale(&mut out, s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder(n: usize, seed: u64) -> (LinearPointEncoder, AxisEmbedding) {
        let mut rng = CounterRng::new(seed);
        (LinearPointEncoder::init(n, &mut rng), AxisEmbedding::init(n, &mut rng))
    }

    fn random_points(rng: &mut CounterRng, n: usize) -> Vec<Point3> {
        (0..n).map(|_| Point3::new(rng.normal(), rng.normal(), rng.normal())).collect()
    }

    #[test]
    fn single_point_serializes_to_three_tokens() {
        let (enc, emb) = encoder(4, 31);
        let seq = serialize_points(&[Point3::new(0.1, -0.2, 0.3)], &enc, &emb).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.segment_starts(), &[0, 1, 2]);
        // Same encoded point, three different scale/shift pairs.
        let r0 = seq.feature_row(0).to_vec();
        let r1 = seq.feature_row(1).to_vec();
        let r2 = seq.feature_row(2).to_vec();
        assert_ne!(r0, r1);
        assert_ne!(r1, r2);
        assert_eq!(seq.gaps(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn serialization_is_permutation_invariant() {
        let mut rng = CounterRng::new(32);
        let (enc, emb) = encoder(3, 33);
        let points = random_points(&mut rng, 20);
        let base = serialize_points(&points, &enc, &emb).unwrap();
        for _ in 0..10 {
            let mut shuffled = points.clone();
            rng.shuffle(&mut shuffled);
            let seq = serialize_points(&shuffled, &enc, &emb).unwrap();
            assert_eq!(seq, base);
        }
    }

    #[test]
    fn segments_are_sorted_with_consecutive_axis_gaps() {
        let points = vec![
            Point3::new(0.4, 2.0, -1.0),
            Point3::new(0.1, 3.0, 0.5),
            Point3::new(0.9, 1.0, 0.0),
            Point3::new(0.2, 0.0, 2.0),
        ];
        let (enc, emb) = encoder(2, 34);
        let seq = serialize_points(&points, &enc, &emb).unwrap();
        assert_eq!(seq.len(), 12);
        // X segment sorted: 0.1, 0.2, 0.4, 0.9.
        assert_eq!(&seq.t()[0..4], &[0.1, 0.2, 0.4, 0.9]);
        let gaps = seq.gaps();
        assert!((gaps[1] - 0.1).abs() < 1e-15);
        assert!((gaps[2] - 0.2).abs() < 1e-15);
        assert!((gaps[3] - 0.5).abs() < 1e-15);
        // Y and Z segments each reset and are sorted on their own axis.
        assert_eq!(gaps[4], 0.0);
        assert_eq!(&seq.t()[4..8], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(gaps[8], 0.0);
        assert_eq!(&seq.t()[8..12], &[-1.0, 0.0, 0.5, 2.0]);
    }

    // Independent reference: greedy max-min with a full double loop over the
    // selected set at every round, no cached distances.
    fn fps_reference(points: &[Point3], k: usize, seed: usize) -> Vec<usize> {
        let mut selected = vec![seed];
        while selected.len() < k {
            let mut best = 0;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..points.len() {
                let mut d = f64::INFINITY;
                for &s in &selected {
                    let ds = points[i].dist2(&points[s]);
                    if ds < d {
                        d = ds;
                    }
                }
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            selected.push(best);
        }
        selected
    }

    #[test]
    fn fps_trivial_cases() {
        let mut rng = CounterRng::new(35);
        let points = random_points(&mut rng, 6);
        assert_eq!(fps(&points, 1, 2).unwrap(), vec![2]);
        let all = fps(&points, 6, 0).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
        assert!(fps(&points, 7, 0).is_err());
    }

    #[test]
    fn fps_matches_brute_force_reference() {
        let points = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(1.0, 0.0, 1.0),
            Point3::new(0.0, 1.0, 1.0),
            Point3::new(1.0, 1.0, 1.0),
        ];
        assert_eq!(fps(&points, 3, 0).unwrap(), fps_reference(&points, 3, 0));
        let mut rng = CounterRng::new(36);
        for trial in 0..20 {
            let pts = random_points(&mut rng, 17);
            let k = 1 + (trial % 17);
            assert_eq!(fps(&pts, k, 0).unwrap(), fps_reference(&pts, k, 0));
        }
    }

    #[test]
    fn fps_canonical_seed_ignores_permutation() {
        let mut rng = CounterRng::new(37);
        let points = random_points(&mut rng, 24);
        let base: Vec<Point3> =
            fps_canonical(&points, 6).unwrap().iter().map(|&i| points[i]).collect();
        for _ in 0..5 {
            let mut shuffled = points.clone();
            rng.shuffle(&mut shuffled);
            let got: Vec<Point3> =
                fps_canonical(&shuffled, 6).unwrap().iter().map(|&i| shuffled[i]).collect();
            assert_eq!(got, base);
        }
    }

    #[test]
    fn knn_trivial_and_collinear() {
        let line: Vec<Point3> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let groups = knn_group(&line, &[0], 2).unwrap();
        assert_eq!(groups, vec![vec![0, 1]]);
        let self_groups = knn_group(&line, &[2], 1).unwrap();
        assert_eq!(self_groups, vec![vec![2]]);
    }

    #[test]
    fn knn_matches_sort_based_reference() {
        let mut rng = CounterRng::new(38);
        let points = random_points(&mut rng, 64);
        let centers: Vec<usize> = (0..8).map(|i| i * 7).collect();
        let groups = knn_group(&points, &centers, 8).unwrap();
        for (g, &c) in groups.iter().zip(&centers) {
            let mut all: Vec<(f64, usize)> =
                points.iter().enumerate().map(|(i, p)| (p.dist2(&points[c]), i)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = all[..8].iter().map(|&(_, i)| i).collect();
            assert_eq!(g, &want);
        }
    }

    #[test]
    fn token_ids_follow_the_formula() {
        let sensor = Sensor::new(2, 2);
        let e1 = EventRecord { t: 0, x: 1, y: 0, polarity: false };
        let e2 = EventRecord { t: 1, x: 0, y: 1, polarity: true };
        assert_eq!(event_token_id(&e1, sensor), 1);
        assert_eq!(event_token_id(&e2, sensor), 6);
    }

    #[test]
    fn token_ids_are_injective_on_the_sensor() {
        let sensor = Sensor::new(3, 2);
        let mut seen = vec![false; sensor.vocab()];
        for p in [false, true] {
            for y in 0..2u16 {
                for x in 0..3u16 {
                    let id = event_token_id(&EventRecord { t: 0, x, y, polarity: p }, sensor);
                    assert!(!seen[id as usize]);
                    seen[id as usize] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn tokenize_gives_zero_gap_for_equal_timestamps() {
        let sensor = Sensor::new(2, 2);
        let mut rng = CounterRng::new(39);
        let table = Tensor::init_uniform(sensor.vocab(), 3, &mut rng);
        let events = vec![
            EventRecord { t: 5, x: 0, y: 0, polarity: false },
            EventRecord { t: 5, x: 1, y: 1, polarity: true },
            EventRecord { t: 9, x: 1, y: 0, polarity: false },
        ];
        let seq = tokenize_events(&events, sensor, &table).unwrap();
        let gaps = seq.gaps();
        assert_eq!(gaps[1], 0.0);
        assert!((gaps[2] - 4e-6).abs() < 1e-18);
        assert_eq!(seq.feature_row(0), table.row(0));
    }

    #[test]
    fn tokenize_rejects_out_of_bounds() {
        let sensor = Sensor::new(2, 2);
        let table = Tensor::zeros(8, 2);
        let events = vec![EventRecord { t: 0, x: 2, y: 0, polarity: false }];
        assert_eq!(
            tokenize_events(&events, sensor, &table),
            Err(GeometryError::OutOfBounds { index: 0 })
        );
    }

    fn fixture_stream(base: u64) -> Vec<EventRecord> {
        (0..5)
            .map(|i| EventRecord { t: base + 10 * i, x: i as u16, y: 0, polarity: i % 2 == 0 })
            .collect()
    }

    #[test]
    fn cutmix_zero_window_is_identity() {
        let a = fixture_stream(100);
        let b = fixture_stream(500);
        let mixed = event_cutmix_window(&a, 0, &b, 1, 2, 100, 0, 500);
        assert_eq!(mixed.events, a);
        assert_eq!(mixed.lambda, 0.0);
        assert_eq!(mixed.label, vec![1.0, 0.0]);
    }

    #[test]
    fn cutmix_full_window_takes_all_of_b() {
        let a = fixture_stream(100);
        let b = fixture_stream(500);
        // Window covers both streams' full durations (length 41 > 40).
        let mixed = event_cutmix_window(&a, 0, &b, 1, 2, 100, 41, 500);
        assert_eq!(mixed.lambda, 1.0);
        assert_eq!(mixed.events.len(), 5);
        // b's events shifted onto a's window start.
        for (e, orig) in mixed.events.iter().zip(&b) {
            assert_eq!(e.t, orig.t - 500 + 100);
            assert_eq!((e.x, e.y, e.polarity), (orig.x, orig.y, orig.polarity));
        }
    }

    #[test]
    fn cutmix_fixture_matches_hand_merge() {
        let a = fixture_stream(100); // t = 100,110,120,130,140
        let b = fixture_stream(500); // t = 500,510,520,530,540
        // Replace a's [110, 135) with b's [505, 530): b events 510, 520 land
        // at 115, 125; a keeps 100 and 140.
        let mixed = event_cutmix_window(&a, 0, &b, 1, 2, 110, 25, 505);
        let times: Vec<u64> = mixed.events.iter().map(|e| e.t).collect();
        assert_eq!(times, vec![100, 115, 125, 140]);
        assert_eq!(mixed.lambda, 0.5);
        assert_eq!(mixed.label, vec![0.5, 0.5]);
    }

    #[test]
    fn cutmix_random_lambda_is_convex() {
        let mut rng = CounterRng::new(40);
        let a = fixture_stream(0);
        let b = fixture_stream(1000);
        for _ in 0..50 {
            let mixed = event_cutmix(&a, 0, &b, 1, 2, &mut rng).unwrap();
            assert!(mixed.lambda >= 0.0 && mixed.lambda <= 1.0);
            let sum: f64 = mixed.label.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for w in mixed.events.windows(2) {
                assert!(w[0].t <= w[1].t);
            }
        }
    }

    #[test]
    fn augment_identity_when_probabilities_are_zero() {
        let mut rng = CounterRng::new(41);
        let sensor = Sensor::new(4, 4);
        let events = fixture_stream(0);
        let out = augment_events(&events, sensor, &AugmentConfig::default(), &mut rng);
        assert_eq!(out, events);
    }

    #[test]
    fn horizontal_flip_mirrors_x() {
        let mut rng = CounterRng::new(42);
        let sensor = Sensor::new(4, 4);
        let events = vec![EventRecord { t: 0, x: 0, y: 1, polarity: true }];
        let cfg = AugmentConfig { flip_h: 1.0, ..AugmentConfig::default() };
        let out = augment_events(&events, sensor, &cfg, &mut rng);
        assert_eq!(out[0].x, 3);
    }

    #[test]
    fn time_scale_rescales_gaps() {
        // Timestamps chosen so scaling by 1.1 stays on the integer grid.
        let mut events: Vec<EventRecord> =
            (0..5).map(|i| EventRecord { t: 100 * i, x: 0, y: 0, polarity: false }).collect();
        time_scale(&mut events, 1.1);
        for (i, e) in events.iter().enumerate() {
            assert_eq!(e.t, 110 * i as u64);
        }
    }
}
