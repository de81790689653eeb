//! Oximetry records: artifact repair, baseline removal and segmentation into
//! labeled fixed-length windows.

use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker for a missing sample in [`Record::samples`].
pub const MISSING: f64 = f64::NAN;

/// Segment classes. The discriminant and selection code works on plain
/// class indices; this enum fixes the N=0, A=1, H=2 convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventClass {
    /// Normal breathing.
    N,
    /// Apnea.
    A,
    /// Hypopnea.
    H,
}

impl EventClass {
    pub const ALL: [EventClass; 3] = [EventClass::N, EventClass::A, EventClass::H];

    pub fn index(self) -> usize {
        match self {
            EventClass::N => 0,
            EventClass::A => 1,
            EventClass::H => 2,
        }
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "N" => Some(EventClass::N),
            "A" => Some(EventClass::A),
            "H" => Some(EventClass::H),
            _ => None,
        }
    }

    /// Collapses apnea and hypopnea into a single event class (index 1).
    pub fn merged_index(self) -> usize {
        match self {
            EventClass::N => 0,
            EventClass::A | EventClass::H => 1,
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventClass::N => "N",
            EventClass::A => "A",
            EventClass::H => "H",
        };
        f.write_str(s)
    }
}

/// Human-readable name of a class index for `n_classes`-way labelings.
pub fn class_name(n_classes: usize, idx: usize) -> String {
    match (n_classes, idx) {
        (3, i) => EventClass::from_index(i).map(|c| c.to_string()).unwrap_or_else(|| i.to_string()),
        (2, 0) => "N".to_string(),
        (2, 1) => "A+H".to_string(),
        (_, i) => i.to_string(),
    }
}

/// Maps three-class labels onto the binary N vs A+H labeling.
pub fn merge_ah(labels: &[EventClass]) -> Vec<usize> {
    labels.iter().map(|c| c.merged_index()).collect()
}

/// Half-open interval `[start, end)` in seconds (= samples at 1 Hz).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, other: &Interval) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

/// An annotated apnea or hypopnea event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub start_sec: usize,
    pub end_sec: usize,
    pub class: EventClass,
}

impl Event {
    pub fn interval(&self) -> Interval {
        Interval {
            start: self.start_sec,
            end: self.end_sec,
        }
    }
}

/// One full-night 1 Hz oximetry recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    /// Saturation in percent; [`MISSING`] (NaN) marks absent samples.
    pub samples: Vec<f64>,
    pub events: Vec<Event>,
    /// Invalid runs too long to interpolate credibly, found by [`repair`].
    pub disconnections: Vec<Interval>,
}

impl Record {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, events: Vec<Event>) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::InvalidSignal(format!("record `{id}` is empty")));
        }
        for ev in &events {
            if ev.class == EventClass::N {
                return Err(Error::InvalidSignal(format!(
                    "record `{id}`: events must be A or H"
                )));
            }
            if ev.start_sec >= ev.end_sec || ev.end_sec > samples.len() {
                return Err(Error::InvalidSignal(format!(
                    "record `{id}`: event [{}, {}) outside [0, {}]",
                    ev.start_sec,
                    ev.end_sec,
                    samples.len()
                )));
            }
        }
        Ok(Record {
            id,
            samples,
            events,
            disconnections: Vec::new(),
        })
    }

    pub fn duration_hours(&self) -> f64 {
        self.samples.len() as f64 / 3600.0
    }

    /// Ground-truth AHI from the annotations: events per hour.
    pub fn annotated_ahi(&self) -> f64 {
        self.events.len() as f64 / self.duration_hours()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    pub lower: f64,
    pub upper: f64,
    /// Invalid runs strictly longer than this many seconds become disconnections.
    pub max_gap_sec: usize,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            lower: 50.0,
            upper: 100.0,
            max_gap_sec: 60,
        }
    }
}

/// Replaces missing and implausible samples by linear interpolation between
/// the nearest valid neighbours (nearest-value extension at the edges).
pub fn repair(record: &Record, cfg: &RepairConfig) -> Result<Record> {
    let valid = |x: f64| x.is_finite() && x >= cfg.lower && x <= cfg.upper;
    let n = record.samples.len();
    if n == 0 || !record.samples.iter().any(|&x| valid(x)) {
        return Err(Error::UnrecoverableRecord(record.id.clone()));
    }

    let mut out = record.samples.clone();
    let mut disconnections = record.disconnections.clone();
    let mut i = 0;
    while i < n {
        if valid(out[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !valid(out[i]) {
            i += 1;
        }
        let end = i;
        if end - start > cfg.max_gap_sec {
            disconnections.push(Interval { start, end });
        }
        match (start.checked_sub(1), (end < n).then_some(end)) {
            (Some(l), Some(r)) => {
                let (xl, xr) = (out[l], out[r]);
                let span = (r - l) as f64;
                for (k, v) in out[start..end].iter_mut().enumerate() {
                    let t = (start + k - l) as f64 / span;
                    *v = xl + (xr - xl) * t;
                }
            }
            (Some(l), None) => {
                let xl = out[l];
                out[start..end].iter_mut().for_each(|v| *v = xl);
            }
            (None, Some(r)) => {
                let xr = out[r];
                out[start..end].iter_mut().for_each(|v| *v = xr);
            }
            (None, None) => unreachable!("at least one valid sample exists"),
        }
    }
    disconnections.sort();
    disconnections.dedup();

    Ok(Record {
        id: record.id.clone(),
        samples: out,
        events: record.events.clone(),
        disconnections,
    })
}

/// Centered moving average of `window` samples with half-sample symmetric
/// edge padding. The window covering index `t` is `[t - window/2, t + window - window/2)`.
pub fn moving_average(x: &[f64], window: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if window == 0 || n < window {
        return Err(Error::ShortRecord { len: n, window });
    }
    let half = (window / 2) as isize;
    let reflect = |i: isize| -> f64 {
        let n = n as isize;
        let j = if i < 0 {
            -i - 1
        } else if i >= n {
            2 * n - i - 1
        } else {
            i
        };
        x[j as usize]
    };
    // prefix sums over the padded signal
    let lo = -half;
    let hi = n as isize + window as isize - half;
    let mut prefix = Vec::with_capacity((hi - lo + 1) as usize);
    prefix.push(0.0);
    let mut acc = 0.0;
    for i in lo..hi {
        acc += reflect(i);
        prefix.push(acc);
    }
    let w = window as f64;
    Ok((0..n)
        .map(|t| {
            let a = t; // padded index of t - half
            (prefix[a + window] - prefix[a]) / w
        })
        .collect())
}

/// Subtracts the slow baseline (order-`window` centered moving average).
pub fn baseline_filter(record: &Record, window: usize) -> Result<Record> {
    let baseline = moving_average(&record.samples, window)?;
    let samples = record
        .samples
        .iter()
        .zip(&baseline)
        .map(|(x, b)| x - b)
        .collect();
    Ok(Record {
        samples,
        ..record.clone()
    })
}

/// A fixed-length labeled window of a filtered record.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub label: EventClass,
    pub source_id: String,
    pub start_sec: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub length: usize,
    pub overlap: f64,
    /// Seconds of event overlap needed to label a window A or H.
    pub min_event_overlap_sec: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            length: 128,
            overlap: 0.75,
            min_event_overlap_sec: 10,
        }
    }
}

impl SegmentConfig {
    pub fn stride(&self) -> usize {
        ((self.length as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::config("segment length must be positive"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::config("overlap fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Labels a window: A if enough of it overlaps apneas, else H for
/// hypopneas, else N.
pub fn label_window(window: &Interval, events: &[Event], min_overlap: usize) -> EventClass {
    let overlap_with = |class| -> usize {
        events
            .iter()
            .filter(|e| e.class == class)
            .map(|e| window.overlap(&e.interval()))
            .sum()
    };
    if overlap_with(EventClass::A) >= min_overlap {
        EventClass::A
    } else if overlap_with(EventClass::H) >= min_overlap {
        EventClass::H
    } else {
        EventClass::N
    }
}

/// Cuts a record into overlapping windows, dropping windows that touch a
/// disconnection or contain non-finite values.
pub fn segment(record: &Record, cfg: &SegmentConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let len = cfg.length;
    let total = record.samples.len();
    if total < len {
        return Ok(Vec::new());
    }
    let stride = cfg.stride();
    let mut out = Vec::with_capacity((total - len) / stride + 1);
    for start in (0..=total - len).step_by(stride) {
        let window = Interval {
            start,
            end: start + len,
        };
        if record
            .disconnections
            .iter()
            .any(|d| window.overlap(d) > 0)
        {
            continue;
        }
        let values = &record.samples[start..start + len];
        if values.iter().any(|v| !v.is_finite()) {
            continue;
        }
        out.push(Segment {
            values: values.to_vec(),
            label: label_window(&window, &record.events, cfg.min_event_overlap_sec),
            source_id: record.id.clone(),
            start_sec: start,
        });
    }
    Ok(out)
}

/// Column-stacked signals with per-column class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMatrix {
    signals: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl SegmentMatrix {
    pub fn new(signals: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if signals.ncols() != labels.len() {
            return Err(Error::Shape {
                what: "segment labels",
                expected: signals.ncols(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidSignal(format!(
                "label {bad} outside {n_classes} classes"
            )));
        }
        Ok(Self {
            signals,
            labels,
            n_classes,
        })
    }

    /// Three-class matrix (N, A, H) from segments of equal length.
    pub fn from_segments(segments: &[Segment]) -> Result<Self> {
        let dim = segments.first().map_or(0, |s| s.values.len());
        let mut signals = Array2::zeros((dim, segments.len()));
        for (j, s) in segments.iter().enumerate() {
            if s.values.len() != dim {
                return Err(Error::Shape {
                    what: "segment length",
                    expected: dim,
                    found: s.values.len(),
                });
            }
            signals
                .column_mut(j)
                .assign(&ArrayView1::from(s.values.as_slice()));
        }
        let labels = segments.iter().map(|s| s.label.index()).collect();
        Self::new(signals, labels, 3)
    }

    pub fn signals(&self) -> ArrayView2<'_, f64> {
        self.signals.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Signal length N (rows).
    pub fn dim(&self) -> usize {
        self.signals.nrows()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> SegmentMatrix {
        SegmentMatrix {
            signals: self.signals.select(Axis(1), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn class_signals(&self, class: usize) -> Array2<f64> {
        self.signals.select(Axis(1), &self.indices_of_class(class))
    }

    /// Relabels a three-class matrix as N vs A+H.
    pub fn merge_ah(&self) -> Result<SegmentMatrix> {
        if self.n_classes != 3 {
            return Err(Error::config("A+H merge needs a three-class matrix"));
        }
        let labels = self
            .labels
            .iter()
            .map(|&l| usize::from(l != EventClass::N.index()))
            .collect();
        SegmentMatrix::new(self.signals.clone(), labels, 2)
    }

    /// Draws disjoint balanced subsets: `quotas[s]` columns of every class
    /// for subset `s`, sampled without replacement, columns shuffled.
    pub fn balanced_subsets(&self, quotas: &[usize], seed: u64) -> Result<Vec<SegmentMatrix>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: usize = quotas.iter().sum();
        let mut picks: Vec<Vec<usize>> = vec![Vec::new(); quotas.len()];
        for class in 0..self.n_classes {
            let members = self.indices_of_class(class);
            if members.len() < total {
                return Err(Error::Quota {
                    class: class_name(self.n_classes, class),
                    available: members.len(),
                    requested: total,
                });
            }
            let drawn = index::sample(&mut rng, members.len(), total).into_vec();
            let mut offset = 0;
            for (s, &q) in quotas.iter().enumerate() {
                picks[s].extend(drawn[offset..offset + q].iter().map(|&k| members[k]));
                offset += q;
            }
        }
        Ok(picks
            .into_iter()
            .map(|mut idx| {
                idx.shuffle(&mut rng);
                self.select(&idx)
            })
            .collect())
    }
}

/// Balanced training set: `quota` segments of each of N, A and H.
pub fn assemble(segments: &[Segment], quota: usize, seed: u64) -> Result<SegmentMatrix> {
    let matrix = SegmentMatrix::from_segments(segments)?;
    Ok(matrix
        .balanced_subsets(&[quota], seed)?
        .pop()
        .expect("one subset requested"))
}
