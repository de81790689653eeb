//! Synthetic oximetry cohorts with planted apnea and hypopnea desaturations
//! and known AHI.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::derived_seed;
use crate::signal::{Event, EventClass, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_records: usize,
    pub duration_hours: f64,
    /// Mixture weights over the normal, mild, moderate and severe AHI bands.
    pub band_weights: [f64; 4],
    /// Upper AHI of the severe band.
    pub max_ahi: f64,
    /// Probability that a planted event is an apnea.
    pub apnea_fraction: f64,
    pub baseline: f64,
    pub apnea_depth: f64,
    pub hypopnea_depth: f64,
    /// Relative jitter of hypopnea depths, uniform in [1 - j, 1 + j].
    pub hypopnea_jitter: f64,
    pub fall_tau_sec: f64,
    pub recovery_tau_sec: f64,
    pub min_event_sec: usize,
    pub max_event_sec: usize,
    /// Minimum quiet time after each event.
    pub min_gap_sec: usize,
    pub breathing_amplitude: f64,
    pub breathing_period_sec: f64,
    pub noise_std: f64,
    /// Fraction of isolated samples replaced by the missing marker.
    pub missing_fraction: f64,
    /// Number of 2-minute sensor disconnections per record.
    pub disconnections: usize,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_records: 120,
            duration_hours: 8.0,
            band_weights: [1.0; 4],
            max_ahi: 60.0,
            apnea_fraction: 0.5,
            baseline: 96.0,
            apnea_depth: 6.0,
            hypopnea_depth: 3.0,
            hypopnea_jitter: 0.5,
            fall_tau_sec: 8.0,
            recovery_tau_sec: 6.0,
            min_event_sec: 10,
            max_event_sec: 40,
            min_gap_sec: 20,
            breathing_amplitude: 0.5,
            breathing_period_sec: 50.0,
            noise_std: 0.25,
            missing_fraction: 0.0,
            disconnections: 0,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Spec(m.to_string()));
        if !(self.duration_hours > 0.0) {
            return bad("duration_hours must be positive");
        }
        if self.band_weights.iter().any(|w| !(*w >= 0.0)) || self.band_weights.iter().sum::<f64>() <= 0.0 {
            return bad("band weights must be nonnegative with a positive sum");
        }
        if !(self.max_ahi > 30.0) {
            return bad("max_ahi must exceed 30");
        }
        if !(0.0..=1.0).contains(&self.apnea_fraction) {
            return bad("apnea_fraction outside [0, 1]");
        }
        if !(self.apnea_depth > 0.0 && self.hypopnea_depth > 0.0) {
            return bad("depths must be positive");
        }
        if self.hypopnea_depth >= self.apnea_depth {
            return bad("hypopnea depth must be below apnea depth");
        }
        if !(0.0..1.0).contains(&self.hypopnea_jitter) {
            return bad("hypopnea_jitter outside [0, 1)");
        }
        if self.min_event_sec < 10 || self.max_event_sec < self.min_event_sec {
            return bad("event durations must satisfy 10 <= min <= max");
        }
        if !(self.fall_tau_sec > 0.0 && self.recovery_tau_sec > 0.0 && self.breathing_period_sec > 0.0) {
            return bad("time constants must be positive");
        }
        if !(self.noise_std >= 0.0 && self.breathing_amplitude >= 0.0) {
            return bad("noise and oscillation amplitudes must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction outside [0, 1)");
        }
        if !(50.0..=100.0).contains(&self.baseline) {
            return bad("baseline outside [50, 100]");
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_hours * 3600.0).round() as usize
    }
}

/// A generated record and its planted AHI.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub record: Record,
    pub true_ahi: f64,
}

const BANDS: [(f64, f64); 3] = [(0.0, 5.0), (5.0, 15.0), (15.0, 30.0)];

fn draw_ahi(spec: &CohortSpec, rng: &mut ChaCha8Rng) -> f64 {
    let total: f64 = spec.band_weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut band = 3;
    for (b, w) in spec.band_weights.iter().enumerate() {
        if u < *w {
            band = b;
            break;
        }
        u -= w;
    }
    let (lo, hi) = if band < 3 { BANDS[band] } else { (30.0, spec.max_ahi) };
    rng.random_range(lo..hi)
}

/// Generates the whole cohort. Record `i` depends only on the seed and `i`.
pub fn generate(spec: &CohortSpec) -> Result<Vec<SynthRecord>> {
    spec.validate()?;
    let hours = spec.n_samples() as f64 / 3600.0;
    (0..spec.n_records)
        .map(|i| {
            let seed = derived_seed(spec.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ahi = draw_ahi(spec, &mut rng);
            let n_events = (ahi * hours).round() as usize;
            generate_record(&format!("rec{i:04}"), n_events, spec, rng.random())
        })
        .collect()
}

/// One record with exactly `n_events` planted events.
pub fn generate_record(id: &str, n_events: usize, spec: &CohortSpec, seed: u64) -> Result<SynthRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = spec.n_samples();
    let events = place_events(n_events, len, spec, &mut rng)?;

    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let omega = std::f64::consts::TAU / spec.breathing_period_sec;
    let mut clean: Vec<f64> = (0..len)
        .map(|t| spec.baseline + spec.breathing_amplitude * (omega * t as f64 + phase).sin())
        .collect();
    for ev in &events {
        carve(&mut clean, ev, spec, &mut rng);
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Spec(e.to_string()))?;
    let mut samples: Vec<f64> = clean
        .iter()
        .map(|&v| (v.clamp(50.0, 100.0) + noise.sample(&mut rng)).clamp(0.0, 100.0))
        .collect();

    if spec.missing_fraction > 0.0 {
        for s in samples.iter_mut() {
            if rng.random::<f64>() < spec.missing_fraction {
                *s = f64::NAN;
            }
        }
    }
    for _ in 0..spec.disconnections {
        let gap = 120.min(len);
        let start = rng.random_range(0..=len - gap);
        samples[start..start + gap].fill(f64::NAN);
    }

    let true_ahi = n_events as f64 / (len as f64 / 3600.0);
    Ok(SynthRecord {
        record: Record::new(id, samples, events)?,
        true_ahi,
    })
}

/// Non-overlapping events at uniformly random positions: the free time is split
/// by sorted uniform draws.
fn place_events(n: usize, len: usize, spec: &CohortSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Event>> {
    let durations: Vec<usize> = (0..n)
        .map(|_| rng.random_range(spec.min_event_sec..=spec.max_event_sec))
        .collect();
    let required: usize = durations.iter().map(|d| d + spec.min_gap_sec).sum();
    if required > len {
        return Err(Error::Spec(format!(
            "{n} events need {required} s but the record has {len} s"
        )));
    }
    let slack = len - required;
    let mut offsets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    let mut used = 0;
    let mut events = Vec::with_capacity(n);
    for (offset, d) in offsets.into_iter().zip(durations) {
        let start = offset + used;
        let class = if rng.random::<f64>() < spec.apnea_fraction {
            EventClass::A
        } else {
            EventClass::H
        };
        events.push(Event {
            start_sec: start,
            end_sec: start + d,
            class,
        });
        used += d + spec.min_gap_sec;
    }
    Ok(events)
}

/// Exponential fall over the event, exponential recovery afterwards.
/// Hypopneas get a jittered depth, fall rate and a ripple.
fn carve(x: &mut [f64], ev: &Event, spec: &CohortSpec, rng: &mut ChaCha8Rng) {
    let (depth, fall_tau, ripple, ripple_period) = match ev.class {
        EventClass::A => (spec.apnea_depth, spec.fall_tau_sec, 0.0, 1.0),
        _ => {
            let j = spec.hypopnea_jitter;
            (
                spec.hypopnea_depth * rng.random_range(1.0 - j..=1.0 + j),
                spec.fall_tau_sec * rng.random_range(1.0 - j..=1.0 + j),
                rng.random_range(0.0..0.3),
                rng.random_range(6.0..15.0),
            )
        }
    };
    let mut at_end = 0.0;
    for t in ev.start_sec..ev.end_sec {
        let dt = (t - ev.start_sec) as f64;
        let mut drop = depth * (1.0 - (-dt / fall_tau).exp());
        drop *= 1.0 + ripple * (std::f64::consts::TAU * dt / ripple_period).sin();
        x[t] -= drop;
        at_end = drop;
    }
    let tail = (spec.recovery_tau_sec * 8.0).ceil() as usize;
    for (k, v) in x.iter_mut().skip(ev.end_sec).take(tail).enumerate() {
        *v -= at_end * (-((k + 1) as f64) / spec.recovery_tau_sec).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortSpec {
        CohortSpec {
            n_records: 4,
            duration_hours: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rate_is_flat() {
        let r = generate_record("z", 0, &small(), 1).unwrap();
        assert_eq!(r.true_ahi, 0.0);
        assert!(r.record.events.is_empty());
        let mean = r.record.samples.iter().sum::<f64>() / r.record.samples.len() as f64;
        assert!((mean - 96.0).abs() < 0.1);
    }

    #[test]
    fn planted_count_sets_ahi() {
        let spec = CohortSpec {
            duration_hours: 8.0,
            ..Default::default()
        };
        let r = generate_record("x", 120, &spec, 5).unwrap();
        assert_eq!(r.true_ahi, 15.0);
        assert_eq!(r.record.events.len(), 120);
        assert_eq!(r.record.annotated_ahi(), 15.0);
    }

    #[test]
    fn events_disjoint_and_long_enough() {
        let r = generate_record("x", 50, &small(), 9).unwrap();
        for w in r.record.events.windows(2) {
            assert!(w[0].end_sec + small().min_gap_sec <= w[1].start_sec);
        }
        assert!(r.record.events.iter().all(|e| e.end_sec - e.start_sec >= 10));
        assert!(r.record.samples.iter().all(|v| (0.0..=100.0).contains(v)));
    }

    #[test]
    fn infeasible_rate() {
        assert!(matches!(generate_record("x", 200, &small(), 0), Err(Error::Spec(_))));
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record.samples, y.record.samples);
            assert_eq!(x.record.events, y.record.events);
        }
    }

    #[test]
    fn invalid_specs() {
        let s = CohortSpec {
            hypopnea_depth: 7.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = CohortSpec {
            min_event_sec: 5,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }
}
