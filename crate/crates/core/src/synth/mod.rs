//! Deterministic synthetic scenes standing in for domestic recordings,
//! a strongly-labelled noise pool and noisy test conditions.

pub mod fixture;
mod manifest;

pub use manifest::{NoiseSpec, SceneEntry, SceneSetManifest};

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{mix_at_snr, tile, Waveform};
use crate::error::{Error, Result};
use crate::events::{EventInstance, Timeline};
use crate::seed;

pub const FADE_SECONDS: f64 = 0.010;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Tone,
    Chirp,
    BandNoise,
    ToneCluster,
}

/// Acoustic recipe for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPrototype {
    pub class_name: String,
    pub synth_kind: SynthKind,
    /// `(low Hz, high Hz)`
    pub band: (f64, f64),
    pub base_amplitude: f64,
}

impl EventPrototype {
    pub fn center_hz(&self) -> f64 {
        0.5 * (self.band.0 + self.band.1)
    }
}

pub type Prototypes = BTreeMap<String, EventPrototype>;

fn apply_fades(x: &mut [f64], sample_rate: u32) {
    let n = x.len();
    let fade = ((FADE_SECONDS * f64::from(sample_rate)).round() as usize).min(n / 2).max(1);
    for i in 0..fade.min(n) {
        let g = 0.5 - 0.5 * (PI * (i as f64 + 0.5) / fade as f64).cos();
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}

fn band_noise(n: usize, sr: f64, band: (f64, f64), rng: &mut impl Rng) -> Vec<f64> {
    let mut spec: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    let k_lo = (band.0 * n as f64 / sr).ceil() as usize;
    let k_hi = ((band.1 * n as f64 / sr).floor() as usize).min((n - 1) / 2);
    for k in k_lo.max(1)..=k_hi {
        let ph = rng.random_range(0.0..2.0 * PI);
        let c = Complex64::from_polar(1.0, ph);
        spec[k] = c;
        spec[n - k] = c.conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let mut x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let p = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p > 0.0 {
        let g = (0.5 / p).sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Renders `duration` seconds of `p`, unit-peak-ish scaled by its base
/// amplitude, with 10 ms raised-cosine fades.
pub fn render_event(p: &EventPrototype, duration: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::BadParameter(format!("event duration must be positive, got {duration}")));
    }
    let sr = f64::from(sample_rate);
    if !(0.0 < p.band.0 && p.band.0 < p.band.1 && p.band.1 < sr / 2.0) {
        return Err(Error::BadParameter(format!("band {:?} of `{}` outside (0, {})", p.band, p.class_name, sr / 2.0)));
    }
    let n = ((duration * sr).round() as usize).max(1);
    let mut rng = seed::rng(seed);
    let (lo, hi) = p.band;
    let width = hi - lo;
    let mut x: Vec<f64> = match p.synth_kind {
        SynthKind::Tone => {
            let f = p.center_hz();
            let ph = rng.random_range(0.0..2.0 * PI);
            (0..n).map(|i| (2.0 * PI * f * i as f64 / sr + ph).sin()).collect()
        }
        SynthKind::Chirp => {
            // triangular sweep across the inner 80% of the band, 40 ms period
            let (f0, f1) = (lo + 0.1 * width, hi - 0.1 * width);
            let period = 0.040;
            let mut phase = rng.random_range(0.0..2.0 * PI);
            let t0 = rng.random_range(0.0..period);
            (0..n)
                .map(|i| {
                    let t = (i as f64 / sr + t0) / period;
                    let tri = 1.0 - (2.0 * (t - t.floor()) - 1.0).abs();
                    let f = f0 + (f1 - f0) * tri;
                    phase += 2.0 * PI * f / sr;
                    phase.sin()
                })
                .collect()
        }
        SynthKind::ToneCluster => {
            let k = 4;
            let parts: Vec<(f64, f64, f64)> = (0..k)
                .map(|j| {
                    let f = lo + width * (j as f64 + 0.5) / k as f64;
                    (f, rng.random_range(0.0..2.0 * PI), rng.random_range(3.0..7.0))
                })
                .collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    parts
                        .iter()
                        .map(|&(f, ph, am)| (2.0 * PI * f * t + ph).sin() * (0.8 + 0.2 * (2.0 * PI * am * t).sin()))
                        .sum::<f64>()
                        / (k as f64).sqrt()
                })
                .collect()
        }
        SynthKind::BandNoise => band_noise(n, sr, p.band, &mut rng),
    };
    apply_fades(&mut x, sample_rate);
    let amp = p.base_amplitude;
    x.iter_mut().for_each(|v| *v *= amp);
    Waveform::new(x, sample_rate)
}

/// One event placement inside a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub class_name: String,
    pub onset: f64,
    pub duration: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub clip_id: String,
    pub clip_duration: f64,
    pub sample_rate: u32,
    pub events: Vec<SceneEvent>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn n_samples(&self) -> usize {
        (self.clip_duration * f64::from(self.sample_rate)).round() as usize
    }

    pub fn timeline(&self) -> Result<Timeline> {
        let events = self
            .events
            .iter()
            .map(|e| EventInstance::new(e.class_name.clone(), e.onset, (e.onset + e.duration).min(self.clip_duration)))
            .collect();
        Timeline::new(self.clip_id.clone(), self.clip_duration, events)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            if !(e.gain > 0.0 && e.duration > 0.0 && e.onset >= 0.0 && e.onset + e.duration <= self.clip_duration + 1e-9) {
                return Err(Error::BadParameter(format!("scene `{}`: event {} out of bounds", self.clip_id, e.class_name)));
            }
        }
        Ok(())
    }
}

/// Clip-length track holding only event `index` of `spec`.
pub fn scene_event_track(spec: &SceneSpec, index: usize, protos: &Prototypes) -> Result<Waveform> {
    let e = spec.events.get(index).ok_or_else(|| Error::BadParameter(format!("no event {index}")))?;
    let p = protos.get(&e.class_name).ok_or_else(|| Error::UnknownClass(e.class_name.clone()))?;
    let sr = spec.sample_rate;
    let ev = render_event(p, e.duration, sr, seed::derive(spec.seed, "event", index as u64))?;
    let mut track = Waveform::silence(spec.n_samples(), sr);
    track.add_at(&ev.scaled(e.gain), (e.onset * f64::from(sr)).round() as usize)?;
    Ok(track)
}

/// Sums the positioned events of `spec` over a silent bed.
pub fn compose_scene(spec: &SceneSpec, protos: &Prototypes) -> Result<(Waveform, Timeline)> {
    spec.validate()?;
    let mut bed = Waveform::silence(spec.n_samples(), spec.sample_rate);
    for i in 0..spec.events.len() {
        bed = bed.add(&scene_event_track(spec, i, protos)?)?;
    }
    Ok((bed, spec.timeline()?))
}

/// One noise component of a noisy clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEvent {
    pub class_name: String,
    pub gain: f64,
    pub seed: u64,
}

/// Length of each rendered noise segment before tiling to the clip length.
pub const NOISE_SEGMENT_SECONDS: f64 = 3.0;

/// Stationary noise bed: every event rendered, tiled to `len` and summed.
pub fn noise_bed(noise_events: &[NoiseEvent], len: usize, sample_rate: u32, protos: &Prototypes) -> Result<Waveform> {
    if noise_events.is_empty() {
        return Err(Error::BadParameter("noisy clip needs at least one noise event".into()));
    }
    let mut bed = Waveform::silence(len, sample_rate);
    for ne in noise_events {
        let p = protos.get(&ne.class_name).ok_or_else(|| Error::UnknownClass(ne.class_name.clone()))?;
        let seg = render_event(p, NOISE_SEGMENT_SECONDS, sample_rate, ne.seed)?;
        bed = bed.add(&tile(&seg, len)?.scaled(ne.gain))?;
    }
    Ok(bed)
}

/// `clean` with a stationary noise bed mixed in at `snr_db`.
pub fn make_noisy_clip(clean: &Waveform, noise_events: &[NoiseEvent], snr_db: f64, protos: &Prototypes) -> Result<Waveform> {
    if !snr_db.is_finite() {
        return Err(Error::BadParameter(format!("snr_db must be finite, got {snr_db}")));
    }
    let bed = noise_bed(noise_events, clean.len(), clean.sample_rate(), protos)?;
    mix_at_snr(clean, &bed, snr_db, 0)
}

/// Knobs for drawing random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneDraw {
    pub clip_duration: f64,
    pub max_events: usize,
    pub min_event_seconds: f64,
    pub max_event_seconds: f64,
    pub min_gain: f64,
    pub max_gain: f64,
}

impl Default for SceneDraw {
    fn default() -> Self {
        Self { clip_duration: 10.0, max_events: 3, min_event_seconds: 1.0, max_event_seconds: 4.0, min_gain: 0.6, max_gain: 1.0 }
    }
}

/// Draws a scene with `1..=max_events` events. `first_class` pins the class
/// of the first event so callers can guarantee class coverage.
pub fn random_scene(
    clip_id: &str,
    classes: &[String],
    draw: &SceneDraw,
    sample_rate: u32,
    scene_seed: u64,
    first_class: Option<usize>,
) -> SceneSpec {
    let mut rng = seed::rng(seed::derive(scene_seed, "layout", 0));
    let n = rng.random_range(1..=draw.max_events.max(1));
    let events = (0..n)
        .map(|i| {
            let c = match (i, first_class) {
                (0, Some(c)) => c,
                _ => rng.random_range(0..classes.len()),
            };
            let duration = rng.random_range(draw.min_event_seconds..=draw.max_event_seconds).min(draw.clip_duration);
            let onset = rng.random_range(0.0..=(draw.clip_duration - duration));
            // millisecond grid, matching serialized labels
            let onset = (onset * 1000.0).floor() / 1000.0;
            let duration = (duration * 1000.0).floor() / 1000.0;
            SceneEvent { class_name: classes[c].clone(), onset, duration, gain: rng.random_range(draw.min_gain..=draw.max_gain) }
        })
        .collect();
    SceneSpec { clip_id: clip_id.to_string(), clip_duration: draw.clip_duration, sample_rate, events, seed: scene_seed }
}
