//! Per-class synthetic event archetypes.
//!
//! Each event class is rendered by one of four signal families that mirror
//! its high-level acoustic characteristic: steady band-limited noise, noise
//! with superimposed transients, harmonic tones with a moving pitch contour,
//! and short stable high-pitched tone bursts.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{proposed_map, AccClass, EventClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    StationaryNoise,
    NoisePlusImpulses,
    PitchContourTone,
    StableHighTone,
}

impl Family {
    pub fn for_acc(acc: AccClass) -> Family {
        match acc {
            AccClass::A => Family::StationaryNoise,
            AccClass::B => Family::NoisePlusImpulses,
            AccClass::C => Family::PitchContourTone,
            AccClass::D => Family::StableHighTone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub klass: EventClass,
    pub family: Family,
    /// Noise band in Hz (noise families only).
    pub band: (f64, f64),
    /// Fundamental range in Hz (tonal families only).
    pub pitch: (f64, f64),
    /// Uniform duration range in seconds.
    pub duration: (f64, f64),
    /// Transients per second (`NoisePlusImpulses`) or bursts per second
    /// (`StableHighTone`).
    pub rate: f64,
}

pub const LONG_DURATION: (f64, f64) = (4.0, 8.0);
pub const SHORT_DURATION: (f64, f64) = (0.3, 2.0);

pub fn archetype(klass: EventClass) -> ArchetypeSpec {
    use EventClass::*;
    let family = Family::for_acc(proposed_map().get(klass));
    let duration = match family {
        Family::StationaryNoise | Family::NoisePlusImpulses => LONG_DURATION,
        Family::PitchContourTone | Family::StableHighTone => SHORT_DURATION,
    };
    let (band, pitch, rate) = match klass {
        VacuumCleaner => ((900.0, 3200.0), (0.0, 0.0), 0.0),
        Blender => ((150.0, 800.0), (0.0, 0.0), 0.0),
        Frying => ((3800.0, 7600.0), (0.0, 0.0), 0.0),
        ElectricShaverToothbrush => ((1800.0, 4600.0), (0.0, 0.0), 9.0),
        RunningWater => ((300.0, 1600.0), (0.0, 0.0), 16.0),
        Speech => ((0.0, 0.0), (110.0, 220.0), 0.0),
        Dog => ((0.0, 0.0), (380.0, 650.0), 0.0),
        Cat => ((0.0, 0.0), (600.0, 950.0), 0.0),
        Dishes => ((0.0, 0.0), (3600.0, 6400.0), 5.0),
        AlarmBellRinging => ((0.0, 0.0), (2200.0, 3000.0), 7.0),
    };
    ArchetypeSpec {
        klass,
        family,
        band,
        pitch,
        duration,
        rate,
    }
}

/// Gaussian noise restricted to `[lo, hi]` Hz by zeroing FFT bins, scaled to
/// unit RMS.
pub(crate) fn band_noise(n: usize, sample_rate: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * sample_rate / n as f64;
        if f < lo || f > hi {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize_rms(&mut out, 1.0);
    out
}

pub(crate) fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = target / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Pink noise (Kellet's filter over white Gaussian noise), unit RMS.
pub(crate) fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let white: f64 = StandardNormal.sample(rng);
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        out.push(b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362);
        b[6] = white * 0.115926;
    }
    normalize_rms(&mut out, 1.0);
    out
}

fn fade(x: &mut [f64], sample_rate: f64) {
    let n = ((0.01 * sample_rate) as usize).min(x.len() / 2);
    for i in 0..n {
        let g = (i as f64 + 0.5) / n as f64;
        x[i] *= g;
        let j = x.len() - 1 - i;
        x[j] *= g;
    }
}

/// Harmonic tone following a per-sample fundamental `f0`, harmonic
/// amplitudes decaying as `1/h^tilt`, limited below 7.5 kHz.
fn harmonic_tone(f0: &[f64], sample_rate: f64, tilt: f64, max_harmonics: usize) -> Vec<f64> {
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(f0.len());
    for &f in f0 {
        phase += 2.0 * PI * f / sample_rate;
        if phase > 2.0 * PI * 1e6 {
            phase %= 2.0 * PI;
        }
        let mut s = 0.0;
        for h in 1..=max_harmonics {
            if f * h as f64 > 7500.0 {
                break;
            }
            s += (phase * h as f64).sin() / (h as f64).powf(tilt);
        }
        out.push(s);
    }
    out
}

/// Renders one event of `duration` seconds. Output is unit-RMS before the
/// fade; callers apply their own gain.
pub(crate) fn render(spec: &ArchetypeSpec, n: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = match spec.family {
        Family::StationaryNoise => band_noise(n, sample_rate, spec.band.0, spec.band.1, rng),
        Family::NoisePlusImpulses => {
            let mut x = band_noise(n, sample_rate, spec.band.0, spec.band.1, rng);
            let expected = spec.rate * n as f64 / sample_rate;
            let count = expected.round().max(1.0) as usize;
            let click_len = (0.006 * sample_rate) as usize;
            for _ in 0..count {
                let at = rng.gen_range(0..n.saturating_sub(click_len).max(1));
                let amp = rng.gen_range(2.5..4.0);
                for i in 0..click_len.min(n - at) {
                    let env = (-(i as f64) / (0.0015 * sample_rate)).exp();
                    let w: f64 = StandardNormal.sample(rng);
                    x[at + i] += amp * env * w;
                }
            }
            x
        }
        Family::PitchContourTone => {
            let base = rng.gen_range(spec.pitch.0..spec.pitch.1);
            let t = |i: usize| i as f64 / sample_rate;
            let (f0, envelope): (Vec<f64>, Vec<f64>) = match spec.klass {
                EventClass::Speech => {
                    let p1 = rng.gen_range(0.0..2.0 * PI);
                    let p2 = rng.gen_range(0.0..2.0 * PI);
                    let syll = rng.gen_range(3.5..5.5);
                    (0..n)
                        .map(|i| {
                            let ti = t(i);
                            let f = base * (1.0 + 0.22 * (2.0 * PI * 1.7 * ti + p1).sin() + 0.08 * (2.0 * PI * 4.3 * ti + p2).sin());
                            let e = 0.15 + 0.85 * (PI * syll * ti).sin().abs().powf(1.5);
                            (f, e)
                        })
                        .unzip()
                }
                EventClass::Dog => {
                    // repeated barks with a falling pitch inside each bark
                    let bark = rng.gen_range(0.18..0.28);
                    let gap = rng.gen_range(0.08..0.2);
                    let period = bark + gap;
                    (0..n)
                        .map(|i| {
                            let ph = t(i) % period;
                            if ph < bark {
                                let u = ph / bark;
                                let f = base * (1.25 - 0.5 * u);
                                let e = (PI * u).sin().powf(0.7);
                                (f, e)
                            } else {
                                (base, 0.0)
                            }
                        })
                        .unzip()
                }
                _ => {
                    // meow: rise then fall over the whole event
                    let dur = n as f64 / sample_rate;
                    (0..n)
                        .map(|i| {
                            let u = t(i) / dur;
                            let f = base * (0.8 + 0.45 * (PI * u).sin());
                            let e = (PI * u).sin().powf(0.8);
                            (f, e)
                        })
                        .unzip()
                }
            };
            let mut x = harmonic_tone(&f0, sample_rate, 1.2, 12);
            x.iter_mut().zip(&envelope).for_each(|(v, e)| *v *= e);
            x
        }
        Family::StableHighTone => {
            let pitch = rng.gen_range(spec.pitch.0..spec.pitch.1);
            let mut x = vec![0.0; n];
            let dur = n as f64 / sample_rate;
            match spec.klass {
                EventClass::AlarmBellRinging => {
                    // evenly spaced bursts at a single fixed pitch
                    let period = 1.0 / spec.rate;
                    let on = 0.6 * period;
                    for (i, v) in x.iter_mut().enumerate() {
                        let ti = i as f64 / sample_rate;
                        let ph = ti % period;
                        if ph < on {
                            let e = (PI * ph / on).sin();
                            let w = 2.0 * PI * pitch * ti;
                            *v = e * (w.sin() + 0.3 * (2.0 * w).sin());
                        }
                    }
                }
                _ => {
                    // clinks: exponentially decaying partials, stable pitch per clink
                    let count = (spec.rate * dur).round().max(1.0) as usize;
                    for c in 0..count {
                        let start = if c == 0 { 0 } else { rng.gen_range(0..n) };
                        let f = pitch * rng.gen_range(0.97..1.03);
                        let decay = rng.gen_range(0.04..0.09);
                        for (i, v) in x[start..].iter_mut().enumerate() {
                            let ti = i as f64 / sample_rate;
                            let e = (-ti / decay).exp();
                            if e < 1e-4 {
                                break;
                            }
                            let w = 2.0 * PI * f * ti;
                            *v += e * (w.sin() + 0.4 * (2.76 * w).sin());
                        }
                    }
                }
            }
            x
        }
    };
    normalize_rms(&mut x, 1.0);
    fade(&mut x, sample_rate);
    x
}
