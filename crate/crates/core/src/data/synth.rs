use std::f64::consts::TAU;

use super::recording::Recording;
use crate::engine::Rng;
use crate::error::{Error, Result};

pub const NOISE_STD: f64 = 0.1;
/// Activity segments last between these many seconds.
pub const SEGMENT_SECONDS: (f64, f64) = (8.0, 24.0);
/// Per-subject gain range.
pub const SUBJECT_GAIN: (f64, f64) = (0.8, 1.2);
/// Relative axis weights; rotated by class so each class loads the axes
/// differently.
const AXIS_WEIGHTS: [f64; 3] = [1.0, 0.7, 0.4];

/// Oscillation frequency of class `c` in Hz.
pub fn class_frequency(c: usize) -> f64 {
    1.0 + 2.0 * c as f64
}

/// Peak amplitude of class `c`.
pub fn class_amplitude(c: usize) -> f64 {
    1.0 + 0.1 * c as f64
}

/// Labelled synthetic recordings: each subject performs a sequence of
/// activity segments; during a segment of class `c` every axis carries a
/// sinusoid at [`class_frequency`] with a random phase, scaled by the class
/// amplitude, the subject gain and a class-dependent axis weight, plus white
/// noise.
pub fn synth_generate(
    num_subjects: usize,
    num_classes: usize,
    rate_hz: f64,
    duration_s: f64,
    rng: &mut Rng,
) -> Result<Vec<Recording>> {
    if num_classes < 2 {
        return Err(Error::Config(format!("synthetic data needs at least 2 classes, got {num_classes}")));
    }
    if !(rate_hz > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Config("rate and duration must be positive".into()));
    }
    let n = (rate_hz * duration_s).round() as usize;
    let width = (num_subjects.max(1) - 1).to_string().len();
    (0..num_subjects)
        .map(|s| {
            let mut r = rng.fork();
            let gain = r.uniform_range(SUBJECT_GAIN.0, SUBJECT_GAIN.1);
            let mut samples = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            let mut class = r.below(num_classes);
            while samples.len() < n {
                let seg = (r.uniform_range(SEGMENT_SECONDS.0, SEGMENT_SECONDS.1) * rate_hz).round() as usize;
                let seg = seg.clamp(1, n - samples.len());
                let f = class_frequency(class);
                let amp = gain * class_amplitude(class);
                let phase: [f64; 3] = [r.uniform() * TAU, r.uniform() * TAU, r.uniform() * TAU];
                for i in 0..seg {
                    let t = i as f64 / rate_hz;
                    let mut x = [0.0; 3];
                    for (j, v) in x.iter_mut().enumerate() {
                        let w = AXIS_WEIGHTS[(j + class) % 3];
                        *v = amp * w * (TAU * f * t + phase[j]).sin() + NOISE_STD * r.normal();
                    }
                    samples.push(x);
                    labels.push(class);
                }
                // next segment always switches activity
                class = (class + 1 + r.below(num_classes - 1)) % num_classes;
            }
            Recording::new(&format!("synth{s:0width$}"), rate_hz, samples, Some(labels))
        })
        .collect()
}
