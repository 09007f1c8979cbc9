use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{SensorWindow, SourceRole};

const NOISE_STD: f64 = 0.05;
const PHASE_JITTER: f64 = 0.2;
const SUBJECTS: usize = 4;

/// Deterministic labeled fixture: class `c` is a sinusoid of amplitude `c + 1`
/// and frequency `(c + 1) / L` cycles per sample on every channel, with a
/// per-channel phase offset, a small seeded phase jitter and Gaussian noise.
///
/// Windows are emitted class-major with segment ids `0..n_classes *
/// windows_per_class` and labels `activity_<c>`.
pub fn synth_dataset(
    n_classes: usize,
    windows_per_class: usize,
    channels: usize,
    window_len: usize,
    seed: u64,
) -> Vec<SensorWindow<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut out = Vec::with_capacity(n_classes * windows_per_class);
    let mut next_id = 0u64;
    for class in 0..n_classes {
        let amplitude = (class + 1) as f64;
        let freq = (class + 1) as f64 / window_len as f64;
        for w in 0..windows_per_class {
            let jitter = rng.random_range(0.0..PHASE_JITTER);
            let samples = (0..channels)
                .map(|ch| {
                    let phase = ch as f64 * PI / channels as f64 + jitter;
                    (0..window_len)
                        .map(|t| {
                            amplitude * (2.0 * PI * freq * t as f64 + phase).sin()
                                + noise.sample(&mut rng)
                        })
                        .collect()
                })
                .collect();
            out.push(SensorWindow {
                segment_id: next_id,
                subject_id: format!("subject_{}", w % SUBJECTS),
                label: Some(format!("activity_{class}")),
                samples,
                role: SourceRole::Indexing,
            });
            next_id += 1;
        }
    }
    out
}
