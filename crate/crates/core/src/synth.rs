//! Synthetic sampling grids, subject families and archives.
//!
//! The subject family is a smooth parametric head model: a lateral shadow
//! that deepens with frequency, a pinna notch whose centre rises with
//! elevation, and an interference ripple whose depth and spatial detail
//! grow with frequency. It is meant for fixtures and desk-scale
//! experiments, not acoustics.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::direction_to_unit_vector;
use crate::data::{DatasetArchive, Direction, Ear, MagnitudeField, SubjectEar};
use crate::error::Result;
use crate::preprocess::FFT_SIZE;

/// Rings at the given elevations, each with `n_az` evenly spaced azimuths.
pub fn ring_grid(n_az: usize, elevations: &[f64]) -> Vec<Direction> {
    elevations
        .iter()
        .flat_map(|&e| (0..n_az).map(move |a| Direction::new(360.0 * a as f64 / n_az as f64, e)))
        .collect()
}

/// Rings whose azimuth count shrinks toward the poles, roughly equal-area.
pub fn graded_ring_grid(equator_n_az: usize, elevations: &[f64]) -> Vec<Direction> {
    let mut out = Vec::new();
    for &e in elevations {
        let n = ((equator_n_az as f64) * e.to_radians().cos()).round().max(1.0) as usize;
        out.extend((0..n).map(|a| Direction::new(360.0 * a as f64 / n as f64, e)));
    }
    out
}

/// Fibonacci-spiral directions, elevations restricted to `[el_min, el_max]`.
pub fn fibonacci_grid(n: usize, el_min: f64, el_max: f64) -> Vec<Direction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let (z0, z1) = (el_min.to_radians().sin(), el_max.to_radians().sin());
    (0..n)
        .map(|i| {
            let z = z0 + (z1 - z0) * (i as f64 + 0.5) / n as f64;
            let az = (golden * i as f64).to_degrees().rem_euclid(360.0);
            Direction::new(az, z.asin().to_degrees())
        })
        .collect()
}

/// Magnitudes from random order-3 polynomials of the unit vector whose
/// coefficients vary smoothly across frequency.
pub fn polynomial_field(directions: &[Direction], freq_hz: &[f64], seed: u64) -> MagnitudeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exps = Vec::new();
    for a in 0..=3u32 {
        for b in 0..=(3 - a) {
            for c in 0..=(3 - a - b) {
                exps.push([a, b, c]);
            }
        }
    }
    // two anchor coefficient sets blended along frequency
    let lo: Vec<f64> = exps.iter().map(|_| rng.random_range(-4.0..4.0)).collect();
    let hi: Vec<f64> = exps.iter().map(|_| rng.random_range(-4.0..4.0)).collect();
    let fmax = freq_hz.last().copied().unwrap_or(1.0);
    let values = Array2::from_shape_fn((directions.len(), freq_hz.len()), |(l, k)| {
        let v = direction_to_unit_vector(&directions[l]);
        let t = freq_hz[k] / fmax;
        exps.iter()
            .enumerate()
            .map(|(i, e)| {
                let m = v[0].powi(e[0] as i32) * v[1].powi(e[1] as i32) * v[2].powi(e[2] as i32);
                ((1.0 - t) * lo[i] + t * hi[i]) * m
            })
            .sum()
    });
    MagnitudeField::new(directions.to_vec(), values, freq_hz.to_vec()).expect("consistent shapes")
}

/// Parameters of one synthetic subject-ear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectParams {
    /// dB of contralateral attenuation at the top frequency.
    pub shadow_db: f64,
    /// Notch centre at zero elevation.
    pub notch_hz: f64,
    /// Notch centre shift per degree of elevation.
    pub notch_slope_hz: f64,
    pub notch_depth_db: f64,
    pub ripple_db: f64,
    /// Spatial wavenumber of the ripple at 16 kHz (radians per unit chord).
    pub ripple_k: f64,
    pub ripple_phase: f64,
    /// Axis of the ripple's interference pattern, as (azimuth, elevation) degrees.
    pub ripple_axis: (f64, f64),
    /// Broadband level offset.
    pub gain_db: f64,
}

impl SubjectParams {
    /// Draws a subject around the family mean; `spread` in `[0, 1]` scales
    /// the between-subject variation.
    pub fn sample(rng: &mut impl Rng, spread: f64) -> Self {
        let mut u = |lo: f64, hi: f64| {
            let mid = 0.5 * (lo + hi);
            mid + spread * rng.random_range(lo - mid..=hi - mid)
        };
        Self {
            shadow_db: u(10.0, 20.0),
            notch_hz: u(6500.0, 9000.0),
            notch_slope_hz: u(25.0, 45.0),
            notch_depth_db: u(8.0, 16.0),
            ripple_db: u(2.0, 4.0),
            ripple_k: u(14.0, 20.0),
            ripple_phase: u(0.0, 2.0 * PI),
            ripple_axis: (u(60.0, 120.0), u(-20.0, 20.0)),
            gain_db: u(-2.0, 2.0),
        }
    }

    /// dB magnitude of this subject's left ear at `d` and `f_hz`.
    pub fn magnitude_db(&self, d: &Direction, f_hz: f64) -> f64 {
        let v = direction_to_unit_vector(d);
        let t = (f_hz / 16000.0).min(1.5);
        // left ear faces +y
        let shadow = 0.5 * self.shadow_db * t * (v[1] - 1.0) * 0.5;
        let pinna_gain = 3.0 * t * v[0].max(0.0);
        let centre = self.notch_hz + self.notch_slope_hz * d.elevation_deg;
        let bw = 0.15 * centre;
        let front = 0.5 + 0.5 * v[0];
        let notch = -self.notch_depth_db * front * (-((f_hz - centre) / bw).powi(2)).exp();
        // interference along an axis: spatial detail grows with frequency
        let axis = direction_to_unit_vector(&Direction::new(self.ripple_axis.0, self.ripple_axis.1));
        let along = v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2];
        let ripple = self.ripple_db * t * (self.ripple_k * t * along + self.ripple_phase).cos();
        self.gain_db + shadow + pinna_gain + notch + ripple
    }

    pub fn field(&self, directions: &[Direction], freq_hz: &[f64]) -> MagnitudeField {
        let values = Array2::from_shape_fn((directions.len(), freq_hz.len()), |(l, k)| {
            self.magnitude_db(&directions[l], freq_hz[k])
        });
        MagnitudeField::new(directions.to_vec(), values, freq_hz.to_vec()).expect("consistent shapes")
    }
}

/// A dataset-level family: every subject shares a grid and a mild
/// dataset-specific bias, as different labs' rigs would produce.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub name: String,
    pub directions: Vec<Direction>,
    pub subjects: Vec<SubjectParams>,
}

impl SyntheticDataset {
    pub fn generate(name: &str, directions: Vec<Direction>, n_subjects: usize, seed: u64) -> Self {
        Self::generate_with_spread(name, directions, n_subjects, seed, 1.0)
    }

    /// As [`generate`](Self::generate) with between-subject variation scaled by `spread`.
    pub fn generate_with_spread(
        name: &str,
        directions: Vec<Direction>,
        n_subjects: usize,
        seed: u64,
        spread: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = rng.random_range(-1.0..1.0);
        let subjects = (0..n_subjects)
            .map(|_| {
                let mut p = SubjectParams::sample(&mut rng, spread);
                p.gain_db += bias;
                p
            })
            .collect();
        Self {
            name: name.to_string(),
            directions,
            subjects,
        }
    }

    pub fn fields(&self, freq_hz: &[f64]) -> Vec<MagnitudeField> {
        self.subjects.iter().map(|s| s.field(&self.directions, freq_hz)).collect()
    }
}

/// Impulse response of `n_taps` samples whose DFT magnitude at bin `k` of a
/// 256-point transform is `mag(k)`, with a pure delay as phase.
pub fn hrir_from_magnitudes(mag: impl Fn(usize) -> f64, n_taps: usize, delay: f64) -> Vec<f32> {
    let n = FFT_SIZE;
    let half = n / 2;
    let spec: Vec<(f64, f64)> = (0..=half)
        .map(|k| {
            let m = mag(k);
            let ph = -2.0 * PI * k as f64 * delay / n as f64;
            if k == 0 || k == half {
                (m * ph.cos().signum(), 0.0)
            } else {
                (m * ph.cos(), m * ph.sin())
            }
        })
        .collect();
    (0..n_taps.min(n))
        .map(|t| {
            let mut acc = spec[0].0 + spec[half].0 * if t % 2 == 0 { 1.0 } else { -1.0 };
            for (k, &(re, im)) in spec.iter().enumerate().take(half).skip(1) {
                let w = 2.0 * PI * (k * t) as f64 / n as f64;
                acc += 2.0 * (re * w.cos() - im * w.sin());
            }
            (acc / n as f64) as f32
        })
        .collect()
}

/// Raw archive of left and right ears sampled at 44.1 kHz with 256 taps.
/// The right ear is the mirror image of the left with a small asymmetry.
pub fn synthetic_archive(ds: &SyntheticDataset, sample_rate_hz: f64, seed: u64) -> Result<DatasetArchive> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ears = Vec::new();
    for (s, p) in ds.subjects.iter().enumerate() {
        for ear in [Ear::Left, Ear::Right] {
            let mut q = *p;
            if ear == Ear::Right {
                q.gain_db += rng.random_range(-0.5..0.5);
            }
            let mut h = Array2::<f32>::zeros((ds.directions.len(), FFT_SIZE));
            for (l, d) in ds.directions.iter().enumerate() {
                let seen_as = match ear {
                    Ear::Right => Direction {
                        azimuth_deg: (360.0 - d.azimuth_deg).rem_euclid(360.0),
                        ..*d
                    },
                    _ => *d,
                };
                let delay = 24.0 + 8.0 * direction_to_unit_vector(&seen_as)[1].abs();
                let row = hrir_from_magnitudes(
                    |k| {
                        let f = k as f64 * sample_rate_hz / FFT_SIZE as f64;
                        10f64.powf(q.magnitude_db(&seen_as, f.max(1.0)) / 20.0)
                    },
                    FFT_SIZE,
                    delay,
                );
                h.row_mut(l).assign(&ndarray::Array1::from(row));
            }
            ears.push(SubjectEar::new_raw(
                ds.name.clone(),
                format!("S{:03}", s + 1),
                ear,
                sample_rate_hz,
                ds.directions.clone(),
                h,
            )?);
        }
    }
    DatasetArchive::new(ds.name.clone(), sample_rate_hz, ears)
}
